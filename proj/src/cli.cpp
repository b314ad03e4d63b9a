// Copyright 2026 The sparsecomm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sparsecomm/cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sparsecomm/dist_sim.hpp"
#include "sparsecomm/io.hpp"
#include "sparsecomm/latency.hpp"
#include "sparsecomm/trainer.hpp"

namespace sparsecomm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kVerifyTolerance = 1e-4;

double parse_number(const std::string& text, const char* what) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw FormatError(std::string(what) + ": '" + text + "' is not a number");
    return v;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) items.push_back(item);
    return items;
}

void emit(const std::string& out_path, const std::string& text, std::ostream& out) {
    if (out_path.empty() || out_path == "-")
        out << text;
    else
        io::write_text(out_path, text);
}

struct SystemFlags {
    std::string system = "dong2022";
    std::optional<int> nodes;
    std::string mode;

    SystemConfig resolve() const {
        SystemConfig s = io::resolve_system(system);
        if (nodes) s.nodes = *nodes;
        if (!mode.empty()) {
            try {
                s.mode = latency_mode_from_string(mode);
            } catch (const DomainError& e) {
                throw FormatError(e.what());
            }
        }
        s.validate();
        return s;
    }

    void add_to(CLI::App* cmd) {
        cmd->add_option("--system", system, "System preset name or JSON file")->capture_default_str();
        cmd->add_option("--nodes", nodes, "Node count N (overrides the system file)");
        cmd->add_option("--mode", mode, "Latency mode")->check(CLI::IsMember({"pipeline", "waiting"}));
    }
};

std::string checkpoint_name(int stage, double p) {
    return "stage_" + std::to_string(stage) + "_p" + format_double(p);
}

Dataset dataset_from_json(const json& j, std::uint64_t default_seed) {
    const std::string kind = j.value("kind", std::string("synthetic"));
    if (kind == "synthetic") {
        SyntheticConfig sc;
        sc.seed = j.value("seed", default_seed);
        sc.classes = j.value("classes", sc.classes);
        sc.train_per_class = j.value("train_per_class", sc.train_per_class);
        sc.test_per_class = j.value("test_per_class", sc.test_per_class);
        sc.noise_stddev = j.value("noise_stddev", sc.noise_stddev);
        try {
            return make_synthetic_dataset(sc);
        } catch (const DomainError& e) {
            throw FormatError(std::string("dataset: ") + e.what());
        }
    }
    if (kind == "idx") {
        Dataset d;
        Shape3 test_shape;
        load_idx(j.at("train_images").get<std::string>(), j.at("train_labels").get<std::string>(),
                 d.train_images, d.train_labels, d.image_shape);
        load_idx(j.at("test_images").get<std::string>(), j.at("test_labels").get<std::string>(),
                 d.test_images, d.test_labels, test_shape);
        if (test_shape != d.image_shape) throw FormatError("dataset: train and test image shapes differ");
        d.classes = j.value("classes", 10);
        for (int label : d.train_labels)
            if (label < 0 || label >= d.classes) throw FormatError("dataset: label outside [0, classes)");
        return d;
    }
    throw FormatError("dataset: unknown kind '" + kind + "'");
}

// ---- profile ---------------------------------------------------------------

struct ProfileArgs {
    std::string model = "builtin:resnet50";
    SystemFlags sys;
    std::string sparsity = "0";
    std::string mask;
    std::string out;
};

int cmd_profile(const ProfileArgs& a, std::ostream& out) {
    const ModelSpec model = io::resolve_model(a.model);
    SystemConfig system = a.sys.resolve();
    LatencyReport report;
    if (!a.mask.empty()) {
        const BlockMask mask = io::load_mask(a.mask, model);
        if (a.sys.nodes && *a.sys.nodes != mask.nodes())
            throw FormatError("--nodes disagrees with the mask's node count");
        system.nodes = mask.nodes();
        report = model_latency(model, mask, system);
    } else if (a.sparsity == "equilibrium") {
        const EquilibriumProfile profile = equilibrium_profile(model, system);
        report = model_latency(model, profile.per_layer(model.layers.size()), system);
    } else {
        report = model_latency(model, parse_number(a.sparsity, "--sparsity"), system);
    }
    std::ostringstream csv;
    write_latency_csv(csv, report);
    emit(a.out, csv.str(), out);
    if (!a.out.empty() && a.out != "-")
        out << "total latency (" << to_string(system.mode) << "): " << format_double(report.total(system.mode))
            << " s\n";
    return kExitOk;
}

// ---- equilibrium -------------------------------------------------------------

struct EquilibriumArgs {
    std::string model = "builtin:resnet50";
    SystemFlags sys;
    std::string out;
};

int cmd_equilibrium(const EquilibriumArgs& a, std::ostream& out) {
    const ModelSpec model = io::resolve_model(a.model);
    const SystemConfig system = a.sys.resolve();
    const EquilibriumProfile profile = equilibrium_profile(model, system);
    std::ostringstream csv;
    write_equilibrium_csv(csv, profile);
    emit(a.out, csv.str(), out);
    if (!a.out.empty() && a.out != "-")
        out << "mean equilibrium S_comm: " << format_double(profile.mean) << " (first half "
            << format_double(profile.first_half_mean) << ", second half "
            << format_double(profile.second_half_mean) << ")\n";
    return kExitOk;
}

// ---- prune -------------------------------------------------------------------

struct PruneArgs {
    std::string model;
    std::string weights;
    std::string strategy = "l1";
    double q = 0.0;
    int nodes = 2;
    std::uint64_t seed = 0;
    std::string previous;
    std::string plan;
    std::string out;
};

int cmd_prune(const PruneArgs& a, std::ostream& out) {
    const ModelSpec model = io::resolve_model(a.model);
    validate_model(model, a.nodes);
    const WeightStore weights = io::load_weights(a.weights, model);
    const SelectStrategy strategy = select_strategy_from_string(a.strategy);
    std::optional<BlockMask> previous;
    if (!a.previous.empty()) {
        previous = io::load_mask(a.previous, model);
        if (previous->nodes() != a.nodes) throw FormatError("--previous mask uses a different node count");
    }
    const BlockMask mask =
        select_model(model, weights, a.nodes, a.q, strategy, a.seed, previous ? &*previous : nullptr);
    io::save_mask(a.out, mask);
    if (!a.plan.empty()) io::write_text(a.plan, io::plan_to_json(build_comm_plan(model, mask)));
    for (const LayerSparsity& s : sparsity_stats(mask)) {
        out << "layer " << s.layer_id << ": sent " << s.sent_messages << "/" << s.possible_messages
            << ", S_comm=" << format_double(s.s_comm.value()) << ", S_comp=" << format_double(s.s_comp.value())
            << "\n";
    }
    return kExitOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string model;
    std::optional<std::uint64_t> seed;
    std::optional<int> nodes;
    std::string strategy;
    std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    json raw = json::object();
    TrainConfig config;
    if (!a.config.empty()) {
        const std::string text = io::read_text(a.config);
        config = io::train_config_from_json(text);
        raw = json::parse(text);
    }
    if (a.seed) config.seed = *a.seed;
    if (a.nodes) config.nodes = *a.nodes;
    if (!a.strategy.empty()) config.strategy = select_strategy_from_string(a.strategy);
    try {
        config.validate();
    } catch (const DomainError& e) {
        throw FormatError(e.what());
    }
    std::string model_ref = a.model;
    if (model_ref.empty()) model_ref = raw.value("model", std::string("builtin:toy_cnn"));
    const ModelSpec model = io::resolve_model(model_ref);
    validate_model(model, config.nodes);
    const Dataset data = dataset_from_json(raw.value("dataset", json::object()), config.seed);

    fs::create_directories(a.out);
    const fs::path dir(a.out);
    io::write_text(dir / "train_config.json", io::train_config_to_json(config));

    std::ostringstream metrics;
    metrics << "stage,p,epoch,train_loss,test_accuracy\n";
    const auto log = [&](const EpochRecord& r) {
        metrics << r.stage << ',' << format_double(r.p) << ',' << r.epoch << ',' << format_double(r.train_loss)
                << ',' << format_double(r.test_accuracy) << '\n';
    };
    const std::vector<StageCheckpoint> checkpoints = iterative_disco(model, data, config, log);
    io::write_text(dir / "metrics.csv", metrics.str());
    for (const StageCheckpoint& c : checkpoints) {
        const std::string name = checkpoint_name(c.stage, c.p);
        io::save_weights(dir / (name + ".weights"), c.weights);
        io::save_mask(dir / (name + ".mask.json"), c.mask);
        out << name << ": accuracy " << format_double(c.accuracy) << "\n";
    }
    return kExitOk;
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
    std::string model;
    std::string weights;
    std::string mask;
    std::string input;
    std::uint64_t seed = 0;
    SystemFlags sys;
    std::string schedule = "sequential";
    bool verify = false;
    std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
    const ModelSpec model = io::resolve_model(a.model);
    const WeightStore weights = io::load_weights(a.weights, model);
    SystemConfig system = a.sys.resolve();
    BlockMask mask;
    if (!a.mask.empty()) {
        mask = io::load_mask(a.mask, model);
        if (a.sys.nodes && *a.sys.nodes != mask.nodes())
            throw FormatError("--nodes disagrees with the mask's node count");
        system.nodes = mask.nodes();
    } else {
        validate_model(model, system.nodes);
        mask = BlockMask::dense(model, system.nodes);
    }

    Tensor x;
    if (!a.input.empty()) {
        x = io::load_tensor(a.input);
    } else {
        x = Tensor(model.input);
        std::mt19937_64 rng(a.seed);
        std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
        for (float& v : x.data) v = dist(rng);
    }

    const Schedule schedule = a.schedule == "threaded"   ? Schedule::threaded
                              : a.schedule == "reversed" ? Schedule::reversed
                                                         : Schedule::sequential;
    const auto shards = partition_weights(model, weights, mask);
    const CommPlan plan = build_comm_plan(model, mask);
    const DistributedResult result = run_distributed(model, shards, plan, x, system, schedule);
    const LatencyReport timing = result.trace.aggregate(model, system);

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        io::save_tensor(fs::path(a.out) / "output.bin", result.output);
        std::ostringstream csv;
        write_trace_csv(csv, result.trace);
        io::write_text(fs::path(a.out) / "trace.csv", csv.str());
    }
    out << "nodes=" << system.nodes << " " << to_string(system.mode)
        << "_latency_s=" << format_double(timing.total(system.mode)) << "\n";
    if (a.verify) {
        const Tensor central = forward_model(model, weights, mask, x);
        const double err = max_relative_error(result.output, central);
        out << "max_relative_error=" << format_double(err) << "\n";
        if (!(err <= kVerifyTolerance)) {
            out << "verification FAILED (tolerance " << format_double(kVerifyTolerance) << ")\n";
            return kExitVerifyFailed;
        }
    }
    return kExitOk;
}

// ---- report ------------------------------------------------------------------

struct SweepSpec {
    std::string model = "builtin:resnet50";
    std::string system = "dong2022";
    std::vector<int> nodes{2};
    std::vector<std::string> sparsity{"0"};
    std::vector<std::string> strategies{"l1"};
    std::string mode = "pipeline";
    std::string weights;
    std::string metrics;
    std::uint64_t seed = 0;
    std::string out;
};

SweepSpec sweep_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("sweep: invalid JSON: ") + e.what());
    }
    SweepSpec s;
    try {
        s.model = j.value("model", s.model);
        s.system = j.value("system", s.system);
        if (j.contains("nodes")) s.nodes = j.at("nodes").get<std::vector<int>>();
        if (j.contains("sparsity")) {
            const json& sp = j.at("sparsity");
            s.sparsity.clear();
            if (sp.is_string()) {
                s.sparsity.push_back(sp.get<std::string>());
            } else {
                for (const json& v : sp) s.sparsity.push_back(v.is_string() ? v.get<std::string>() : format_double(v.get<double>()));
            }
        }
        if (j.contains("strategies")) s.strategies = j.at("strategies").get<std::vector<std::string>>();
        s.mode = j.value("mode", s.mode);
        s.weights = j.value("weights", s.weights);
        s.metrics = j.value("metrics", s.metrics);
        s.seed = j.value("seed", s.seed);
        s.out = j.value("out", s.out);
    } catch (const json::exception& e) {
        throw FormatError(std::string("sweep: ") + e.what());
    }
    if (s.nodes.empty() || s.sparsity.empty() || s.strategies.empty())
        throw FormatError("sweep: nodes, sparsity and strategies must be non-empty");
    return s;
}

// Final test accuracy per prune fraction, read from a training metrics log.
std::vector<std::pair<double, double>> read_accuracy(const std::string& path) {
    std::vector<std::pair<double, double>> rows;
    std::istringstream in(io::read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != "stage,p,epoch,train_loss,test_accuracy") throw FormatError("'" + path + "' is not a metrics log");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_list(line);
        if (f.size() != 5) throw FormatError("'" + path + "': malformed row '" + line + "'");
        const double p = parse_number(f[1], "metrics p");
        const double acc = parse_number(f[4], "metrics accuracy");
        if (!rows.empty() && rows.back().first == p)
            rows.back().second = acc;
        else
            rows.emplace_back(p, acc);
    }
    return rows;
}

int cmd_report(SweepSpec s, const std::string& sweep_path, const std::string& out_override, std::ostream& out) {
    if (!sweep_path.empty()) s = sweep_from_json(io::read_text(sweep_path));
    if (!out_override.empty()) s.out = out_override;
    const ModelSpec model = io::resolve_model(s.model);
    const SystemConfig base = io::resolve_system(s.system);
    const LatencyMode mode = latency_mode_from_string(s.mode);
    std::optional<WeightStore> weights;
    if (!s.weights.empty()) weights = io::load_weights(s.weights, model);
    const auto accuracy = s.metrics.empty() ? std::vector<std::pair<double, double>>{} : read_accuracy(s.metrics);

    std::ostringstream csv;
    csv << "model,system,nodes,strategy,sparsity,mode,mean_S_comm,mean_S_comp,L_comm_s,L_comp_s,latency_s,"
           "speedup,accuracy\n";
    for (int n : s.nodes) {
        SystemConfig system = base;
        system.nodes = n;
        system.mode = mode;
        system.validate();
        validate_model(model, n);
        const double dense = model_latency(model, 0.0, system).total(mode);
        for (const std::string& strategy_name : s.strategies) {
            const SelectStrategy strategy = select_strategy_from_string(strategy_name);
            for (const std::string& sp : s.sparsity) {
                LatencyReport r;
                std::optional<double> q;
                if (sp == "equilibrium") {
                    const EquilibriumProfile profile = equilibrium_profile(model, system);
                    r = model_latency(model, profile.per_layer(model.layers.size()), system);
                } else {
                    q = parse_number(sp, "sparsity");
                    if (weights)
                        r = model_latency(model, select_model(model, *weights, n, *q, strategy, s.seed), system);
                    else
                        r = model_latency(model, *q, system);
                }
                double sum_comm = 0.0, sum_comp = 0.0;
                int counted = 0;
                for (const LayerLatency& l : r.layers) {
                    if (!model.layers[l.layer_id].sparsifiable) continue;
                    sum_comm += l.s_comm;
                    sum_comp += l.s_comp;
                    ++counted;
                }
                std::string acc;
                if (q)
                    for (const auto& [p, value] : accuracy)
                        if (std::fabs(p - *q) < 1e-12) acc = format_double(value);
                const double total = r.total(mode);
                csv << model.name << ',' << system.name << ',' << n << ',' << to_string(strategy) << ',' << sp << ','
                    << to_string(mode) << ',' << format_double(counted ? sum_comm / counted : 0.0) << ','
                    << format_double(counted ? sum_comp / counted : 0.0) << ',' << format_double(r.total_comm) << ','
                    << format_double(r.total_comp) << ',' << format_double(total) << ','
                    << format_double(total > 0.0 ? dense / total : 0.0) << ',' << acc << '\n';
            }
        }
    }
    emit(s.out, csv.str(), out);
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Distributed DNN inference with sparse inter-node communication"};
    app.name("sparsecomm");
    app.require_subcommand(1);

    ProfileArgs profile;
    auto* p = app.add_subcommand("profile", "Per-layer latency model CSV");
    p->add_option("--model", profile.model, "Model manifest or builtin:<name>")->capture_default_str();
    profile.sys.add_to(p);
    p->add_option("--sparsity", profile.sparsity, "Uniform S_comm, or 'equilibrium'")->capture_default_str();
    p->add_option("--mask", profile.mask, "Mask file (overrides --sparsity)");
    p->add_option("--out", profile.out, "Output CSV (default stdout)");

    EquilibriumArgs eq;
    auto* e = app.add_subcommand("equilibrium", "Per-layer equilibrium sparsity CSV");
    e->add_option("--model", eq.model, "Model manifest or builtin:<name>")->capture_default_str();
    eq.sys.add_to(e);
    e->add_option("--out", eq.out, "Output CSV (default stdout)");

    PruneArgs prune;
    auto* pr = app.add_subcommand("prune", "Select sub-rows and write a mask file");
    pr->add_option("--model", prune.model, "Model manifest or builtin:<name>")->required();
    pr->add_option("--weights", prune.weights, "Weights file")->required();
    pr->add_option("--strategy", prune.strategy, "l1 (alias disco_l1) or random")->capture_default_str();
    pr->add_option("--sparsity", prune.q, "Off-diagonal prune fraction q")->required();
    pr->add_option("--nodes", prune.nodes, "Node count N")->capture_default_str();
    pr->add_option("--seed", prune.seed, "Seed for random selection")->capture_default_str();
    pr->add_option("--previous", prune.previous, "Mask whose pruned sub-rows stay pruned");
    pr->add_option("--plan", prune.plan, "Also write the communication plan JSON here");
    pr->add_option("--out", prune.out, "Output mask file")->required();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Dense training followed by the prune-and-finetune schedule");
    t->add_option("--config", train.config, "Training config JSON");
    t->add_option("--model", train.model, "Model manifest or builtin:<name> (default builtin:toy_cnn)");
    t->add_option("--seed", train.seed, "Override the config seed");
    t->add_option("--nodes", train.nodes, "Override the config node count");
    t->add_option("--strategy", train.strategy, "Override the selection strategy");
    t->add_option("--out", train.out, "Checkpoint directory")->required();

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Run the N-node simulator");
    s->add_option("--model", sim.model, "Model manifest or builtin:<name>")->required();
    s->add_option("--weights", sim.weights, "Weights file")->required();
    s->add_option("--mask", sim.mask, "Mask file (default: dense)");
    s->add_option("--input", sim.input, "Input tensor file (default: seeded random)");
    s->add_option("--seed", sim.seed, "Seed for the random input")->capture_default_str();
    sim.sys.add_to(s);
    s->add_option("--schedule", sim.schedule, "Node execution order")
        ->check(CLI::IsMember({"sequential", "reversed", "threaded"}))
        ->capture_default_str();
    s->add_flag("--verify", sim.verify, "Compare against the centralized forward pass");
    s->add_option("--out", sim.out, "Directory for output.bin and trace.csv");

    SweepSpec sweep;
    std::string sweep_path, report_out, nodes_list, sparsity_list, strategy_list;
    auto* r = app.add_subcommand("report", "Combined accuracy and latency sweep CSV");
    r->add_option("--sweep", sweep_path, "Sweep spec JSON (overrides the other flags)");
    r->add_option("--model", sweep.model, "Model manifest or builtin:<name>")->capture_default_str();
    r->add_option("--system", sweep.system, "System preset name or JSON file")->capture_default_str();
    r->add_option("--nodes", nodes_list, "Comma-separated node counts");
    r->add_option("--sparsity", sparsity_list, "Comma-separated S_comm values or 'equilibrium'");
    r->add_option("--strategy", strategy_list, "Comma-separated strategies");
    r->add_option("--mode", sweep.mode, "Latency mode")->check(CLI::IsMember({"pipeline", "waiting"}));
    r->add_option("--weights", sweep.weights, "Weights used to select real masks");
    r->add_option("--metrics", sweep.metrics, "Training metrics CSV providing accuracy");
    r->add_option("--seed", sweep.seed, "Seed for random selection")->capture_default_str();
    r->add_option("--out", report_out, "Output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitBadInput;
    }

    try {
        if (*p) return cmd_profile(profile, out);
        if (*e) return cmd_equilibrium(eq, out);
        if (*pr) return cmd_prune(prune, out);
        if (*t) return cmd_train(train, out);
        if (*s) return cmd_simulate(sim, out);
        if (*r) {
            if (!nodes_list.empty()) {
                sweep.nodes.clear();
                for (const auto& v : split_list(nodes_list))
                    sweep.nodes.push_back(static_cast<int>(parse_number(v, "--nodes")));
            }
            if (!sparsity_list.empty()) sweep.sparsity = split_list(sparsity_list);
            if (!strategy_list.empty()) sweep.strategies = split_list(strategy_list);
            return cmd_report(sweep, sweep_path, report_out, out);
        }
    } catch (const FormatError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitBadInput;
    } catch (const ShapeError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitBadInput;
    } catch (const DomainError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitBadInput;
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitBadInput;
    } catch (const json::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace sparsecomm::cli
