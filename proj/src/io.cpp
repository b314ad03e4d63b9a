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

#include "sparsecomm/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace sparsecomm::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
    if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("field '") + key + "': " + e.what());
    }
}

template <typename T>
T get_field(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return get_field<T>(j, key);
}

json parse(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string(what) + ": invalid JSON: " + e.what());
    }
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

void put_bytes(std::ostream& os, std::uint64_t v, int n) {
    std::array<char, 8> b{};
    for (int k = 0; k < n; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
    os.write(b.data(), n);
}

std::uint64_t get_bytes(std::istream& is, int n, const char* what) {
    std::array<unsigned char, 8> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), n))
        throw FormatError(std::string("file truncated while reading ") + what);
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= std::uint64_t{b[k]} << (8 * k);
    return v;
}

void put_floats(std::ostream& os, const std::vector<float>& values) {
    for (float f : values) put_bytes(os, std::bit_cast<std::uint32_t>(f), 4);
}

void get_floats(std::istream& is, std::vector<float>& values, const char* what) {
    for (float& f : values) f = std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(is, 4, what)));
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ofstream os(path, std::ios::out | std::ios::trunc | mode);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ifstream is(path, std::ios::in | mode);
    if (!is) throw FormatError("cannot open '" + path.string() + "'");
    return is;
}

ordered_json blocks_json(int nodes, const std::function<std::vector<int>(int, int)>& features) {
    ordered_json blocks = ordered_json::array();
    for (int i = 0; i < nodes; ++i)
        for (int j = 0; j < nodes; ++j)
            if (i != j) blocks.push_back({{"src", i}, {"dst", j}, {"features", features(i, j)}});
    return blocks;
}

}  // namespace

std::string model_to_json(const ModelSpec& model) {
    ordered_json j;
    j["name"] = model.name;
    j["input_shape"] = {model.input.channels, model.input.height, model.input.width};
    j["num_classes"] = model.num_classes;
    ordered_json layers = ordered_json::array();
    for (const LayerSpec& l : model.layers) {
        ordered_json e;
        e["id"] = l.id;
        e["kind"] = to_string(l.kind);
        e["in_features"] = l.in_features;
        e["out_features"] = l.out_features;
        e["kernel_w"] = l.kernel_w;
        e["kernel_h"] = l.kernel_h;
        e["in_height"] = l.in_height;
        e["in_width"] = l.in_width;
        e["stride"] = l.stride;
        e["padding"] = l.padding;
        e["residual_from"] = l.residual_from ? ordered_json(*l.residual_from) : ordered_json(nullptr);
        e["sparsifiable"] = l.sparsifiable;
        if (l.input_from) e["input_from"] = *l.input_from;
        e["relu"] = l.relu;
        if (l.kind == LayerKind::pool) e["pool_type"] = l.pool_type == PoolType::max ? "max" : "avg";
        if (l.kind == LayerKind::feature_matmul) {
            e["matmul_m"] = l.matmul_m;
            e["matmul_k"] = l.matmul_k;
            e["matmul_n"] = l.matmul_n;
        }
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    return dump(j);
}

ModelSpec model_from_json(const std::string& text) {
    const json j = parse(text, "model manifest");
    ModelSpec m;
    m.name = get_field<std::string>(j, "name", "");
    const auto shape = get_field<std::vector<int>>(j, "input_shape");
    if (shape.size() != 3) throw FormatError("input_shape must hold [channels, height, width]");
    m.input = {shape[0], shape[1], shape[2]};
    m.num_classes = get_field<int>(j, "num_classes", 0);
    if (!j.contains("layers") || !j["layers"].is_array()) throw FormatError("missing array 'layers'");
    for (const json& e : j["layers"]) {
        LayerSpec l;
        l.id = get_field<int>(e, "id");
        l.kind = layer_kind_from_string(get_field<std::string>(e, "kind"));
        l.in_features = get_field<int>(e, "in_features");
        l.out_features = get_field<int>(e, "out_features");
        l.kernel_w = get_field<int>(e, "kernel_w", 1);
        l.kernel_h = get_field<int>(e, "kernel_h", 1);
        l.in_height = get_field<int>(e, "in_height", 1);
        l.in_width = get_field<int>(e, "in_width", 1);
        l.stride = get_field<int>(e, "stride", 1);
        l.padding = get_field<int>(e, "padding", 0);
        if (e.contains("residual_from") && !e["residual_from"].is_null())
            l.residual_from = get_field<int>(e, "residual_from");
        l.sparsifiable = get_field<bool>(e, "sparsifiable", false);
        if (e.contains("input_from") && !e["input_from"].is_null())
            l.input_from = get_field<int>(e, "input_from");
        l.relu = get_field<bool>(e, "relu", false);
        const std::string pool = get_field<std::string>(e, "pool_type", "max");
        if (pool == "max")
            l.pool_type = PoolType::max;
        else if (pool == "avg")
            l.pool_type = PoolType::avg;
        else
            throw FormatError("layer " + std::to_string(l.id) + ": unknown pool_type '" + pool + "'");
        l.matmul_m = get_field<std::int64_t>(e, "matmul_m", 0);
        l.matmul_k = get_field<std::int64_t>(e, "matmul_k", 0);
        l.matmul_n = get_field<std::int64_t>(e, "matmul_n", 0);
        m.layers.push_back(l);
    }
    validate_model(m);
    return m;
}

void save_model(const std::filesystem::path& path, const ModelSpec& model) {
    write_text(path, model_to_json(model));
}

ModelSpec load_model(const std::filesystem::path& path) { return model_from_json(read_text(path)); }

ModelSpec resolve_model(const std::string& ref) {
    if (ref == "builtin:resnet50") return resnet50_shapes();
    if (ref == "builtin:toy_cnn") return toy_cnn_shapes();
    if (ref.starts_with("builtin:")) throw FormatError("unknown built-in model '" + ref + "'");
    return load_model(ref);
}

void write_weights(std::ostream& os, const WeightStore& weights) {
    os.write("DISCOWT1", 8);
    put_bytes(os, weights.layers().size(), 4);
    for (const LayerWeights& lw : weights.layers()) {
        put_bytes(os, static_cast<std::uint32_t>(lw.layer_id), 4);
        put_bytes(os, lw.weights.size(), 8);
        put_floats(os, lw.weights);
        put_floats(os, lw.bias);
    }
}

WeightStore read_weights(std::istream& is, const ModelSpec& model) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, "DISCOWT1", 8) != 0)
        throw FormatError("not a weights file (bad magic)");
    WeightStore store(model);
    const auto count = get_bytes(is, 4, "layer count");
    if (count != store.layers().size())
        throw FormatError("weights file holds " + std::to_string(count) + " layers, model has " +
                          std::to_string(store.layers().size()));
    for (LayerWeights& lw : store.layers()) {
        const auto id = get_bytes(is, 4, "layer id");
        if (id != static_cast<std::uint64_t>(lw.layer_id))
            throw FormatError("expected weights of layer " + std::to_string(lw.layer_id) + ", got " +
                              std::to_string(id));
        const auto n = get_bytes(is, 8, "value count");
        if (n != lw.weights.size())
            throw FormatError("layer " + std::to_string(lw.layer_id) + ": expected " +
                              std::to_string(lw.weights.size()) + " weights, got " + std::to_string(n));
        get_floats(is, lw.weights, "weights");
        get_floats(is, lw.bias, "bias");
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in weights file");
    return store;
}

void save_weights(const std::filesystem::path& path, const WeightStore& weights) {
    auto os = open_out(path, std::ios::binary);
    write_weights(os, weights);
    if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

WeightStore load_weights(const std::filesystem::path& path, const ModelSpec& model) {
    auto is = open_in(path, std::ios::binary);
    return read_weights(is, model);
}

std::string mask_to_json(const BlockMask& mask) {
    ordered_json j;
    j["nodes"] = mask.nodes();
    ordered_json layers = ordered_json::array();
    for (std::size_t id = 0; id < mask.layer_count(); ++id) {
        const LayerMask* lm = mask.layer(static_cast<int>(id));
        if (!lm) continue;
        ordered_json e;
        e["layer_id"] = lm->layer_id();
        e["in_features"] = lm->in_features();
        e["out_features"] = lm->out_features();
        e["blocks"] = blocks_json(mask.nodes(), [&](int i, int dst) {
            std::vector<int> kept;
            for (int f = i * lm->in_per_node(); f < (i + 1) * lm->in_per_node(); ++f)
                if (lm->subrow_kept(f, dst)) kept.push_back(f);
            return kept;
        });
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    return dump(j);
}

BlockMask mask_from_json(const std::string& text, const ModelSpec& model) {
    const json j = parse(text, "mask");
    const int nodes = get_field<int>(j, "nodes");
    if (nodes < 1) throw FormatError("mask: nodes must be at least 1");
    validate_model(model, nodes);
    BlockMask mask = BlockMask::dense(model, nodes);
    if (!j.contains("layers") || !j["layers"].is_array()) throw FormatError("mask: missing array 'layers'");
    for (const json& e : j["layers"]) {
        const int id = get_field<int>(e, "layer_id");
        LayerMask* lm = (id >= 0 && id < static_cast<int>(mask.layer_count())) ? mask.layer(id) : nullptr;
        if (!lm) throw FormatError("mask: layer " + std::to_string(id) + " is not sparsifiable");
        if (get_field<int>(e, "in_features") != lm->in_features() ||
            get_field<int>(e, "out_features") != lm->out_features())
            throw FormatError("mask: layer " + std::to_string(id) + " dimensions disagree with the model");
        std::vector<bool> seen(static_cast<std::size_t>(nodes) * nodes, false);
        for (int f = 0; f < lm->in_features(); ++f)
            for (int dst = 0; dst < nodes; ++dst)
                if (dst != lm->in_owner(f)) lm->set_subrow(f, dst, false);
        if (!e.contains("blocks") || !e["blocks"].is_array())
            throw FormatError("mask: layer " + std::to_string(id) + " has no 'blocks'");
        for (const json& b : e["blocks"]) {
            const int src = get_field<int>(b, "src");
            const int dst = get_field<int>(b, "dst");
            if (src < 0 || dst < 0 || src >= nodes || dst >= nodes || src == dst)
                throw FormatError("mask: layer " + std::to_string(id) + " has invalid block (" +
                                  std::to_string(src) + ", " + std::to_string(dst) + ")");
            if (seen[static_cast<std::size_t>(src) * nodes + dst])
                throw FormatError("mask: duplicate block in layer " + std::to_string(id));
            seen[static_cast<std::size_t>(src) * nodes + dst] = true;
            int last = -1;
            for (int f : get_field<std::vector<int>>(b, "features")) {
                if (f <= last || f < 0 || f >= lm->in_features() || lm->in_owner(f) != src)
                    throw FormatError("mask: layer " + std::to_string(id) + " block (" +
                                      std::to_string(src) + ", " + std::to_string(dst) +
                                      ") lists feature " + std::to_string(f) +
                                      " out of order or outside the source node");
                lm->set_subrow(f, dst, true);
                last = f;
            }
        }
        for (int i = 0; i < nodes; ++i)
            for (int dst = 0; dst < nodes; ++dst)
                if (i != dst && !seen[static_cast<std::size_t>(i) * nodes + dst])
                    throw FormatError("mask: layer " + std::to_string(id) + " is missing block (" +
                                      std::to_string(i) + ", " + std::to_string(dst) + ")");
    }
    mask.check(model);
    return mask;
}

void save_mask(const std::filesystem::path& path, const BlockMask& mask) {
    write_text(path, mask_to_json(mask));
}

BlockMask load_mask(const std::filesystem::path& path, const ModelSpec& model) {
    return mask_from_json(read_text(path), model);
}

std::string plan_to_json(const CommPlan& plan) {
    ordered_json j;
    j["nodes"] = plan.nodes;
    ordered_json layers = ordered_json::array();
    for (const LayerPlan& lp : plan.layers) {
        ordered_json e;
        e["layer_id"] = lp.layer_id;
        e["exchanges"] = lp.exchanges;
        if (lp.exchanges)
            e["blocks"] = blocks_json(plan.nodes, [&](int i, int dst) { return lp.to(i, dst, plan.nodes); });
        layers.push_back(std::move(e));
    }
    j["layers"] = std::move(layers);
    return dump(j);
}

CommPlan plan_from_json(const std::string& text) {
    const json j = parse(text, "plan");
    CommPlan plan;
    plan.nodes = get_field<int>(j, "nodes");
    if (plan.nodes < 1) throw FormatError("plan: nodes must be at least 1");
    const std::size_t pairs = static_cast<std::size_t>(plan.nodes) * plan.nodes;
    if (!j.contains("layers") || !j["layers"].is_array()) throw FormatError("plan: missing array 'layers'");
    for (const json& e : j["layers"]) {
        LayerPlan lp;
        lp.layer_id = get_field<int>(e, "layer_id");
        if (lp.layer_id != static_cast<int>(plan.layers.size()))
            throw FormatError("plan: layer ids must be consecutive from 0");
        lp.exchanges = get_field<bool>(e, "exchanges", false);
        lp.sends.assign(pairs, {});
        if (lp.exchanges) {
            if (!e.contains("blocks") || !e["blocks"].is_array())
                throw FormatError("plan: layer " + std::to_string(lp.layer_id) + " has no 'blocks'");
            for (const json& b : e["blocks"]) {
                const int src = get_field<int>(b, "src");
                const int dst = get_field<int>(b, "dst");
                if (src < 0 || dst < 0 || src >= plan.nodes || dst >= plan.nodes || src == dst)
                    throw FormatError("plan: invalid node pair in layer " + std::to_string(lp.layer_id));
                auto features = get_field<std::vector<int>>(b, "features");
                for (std::size_t k = 1; k < features.size(); ++k)
                    if (features[k] <= features[k - 1])
                        throw FormatError("plan: feature list of layer " + std::to_string(lp.layer_id) +
                                          " is not strictly increasing");
                lp.sends[static_cast<std::size_t>(src) * plan.nodes + dst] = std::move(features);
            }
        }
        plan.layers.push_back(std::move(lp));
    }
    return plan;
}

std::string system_to_json(const SystemConfig& system) {
    ordered_json j;
    j["name"] = system.name;
    j["bandwidth"] = system.bandwidth;
    j["compute"] = system.compute;
    j["nodes"] = system.nodes;
    j["bytes_per_value"] = system.bytes_per_value;
    j["mode"] = to_string(system.mode);
    return dump(j);
}

SystemConfig system_from_json(const std::string& text) {
    const json j = parse(text, "system config");
    SystemConfig s;
    s.name = get_field<std::string>(j, "name", "custom");
    s.bandwidth = get_field<double>(j, "bandwidth");
    s.compute = get_field<double>(j, "compute");
    s.nodes = get_field<int>(j, "nodes", 2);
    s.bytes_per_value = get_field<int>(j, "bytes_per_value", 4);
    try {
        s.mode = latency_mode_from_string(get_field<std::string>(j, "mode", "pipeline"));
    } catch (const DomainError& e) {
        throw FormatError(e.what());
    }
    try {
        s.validate();
    } catch (const DomainError& e) {
        throw FormatError(std::string("system config: ") + e.what());
    }
    return s;
}

SystemConfig resolve_system(const std::string& ref) {
    for (const SystemConfig& s : system_presets())
        if (s.name == ref) return s;
    if (!std::filesystem::exists(ref))
        throw FormatError("'" + ref + "' is neither a system preset nor a readable file");
    return system_from_json(read_text(ref));
}

std::string train_config_to_json(const TrainConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    j["nodes"] = c.nodes;
    j["epochs_dense"] = c.epochs_dense;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["lr_decay"] = c.lr_decay;
    j["lr_step"] = c.lr_step;
    j["momentum"] = c.momentum;
    j["finetune_lr"] = c.finetune_lr;
    ordered_json schedule = ordered_json::array();
    for (const PruneStage& s : c.schedule) schedule.push_back({{"p", s.p}, {"epochs", s.epochs}});
    j["schedule"] = std::move(schedule);
    j["strategy"] = to_string(c.strategy);
    j["one_shot"] = c.one_shot;
    return dump(j);
}

TrainConfig train_config_from_json(const std::string& text) {
    const json j = parse(text, "train config");
    if (!j.is_object()) throw FormatError("train config must be a JSON object");
    static const std::vector<std::string> known{"seed",     "nodes",       "epochs_dense", "batch_size",
                                                "lr",       "lr_decay",    "lr_step",      "momentum",
                                                "finetune_lr", "schedule", "strategy",     "one_shot",
                                                "model",    "dataset"};
    for (const auto& item : j.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw FormatError("train config: unknown key '" + item.key() + "'");
    TrainConfig c;
    c.seed = get_field<std::uint64_t>(j, "seed", c.seed);
    c.nodes = get_field<int>(j, "nodes", c.nodes);
    c.epochs_dense = get_field<int>(j, "epochs_dense", c.epochs_dense);
    c.batch_size = get_field<int>(j, "batch_size", c.batch_size);
    c.lr = get_field<double>(j, "lr", c.lr);
    c.lr_decay = get_field<double>(j, "lr_decay", c.lr_decay);
    c.lr_step = get_field<int>(j, "lr_step", c.lr_step);
    c.momentum = get_field<double>(j, "momentum", c.momentum);
    c.finetune_lr = get_field<double>(j, "finetune_lr", c.finetune_lr);
    if (j.contains("schedule")) {
        if (!j["schedule"].is_array()) throw FormatError("train config: 'schedule' must be an array");
        c.schedule.clear();
        for (const json& s : j["schedule"])
            c.schedule.push_back({get_field<double>(s, "p"), get_field<int>(s, "epochs", 1)});
    }
    try {
        c.strategy = select_strategy_from_string(get_field<std::string>(j, "strategy", to_string(c.strategy)));
        c.validate();
    } catch (const DomainError& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    c.one_shot = get_field<bool>(j, "one_shot", c.one_shot);
    return c;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    {
        auto os = open_out(path, std::ios::binary);
        put_floats(os, t.data);
        if (!os) throw FormatError("failed writing '" + path.string() + "'");
    }
    std::filesystem::path sidecar = path;
    sidecar += ".shape";
    write_text(sidecar, std::to_string(t.shape.channels) + " " + std::to_string(t.shape.height) + " " +
                            std::to_string(t.shape.width) + "\n");
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::filesystem::path sidecar = path;
    sidecar += ".shape";
    std::istringstream shape_text(read_text(sidecar));
    Shape3 shape;
    if (!(shape_text >> shape.channels >> shape.height >> shape.width) || shape.channels < 0 ||
        shape.height < 0 || shape.width < 0)
        throw FormatError("'" + sidecar.string() + "' must hold three non-negative integers C H W");
    Tensor t(shape);
    auto is = open_in(path, std::ios::binary);
    get_floats(is, t.data, "tensor values");
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("'" + path.string() + "' holds more values than its shape");
    return t;
}

std::string read_text(const std::filesystem::path& path) {
    auto is = open_in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto os = open_out(path, std::ios::binary);
    os << text;
    if (!os) throw FormatError("failed writing '" + path.string() + "'");
}

}  // namespace sparsecomm::io
