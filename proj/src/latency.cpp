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

#include "sparsecomm/latency.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

namespace sparsecomm {

namespace {

enum class Traffic { sparse, dense, none };

Traffic traffic_of(const LayerSpec& l) {
    if (l.sparsifiable) return Traffic::sparse;
    switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::dense:
        case LayerKind::feature_matmul:
            return Traffic::dense;
        default:
            return Traffic::none;
    }
}

void check_fraction(double s, const char* what) {
    if (!(s >= 0.0 && s <= 1.0))
        throw DomainError(std::string(what) + " must lie in [0, 1], got " + std::to_string(s));
}

void accumulate(LatencyReport& r) {
    r.total_comm = r.total_comp = r.total_pipeline = r.total_waiting = 0.0;
    for (const LayerLatency& l : r.layers) {
        r.total_comm += l.comm;
        r.total_comp += l.comp;
        r.total_pipeline += l.pipeline();
        r.total_waiting += l.waiting();
    }
}

}  // namespace

std::string to_string(LatencyMode m) { return m == LatencyMode::pipeline ? "pipeline" : "waiting"; }

LatencyMode latency_mode_from_string(const std::string& name) {
    if (name == "pipeline") return LatencyMode::pipeline;
    if (name == "waiting") return LatencyMode::waiting;
    throw FormatError("unknown latency mode '" + name + "'");
}

void SystemConfig::validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
        throw DomainError("system '" + name + "': bandwidth must be positive");
    if (!(compute > 0.0) || !std::isfinite(compute))
        throw DomainError("system '" + name + "': compute rate must be positive");
    if (nodes < 1) throw DomainError("system '" + name + "': node count must be at least 1");
    if (bytes_per_value < 1) throw DomainError("system '" + name + "': bytes_per_value must be positive");
}

std::vector<SystemConfig> system_presets() {
    return {
        {"dong2022", 37.5e6, 125e9, 2, 4, LatencyMode::pipeline},
        {"t4_pcie", 32e9, 65e12, 2, 4, LatencyMode::pipeline},
        {"a100_nvlink", 600e9, 312e12, 2, 4, LatencyMode::pipeline},
        {"xeon_ethernet", 125e6, 96e9, 2, 4, LatencyMode::pipeline},
        {"cortex_m4_wireless", 125e3, 64e6, 2, 4, LatencyMode::pipeline},
        {"slow_compute", 37.5e6, 3.75e9, 2, 4, LatencyMode::pipeline},
    };
}

SystemConfig system_preset(const std::string& name) {
    for (const SystemConfig& s : system_presets())
        if (s.name == name) return s;
    throw DomainError("unknown system preset '" + name + "'");
}

double comm_latency(double feature_bytes, double s_comm, double bandwidth) {
    return feature_bytes * (1.0 - s_comm) / bandwidth;
}

double comp_latency(double ops, double s_comp, int nodes, double compute) {
    return ops * (1.0 - s_comp) / (nodes * compute);
}

double scomm_scomp_convert(int nodes, double value, SparsityDirection direction) {
    if (nodes < 2) throw DomainError("sparsity conversion needs N >= 2");
    const double n = nodes;
    const double result = direction == SparsityDirection::comp_to_comm ? n * value / (n - 1.0)
                                                                       : (n - 1.0) * value / n;
    if (!(result >= 0.0 && result <= 1.0))
        throw DomainError("infeasible sparsity pair: " + std::to_string(value) + " maps to " +
                          std::to_string(result) + " for N=" + std::to_string(nodes));
    return result;
}

double a_factor(double ops, double feature_bytes, const SystemConfig& system) {
    return system.nodes * system.compute / ops * (feature_bytes / system.bandwidth);
}

LatencyReport model_latency(const ModelSpec& model, const std::vector<double>& s_comm,
                            const SystemConfig& system) {
    system.validate();
    validate_model(model, system.nodes);
    if (s_comm.size() != model.layers.size())
        throw ShapeError("sparsity profile has " + std::to_string(s_comm.size()) +
                         " entries, model has " + std::to_string(model.layers.size()) + " layers");
    const int n = system.nodes;
    LatencyReport report;
    for (const LayerSpec& l : model.layers) {
        LayerLatency ll;
        ll.layer_id = l.id;
        ll.kind = l.kind;
        ll.ops = static_cast<double>(flop_count(l));
        ll.feature_bytes = static_cast<double>(feature_bytes(l, system.bytes_per_value));
        const Traffic t = n > 1 ? traffic_of(l) : Traffic::none;
        if (t == Traffic::sparse) {
            check_fraction(s_comm[l.id], "S_comm");
            ll.s_comm = s_comm[l.id];
            ll.s_comp = scomm_scomp_convert(n, ll.s_comm, SparsityDirection::comm_to_comp);
        }
        if (t != Traffic::none) {
            ll.comm = comm_latency(ll.feature_bytes, ll.s_comm, system.bandwidth);
            ll.a_factor = a_factor(ll.ops, ll.feature_bytes, system);
        }
        ll.comp = comp_latency(ll.ops, ll.s_comp, n, system.compute);
        report.layers.push_back(ll);
    }
    accumulate(report);
    return report;
}

LatencyReport model_latency(const ModelSpec& model, double s_comm, const SystemConfig& system) {
    return model_latency(model, std::vector<double>(model.layers.size(), s_comm), system);
}

LatencyReport model_latency(const ModelSpec& model, const BlockMask& mask,
                            const SystemConfig& system) {
    if (mask.nodes() != system.nodes)
        throw ShapeError("mask built for N=" + std::to_string(mask.nodes()) + ", system has N=" +
                         std::to_string(system.nodes));
    mask.check(model);
    std::vector<double> profile(model.layers.size(), 0.0);
    for (const LayerSparsity& s : sparsity_stats(mask)) profile[s.layer_id] = s.s_comm.value();
    return model_latency(model, profile, system);
}

std::vector<NodeLoad> node_loads(const LayerSpec& l, const LayerPlan& plan, const BlockMask& mask,
                                 int nodes, int bytes_per_value) {
    std::vector<NodeLoad> loads(static_cast<std::size_t>(nodes));
    const std::int64_t per_feature = std::int64_t{l.in_height} * l.in_width * bytes_per_value;
    const std::int64_t per_kernel = 2 * std::int64_t{l.kernel_h} * l.kernel_w * l.out_height() * l.out_width();
    const std::int64_t per_channel = std::int64_t{l.out_height()} * l.out_width();
    const LayerMask* lm = mask.layer(l.id);
    const std::int64_t total_ops = flop_count(l);
    for (int node = 0; node < nodes; ++node) {
        NodeLoad& load = loads[node];
        if (plan.exchanges) {
            std::vector<int> distinct;
            for (int dst = 0; dst < nodes; ++dst) {
                const auto& out = plan.to(node, dst, nodes);
                distinct.insert(distinct.end(), out.begin(), out.end());
                load.bytes_in += static_cast<std::int64_t>(plan.to(dst, node, nodes).size()) * per_feature;
            }
            std::sort(distinct.begin(), distinct.end());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            load.bytes_out = static_cast<std::int64_t>(distinct.size()) * per_feature;
        }
        const std::int64_t owned = split_begin(l.out_features, nodes, node + 1) -
                                   split_begin(l.out_features, nodes, node);
        switch (l.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense:
                load.ops = (lm ? lm->kept_kernels_for_node(node) : owned * l.in_features) * per_kernel;
                break;
            case LayerKind::dwconv: load.ops = owned * per_kernel; break;
            case LayerKind::pool:
            case LayerKind::elementwise_add: load.ops = owned * per_channel; break;
            case LayerKind::feature_matmul:
                load.ops = total_ops * (node + 1) / nodes - total_ops * node / nodes;
                break;
        }
    }
    return loads;
}

LatencyReport model_latency(const ModelSpec& model, const CommPlan& plan, const BlockMask& mask,
                            const SystemConfig& system) {
    system.validate();
    validate_model(model, system.nodes);
    mask.check(model);
    const int n = system.nodes;
    if (plan.nodes != n || mask.nodes() != n)
        throw ShapeError("plan/mask node count does not match system N=" + std::to_string(n));
    if (plan.layers.size() != model.layers.size())
        throw ShapeError("plan covers " + std::to_string(plan.layers.size()) +
                         " layers, model has " + std::to_string(model.layers.size()));
    std::vector<double> s_comm(model.layers.size(), 0.0), s_comp(model.layers.size(), 0.0);
    for (const LayerSparsity& s : sparsity_stats(mask)) {
        s_comm[s.layer_id] = s.s_comm.value();
        s_comp[s.layer_id] = s.s_comp.value();
    }
    LatencyReport report;
    for (const LayerSpec& l : model.layers) {
        LayerLatency ll;
        ll.layer_id = l.id;
        ll.kind = l.kind;
        ll.ops = static_cast<double>(flop_count(l));
        ll.feature_bytes = static_cast<double>(feature_bytes(l, system.bytes_per_value));
        ll.s_comm = s_comm[l.id];
        ll.s_comp = s_comp[l.id];
        const LayerPlan& lp = plan.layers[l.id];
        if (lp.exchanges) ll.a_factor = a_factor(ll.ops, ll.feature_bytes, system);
        for (const NodeLoad& load : node_loads(l, lp, mask, n, system.bytes_per_value)) {
            ll.comm = std::max(ll.comm, static_cast<double>(load.bytes_out + load.bytes_in) / system.bandwidth);
            ll.comp = std::max(ll.comp, static_cast<double>(load.ops) / system.compute);
        }
        report.layers.push_back(ll);
    }
    accumulate(report);
    return report;
}

double equilibrium_sparsity(double ops, double feature_bytes, const SystemConfig& system,
                            int layer_id) {
    const double a = a_factor(ops, feature_bytes, system);
    if (!(a >= 1.0)) throw ComputeBoundError(layer_id, a);
    const double n = system.nodes;
    return (a * n - n) / (a * n - n + 1.0);
}

std::vector<double> EquilibriumProfile::per_layer(std::size_t layer_count) const {
    std::vector<double> out(layer_count, 0.0);
    for (const EquilibriumEntry& e : entries)
        if (e.s_comm && static_cast<std::size_t>(e.layer_id) < layer_count) out[e.layer_id] = *e.s_comm;
    return out;
}

EquilibriumProfile equilibrium_profile(const ModelSpec& model, const SystemConfig& system) {
    system.validate();
    validate_model(model, system.nodes);
    if (system.nodes < 2) throw DomainError("equilibrium sparsity needs N >= 2");
    EquilibriumProfile profile;
    std::vector<double> bound;
    for (const LayerSpec& l : model.layers) {
        if (!l.sparsifiable) continue;
        EquilibriumEntry e;
        e.layer_id = l.id;
        e.kind = l.kind;
        const double ops = static_cast<double>(flop_count(l));
        const double fs = static_cast<double>(feature_bytes(l, system.bytes_per_value));
        e.a_factor = a_factor(ops, fs, system);
        try {
            e.s_comm = equilibrium_sparsity(ops, fs, system, l.id);
            bound.push_back(*e.s_comm);
        } catch (const ComputeBoundError&) {
            // reported through the empty s_comm
        }
        profile.entries.push_back(e);
    }
    auto mean = [](auto first, auto last) {
        return first == last ? 0.0 : std::accumulate(first, last, 0.0) / static_cast<double>(last - first);
    };
    const auto half = bound.begin() + static_cast<std::ptrdiff_t>(bound.size() / 2);
    profile.mean = mean(bound.begin(), bound.end());
    profile.first_half_mean = mean(bound.begin(), half);
    profile.second_half_mean = mean(half, bound.end());
    return profile;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_latency_csv(std::ostream& os, const LatencyReport& report) {
    os << "layer_id,kind,C_c,F_s,S_comm,S_comp,L_comm_s,L_comp_s,L_pipeline_s,L_waiting_s\n";
    double ops = 0.0, bytes = 0.0;
    for (const LayerLatency& l : report.layers) {
        ops += l.ops;
        bytes += l.feature_bytes;
        os << l.layer_id << ',' << to_string(l.kind) << ',' << format_double(l.ops) << ','
           << format_double(l.feature_bytes) << ',' << format_double(l.s_comm) << ','
           << format_double(l.s_comp) << ',' << format_double(l.comm) << ','
           << format_double(l.comp) << ',' << format_double(l.pipeline()) << ','
           << format_double(l.waiting()) << '\n';
    }
    os << "total,," << format_double(ops) << ',' << format_double(bytes) << ",,,"
       << format_double(report.total_comm) << ',' << format_double(report.total_comp) << ','
       << format_double(report.total_pipeline) << ',' << format_double(report.total_waiting)
       << '\n';
}

void write_equilibrium_csv(std::ostream& os, const EquilibriumProfile& profile) {
    os << "layer_id,kind,A,S_comm_eql,status\n";
    for (const EquilibriumEntry& e : profile.entries) {
        os << e.layer_id << ',' << to_string(e.kind) << ',' << format_double(e.a_factor) << ','
           << (e.s_comm ? format_double(*e.s_comm) : std::string()) << ','
           << (e.s_comm ? "ok" : "compute_bound") << '\n';
    }
}

}  // namespace sparsecomm
