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

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sparsecomm/mask.hpp"
#include "sparsecomm/model.hpp"

namespace sparsecomm {

enum class LatencyMode { pipeline, waiting };
std::string to_string(LatencyMode m);
LatencyMode latency_mode_from_string(const std::string& name);

struct SystemConfig {
    std::string name;
    double bandwidth = 0.0;  // B, bytes per second
    double compute = 0.0;    // C, operations per second
    int nodes = 2;           // N
    int bytes_per_value = 4;
    LatencyMode mode = LatencyMode::pipeline;

    void validate() const;
};

/// Built-in system configurations (all with N = 2, 4-byte values, pipeline mode).
std::vector<SystemConfig> system_presets();
/// Throws DomainError for an unknown name.
SystemConfig system_preset(const std::string& name);

/// F_s (1 - S_comm) / B
double comm_latency(double feature_bytes, double s_comm, double bandwidth);
/// C_c (1 - S_comp) / (N C)
double comp_latency(double ops, double s_comp, int nodes, double compute);

enum class SparsityDirection { comp_to_comm, comm_to_comp };
/// S_comm = N/(N-1) S_comp, or its inverse. Throws DomainError when the result
/// leaves [0, 1] or N < 2.
double scomm_scomp_convert(int nodes, double value, SparsityDirection direction);

struct LayerLatency {
    int layer_id = 0;
    LayerKind kind = LayerKind::conv2d;
    double ops = 0.0;            // C_c
    double feature_bytes = 0.0;  // F_s
    double s_comm = 0.0;
    double s_comp = 0.0;
    double comm = 0.0;           // L_comm, seconds
    double comp = 0.0;           // L_comp, seconds
    double a_factor = 0.0;       // N C F_s / (C_c B); 0 for layers without traffic

    double pipeline() const { return comm > comp ? comm : comp; }
    double waiting() const { return comm + comp; }
    double latency(LatencyMode m) const { return m == LatencyMode::pipeline ? pipeline() : waiting(); }
};

struct LatencyReport {
    std::vector<LayerLatency> layers;
    double total_comm = 0.0;
    double total_comp = 0.0;
    double total_pipeline = 0.0;
    double total_waiting = 0.0;

    double total(LatencyMode m) const {
        return m == LatencyMode::pipeline ? total_pipeline : total_waiting;
    }
};

/// Per-layer communication sparsity; entries for layers that are not
/// sparsifiable are ignored. S_comp follows from S_comm through N.
LatencyReport model_latency(const ModelSpec& model, const std::vector<double>& s_comm,
                            const SystemConfig& system);
/// Uniform S_comm on every sparsifiable layer.
LatencyReport model_latency(const ModelSpec& model, double s_comm, const SystemConfig& system);
/// Sparsities taken from the mask's exact statistics.
LatencyReport model_latency(const ModelSpec& model, const BlockMask& mask,
                            const SystemConfig& system);

/// Per-node traffic and work of one layer under an explicit plan.
struct NodeLoad {
    std::int64_t bytes_out = 0;  // distinct features the node puts on the wire
    std::int64_t bytes_in = 0;   // features received from all peers
    std::int64_t ops = 0;
};

/// Loads of every node for one layer. Computed from the plan and the layer
/// geometry alone; the simulator measures the same quantities independently.
std::vector<NodeLoad> node_loads(const LayerSpec& layer, const LayerPlan& plan,
                                 const BlockMask& mask, int nodes, int bytes_per_value);

/// Latency under an explicit plan: per node, comm = (bytes out + bytes in) / B
/// and comp = node ops / C; the layer takes the maximum over nodes of each.
LatencyReport model_latency(const ModelSpec& model, const CommPlan& plan, const BlockMask& mask,
                            const SystemConfig& system);

/// A = N C F_s / (C_c B)
double a_factor(double ops, double feature_bytes, const SystemConfig& system);

/// (A N - N) / (A N - N + 1). Throws ComputeBoundError when A < 1.
double equilibrium_sparsity(double ops, double feature_bytes, const SystemConfig& system,
                            int layer_id = -1);

struct EquilibriumEntry {
    int layer_id = 0;
    LayerKind kind = LayerKind::conv2d;
    double a_factor = 0.0;
    std::optional<double> s_comm;  // empty for compute-bound layers
};

struct EquilibriumProfile {
    std::vector<EquilibriumEntry> entries;  // sparsifiable layers, in order
    double mean = 0.0;                      // over communication-bound entries
    double first_half_mean = 0.0;
    double second_half_mean = 0.0;

    /// One S_comm per layer id (0 for compute-bound and other layers).
    std::vector<double> per_layer(std::size_t layer_count) const;
};

EquilibriumProfile equilibrium_profile(const ModelSpec& model, const SystemConfig& system);

/// CSV with header
/// layer_id,kind,C_c,F_s,S_comm,S_comp,L_comm_s,L_comp_s,L_pipeline_s,L_waiting_s
/// followed by a totals row.
void write_latency_csv(std::ostream& os, const LatencyReport& report);
void write_equilibrium_csv(std::ostream& os, const EquilibriumProfile& profile);

/// Shortest round-trip decimal rendering, locale independent.
std::string format_double(double v);

}  // namespace sparsecomm
