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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparsecomm/latency.hpp"
#include "sparsecomm/mask.hpp"
#include "sparsecomm/model.hpp"

namespace sparsecomm {

/// A planned feature did not arrive, or arrived out of order.
class ProtocolError : public Error {
public:
    ProtocolError(int layer, int src, int dst, int feature, const std::string& what)
        : Error("protocol error at layer " + std::to_string(layer) + ", " +
                std::to_string(src) + " -> " + std::to_string(dst) + ", feature " +
                std::to_string(feature) + ": " + what),
          layer_(layer), src_(src), dst_(dst), feature_(feature) {}

    int layer() const { return layer_; }
    int src() const { return src_; }
    int dst() const { return dst_; }
    int feature() const { return feature_; }

private:
    int layer_, src_, dst_, feature_;
};

/// One node's slice of one layer.
struct ShardLayer {
    int layer_id = 0;
    int out_begin = 0;  // owned output features [out_begin, out_end)
    int out_end = 0;
    std::vector<int> gather;      // global input features feeding the local tensor
    std::vector<float> weights;   // (out_end - out_begin, gather.size(), H, W); depthwise: (.., 1, H, W)
    std::vector<float> bias;

    int out_count() const { return out_end - out_begin; }
};

struct NodeShard {
    int node = 0;
    std::vector<ShardLayer> layers;  // indexed by layer id
};

/// Splits the masked model into per-node shards. Throws ShapeError when a
/// sparsifiable layer is not divisible by N.
std::vector<NodeShard> partition_weights(const ModelSpec& model, const WeightStore& weights,
                                         const BlockMask& mask);

struct TraceEntry {
    int layer_id = 0;
    int node = 0;
    std::int64_t bytes_out = 0;
    std::int64_t bytes_in = 0;
    std::int64_t ops = 0;
    double t_comm = 0.0;
    double t_comp = 0.0;
};

struct TimingTrace {
    int nodes = 1;
    std::vector<TraceEntry> entries;  // layer-major, node-minor

    /// Per-layer maxima over nodes, in the same form as the analytic model.
    LatencyReport aggregate(const ModelSpec& model, const SystemConfig& system) const;
};

enum class Schedule {
    sequential,  // nodes run in id order within each phase
    reversed,    // nodes run in descending id order
    threaded,    // one thread per node, barrier per phase
};

struct DistributedResult {
    std::vector<Tensor> node_outputs;  // owned output channels of the last layer
    Tensor output;                     // node outputs concatenated in node order
    TimingTrace trace;
};

/// Runs the model layer by layer over per-pair FIFO channels. Every node
/// starts with the full input; first-layer features are still exchanged so
/// the trace charges them as dense traffic.
DistributedResult run_distributed(const ModelSpec& model, const std::vector<NodeShard>& shards,
                                  const CommPlan& plan, const Tensor& input,
                                  const SystemConfig& system,
                                  Schedule schedule = Schedule::sequential);

/// Max over `trials` seeded random inputs of ||distributed - centralized||_inf /
/// ||centralized||_inf.
double verify_against_centralized(const ModelSpec& model, const WeightStore& weights,
                                  const BlockMask& mask, int trials, std::uint64_t seed);

double max_relative_error(const Tensor& actual, const Tensor& expected);

/// CSV `layer_id,node_id,bytes_out,bytes_in,t_comm_s,t_comp_s`.
void write_trace_csv(std::ostream& os, const TimingTrace& trace);

}  // namespace sparsecomm
