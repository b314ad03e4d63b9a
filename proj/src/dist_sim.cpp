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

#include "sparsecomm/dist_sim.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <deque>
#include <exception>
#include <ostream>
#include <random>
#include <thread>

namespace sparsecomm {

namespace {

std::vector<int> owned_range(int count, int nodes, int node) {
    std::vector<int> r;
    for (int f = split_begin(count, nodes, node); f < split_begin(count, nodes, node + 1); ++f)
        r.push_back(f);
    return r;
}

struct Message {
    int layer;
    int feature;
    std::vector<float> values;
};

// Per ordered pair (src, dst). Within a layer, only src pushes during the send
// phase and only dst pops during the receive phase; the phase barrier orders
// the two, so the queues need no lock.
struct Channels {
    int nodes;
    std::vector<std::deque<Message>> queues;

    explicit Channels(int n) : nodes(n), queues(static_cast<std::size_t>(n) * n) {}
    std::deque<Message>& at(int src, int dst) { return queues[static_cast<std::size_t>(src) * nodes + dst]; }
};

class Simulation {
public:
    Simulation(const ModelSpec& model, const std::vector<NodeShard>& shards, const CommPlan& plan,
               const Tensor& input, const SystemConfig& system)
        : model_(model), shards_(shards), plan_(plan), input_(input), system_(system),
          nodes_(static_cast<int>(shards.size())), channels_(nodes_),
          outputs_(static_cast<std::size_t>(nodes_), std::vector<Tensor>(model.layers.size())) {
        trace_.nodes = nodes_;
        trace_.entries.resize(model.layers.size() * static_cast<std::size_t>(nodes_));
    }

    void send(int layer_id, int node) {
        const LayerPlan& lp = plan_.layers[layer_id];
        TraceEntry& e = entry(layer_id, node);
        e.layer_id = layer_id;
        e.node = node;
        if (!lp.exchanges) return;
        const LayerSpec& l = model_.layers[layer_id];
        std::vector<int> distinct;
        for (int dst = 0; dst < nodes_; ++dst) {
            if (dst == node) continue;
            for (int f : lp.to(node, dst, nodes_)) {
                channels_.at(node, dst).push_back({layer_id, f, local_feature(node, l.source(), f)});
                distinct.push_back(f);
            }
        }
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        e.bytes_out = static_cast<std::int64_t>(distinct.size()) * feature_plane_bytes(l);
    }

    void receive_and_compute(int layer_id, int node) {
        const LayerSpec& l = model_.layers[layer_id];
        const ShardLayer& sl = shards_[node].layers[layer_id];
        TraceEntry& e = entry(layer_id, node);
        const int src_layer = l.source();
        const Shape3 in_shape = model_.output_shape(src_layer);
        const std::int64_t plane = std::int64_t{in_shape.height} * in_shape.width;

        Tensor gathered({static_cast<int>(sl.gather.size()), in_shape.height, in_shape.width});
        const int own_lo = split_begin(in_shape.channels, nodes_, node);
        const int own_hi = split_begin(in_shape.channels, nodes_, node + 1);
        for (std::size_t k = 0; k < sl.gather.size(); ++k) {
            const int f = sl.gather[k];
            std::vector<float> values;
            if (f >= own_lo && f < own_hi) {
                values = local_feature(node, src_layer, f);
            } else {
                const int src = split_owner(in_shape.channels, nodes_, f);
                auto& q = channels_.at(src, node);
                if (q.empty() || q.front().layer != layer_id)
                    throw ProtocolError(layer_id, src, node, f, "planned feature never arrived");
                if (q.front().feature != f)
                    throw ProtocolError(layer_id, src, node, f,
                                        "received feature " + std::to_string(q.front().feature) +
                                            " instead");
                values = std::move(q.front().values);
                q.pop_front();
                e.bytes_in += plane * system_.bytes_per_value;
            }
            std::copy(values.begin(), values.end(), gathered.channel(static_cast<int>(k)));
        }
        for (int src = 0; src < nodes_; ++src) {
            auto& q = channels_.at(src, node);
            if (!q.empty() && q.front().layer == layer_id)
                throw ProtocolError(layer_id, src, node, q.front().feature,
                                    "feature was sent but is not part of the shard");
        }

        Tensor& out = outputs_[node][layer_id];
        const std::int64_t out_plane = std::int64_t{l.out_height()} * l.out_width();
        switch (l.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense:
                kernels::conv2d(gathered, sl.weights, sl.bias, sl.out_count(), l.kernel_h,
                                l.kernel_w, l.stride, l.padding, l.relu, nullptr, 0, out);
                e.ops = std::int64_t{sl.out_count()} * static_cast<std::int64_t>(sl.gather.size()) *
                        2 * l.kernel_h * l.kernel_w * out_plane;
                break;
            case LayerKind::dwconv:
                kernels::depthwise(gathered, sl.weights, sl.bias, l.kernel_h, l.kernel_w, l.stride,
                                   l.padding, l.relu, out);
                e.ops = std::int64_t{sl.out_count()} * 2 * l.kernel_h * l.kernel_w * out_plane;
                break;
            case LayerKind::pool:
                kernels::pool(gathered, l.pool_type, l.kernel_h, l.kernel_w, l.stride, l.padding, out);
                e.ops = std::int64_t{sl.out_count()} * out_plane;
                break;
            case LayerKind::elementwise_add: {
                out = std::move(gathered);
                const int r = *l.residual_from;
                for (int c = 0; c < sl.out_count(); ++c) {
                    const std::vector<float> other = local_feature(node, r, sl.out_begin + c);
                    float* dst = out.channel(c);
                    for (std::int64_t p = 0; p < out_plane; ++p) {
                        const float v = dst[p] + other[p];
                        dst[p] = (l.relu && v < 0.0f) ? 0.0f : v;
                    }
                }
                e.ops = std::int64_t{sl.out_count()} * out_plane;
                break;
            }
            case LayerKind::feature_matmul:
                throw Error("layer " + std::to_string(layer_id) +
                            ": feature_matmul has no functional forward pass");
        }
        e.t_comm = static_cast<double>(e.bytes_out + e.bytes_in) / system_.bandwidth;
        e.t_comp = static_cast<double>(e.ops) / system_.compute;
    }

    DistributedResult finish() {
        DistributedResult r;
        const int last = static_cast<int>(model_.layers.size()) - 1;
        const Shape3 shape = model_.output_shape(last);
        r.output = Tensor(shape);
        std::int64_t offset = 0;
        for (int n = 0; n < nodes_; ++n) {
            Tensor& t = outputs_[n][last];
            std::copy(t.data.begin(), t.data.end(), r.output.data.begin() + offset);
            offset += static_cast<std::int64_t>(t.data.size());
            r.node_outputs.push_back(std::move(t));
        }
        r.trace = std::move(trace_);
        return r;
    }

private:
    TraceEntry& entry(int layer_id, int node) {
        return trace_.entries[static_cast<std::size_t>(layer_id) * nodes_ + node];
    }

    std::int64_t feature_plane_bytes(const LayerSpec& l) const {
        return std::int64_t{l.in_height} * l.in_width * system_.bytes_per_value;
    }

    // Channel `f` (global index) of layer `layer_id`'s output as held by `node`.
    std::vector<float> local_feature(int node, int layer_id, int f) const {
        if (layer_id == -1) {
            const std::int64_t plane = std::int64_t{input_.shape.height} * input_.shape.width;
            const float* p = input_.channel(f);
            return std::vector<float>(p, p + plane);
        }
        const ShardLayer& sl = shards_[node].layers[layer_id];
        if (f < sl.out_begin || f >= sl.out_end)
            throw ProtocolError(layer_id, node, node, f, "node does not own the feature");
        const Tensor& t = outputs_[node][layer_id];
        const std::int64_t plane = std::int64_t{t.shape.height} * t.shape.width;
        const float* p = t.channel(f - sl.out_begin);
        return std::vector<float>(p, p + plane);
    }

    const ModelSpec& model_;
    const std::vector<NodeShard>& shards_;
    const CommPlan& plan_;
    const Tensor& input_;
    const SystemConfig& system_;
    int nodes_;
    Channels channels_;
    std::vector<std::vector<Tensor>> outputs_;  // [node][layer], owned channels only
    TimingTrace trace_;
};

}  // namespace

std::vector<NodeShard> partition_weights(const ModelSpec& model, const WeightStore& weights,
                                         const BlockMask& mask) {
    const int nodes = mask.nodes();
    validate_model(model, nodes);
    weights.check_shapes(model);
    const CommPlan plan = build_comm_plan(model, mask);
    std::vector<NodeShard> shards(static_cast<std::size_t>(nodes));
    for (int n = 0; n < nodes; ++n) {
        NodeShard& shard = shards[n];
        shard.node = n;
        for (const LayerSpec& l : model.layers) {
            ShardLayer sl;
            sl.layer_id = l.id;
            sl.out_begin = split_begin(l.out_features, nodes, n);
            sl.out_end = split_begin(l.out_features, nodes, n + 1);
            sl.gather = owned_range(l.in_features, nodes, n);
            const LayerPlan& lp = plan.layers[l.id];
            if (lp.exchanges) {
                for (int src = 0; src < nodes; ++src)
                    if (src != n) {
                        const auto& in = lp.to(src, n, nodes);
                        sl.gather.insert(sl.gather.end(), in.begin(), in.end());
                    }
                std::sort(sl.gather.begin(), sl.gather.end());
            }
            if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
                const LayerWeights& lw = weights.at(l.id);
                const LayerMask* lm = mask.layer(l.id);
                const std::int64_t k = std::int64_t{l.kernel_h} * l.kernel_w;
                sl.weights.reserve(static_cast<std::size_t>(sl.out_count() * sl.gather.size() * k));
                for (int o = sl.out_begin; o < sl.out_end; ++o) {
                    for (int f : sl.gather) {
                        if (lm && !lm->keep(f, o))
                            throw ShapeError("layer " + std::to_string(l.id) + ": gathered feature " +
                                             std::to_string(f) + " has a pruned kernel for output " +
                                             std::to_string(o));
                        const float* w = lw.weights.data() + (std::int64_t{o} * l.in_features + f) * k;
                        sl.weights.insert(sl.weights.end(), w, w + k);
                    }
                }
                sl.bias.assign(lw.bias.begin() + sl.out_begin, lw.bias.begin() + sl.out_end);
            } else if (l.kind == LayerKind::dwconv) {
                const LayerWeights& lw = weights.at(l.id);
                const std::int64_t k = std::int64_t{l.kernel_h} * l.kernel_w;
                sl.weights.assign(lw.weights.begin() + sl.out_begin * k, lw.weights.begin() + sl.out_end * k);
                sl.bias.assign(lw.bias.begin() + sl.out_begin, lw.bias.begin() + sl.out_end);
            }
            shard.layers.push_back(std::move(sl));
        }
    }
    return shards;
}

DistributedResult run_distributed(const ModelSpec& model, const std::vector<NodeShard>& shards,
                                  const CommPlan& plan, const Tensor& input,
                                  const SystemConfig& system, Schedule schedule) {
    const int nodes = static_cast<int>(shards.size());
    system.validate();
    validate_model(model, nodes);
    if (nodes < 1) throw DomainError("no shards to run");
    if (plan.nodes != nodes || system.nodes != nodes)
        throw ShapeError("plan, shards and system disagree on the node count");
    if (plan.layers.size() != model.layers.size())
        throw ShapeError("plan does not cover every layer");
    for (const NodeShard& s : shards)
        if (s.layers.size() != model.layers.size())
            throw ShapeError("shard " + std::to_string(s.node) + " does not cover every layer");
    if (input.shape != model.input)
        throw ShapeError("model input: expected " + to_string(model.input) + ", got " +
                         to_string(input.shape));

    Simulation sim(model, shards, plan, input, system);
    const int layers = static_cast<int>(model.layers.size());

    if (schedule == Schedule::threaded) {
        std::barrier sync(nodes);
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nodes));
        {
            std::vector<std::jthread> workers;
            for (int n = 0; n < nodes; ++n) {
                workers.emplace_back([&, n] {
                    for (int l = 0; l < layers; ++l) {
                        if (!errors[n]) {
                            try {
                                sim.send(l, n);
                            } catch (...) {
                                errors[n] = std::current_exception();
                            }
                        }
                        sync.arrive_and_wait();
                        if (!errors[n]) {
                            try {
                                sim.receive_and_compute(l, n);
                            } catch (...) {
                                errors[n] = std::current_exception();
                            }
                        }
                        sync.arrive_and_wait();
                    }
                });
            }
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        std::vector<int> order(static_cast<std::size_t>(nodes));
        for (int n = 0; n < nodes; ++n) order[n] = schedule == Schedule::reversed ? nodes - 1 - n : n;
        for (int l = 0; l < layers; ++l) {
            for (int n : order) sim.send(l, n);
            for (int n : order) sim.receive_and_compute(l, n);
        }
    }
    return sim.finish();
}

LatencyReport TimingTrace::aggregate(const ModelSpec& model, const SystemConfig& system) const {
    LatencyReport r;
    for (const LayerSpec& l : model.layers) {
        LayerLatency ll;
        ll.layer_id = l.id;
        ll.kind = l.kind;
        ll.ops = static_cast<double>(flop_count(l));
        ll.feature_bytes = static_cast<double>(feature_bytes(l, system.bytes_per_value));
        for (int n = 0; n < nodes; ++n) {
            const TraceEntry& e = entries.at(static_cast<std::size_t>(l.id) * nodes + n);
            ll.comm = std::max(ll.comm, e.t_comm);
            ll.comp = std::max(ll.comp, e.t_comp);
        }
        r.layers.push_back(ll);
        r.total_comm += ll.comm;
        r.total_comp += ll.comp;
        r.total_pipeline += ll.pipeline();
        r.total_waiting += ll.waiting();
    }
    return r;
}

double max_relative_error(const Tensor& actual, const Tensor& expected) {
    if (actual.shape != expected.shape || actual.data.size() != expected.data.size())
        throw ShapeError("cannot compare tensors of shapes " + to_string(actual.shape) + " and " +
                         to_string(expected.shape));
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < actual.data.size(); ++k) {
        diff = std::max(diff, std::fabs(static_cast<double>(actual.data[k]) - expected.data[k]));
        scale = std::max(scale, std::fabs(static_cast<double>(expected.data[k])));
    }
    return scale > 0.0 ? diff / scale : diff;
}

double verify_against_centralized(const ModelSpec& model, const WeightStore& weights,
                                  const BlockMask& mask, int trials, std::uint64_t seed) {
    if (trials < 1) throw DomainError("verification needs at least one trial");
    const int nodes = mask.nodes();
    const auto shards = partition_weights(model, weights, mask);
    const CommPlan plan = build_comm_plan(model, mask);
    const SystemConfig system{"verify", 1.0, 1.0, nodes, 4, LatencyMode::pipeline};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Tensor x(model.input);
        for (float& v : x.data) v = dist(rng);
        const Tensor central = forward_model(model, weights, mask, x);
        const DistributedResult d = run_distributed(model, shards, plan, x, system);
        worst = std::max(worst, max_relative_error(d.output, central));
    }
    return worst;
}

void write_trace_csv(std::ostream& os, const TimingTrace& trace) {
    os << "layer_id,node_id,bytes_out,bytes_in,t_comm_s,t_comp_s\n";
    for (const TraceEntry& e : trace.entries) {
        os << e.layer_id << ',' << e.node << ',' << e.bytes_out << ',' << e.bytes_in << ','
           << format_double(e.t_comm) << ',' << format_double(e.t_comp) << '\n';
    }
}

}  // namespace sparsecomm
