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
#include <optional>
#include <string>
#include <vector>

#include "sparsecomm/common.hpp"
#include "sparsecomm/model.hpp"

namespace sparsecomm {

/// Kernel-granularity keep matrix of one sparsifiable layer. Entry (f, o)
/// covers the whole kernel connecting input feature f to output feature o.
/// Input features [i*I/N, (i+1)*I/N) live on node i, and likewise for outputs.
class LayerMask {
public:
    LayerMask() = default;
    /// All-ones mask.
    LayerMask(int layer_id, int in_features, int out_features, int nodes);

    int layer_id() const { return layer_id_; }
    int in_features() const { return in_; }
    int out_features() const { return out_; }
    int nodes() const { return nodes_; }
    int in_per_node() const { return in_ / nodes_; }
    int out_per_node() const { return out_ / nodes_; }
    int in_owner(int f) const { return f / in_per_node(); }
    int out_owner(int o) const { return o / out_per_node(); }

    bool keep(int f, int o) const { return keep_[index(f, o)] != 0; }
    void set(int f, int o, bool value) { keep_[index(f, o)] = value ? 1 : 0; }
    const std::uint8_t* data() const { return keep_.data(); }

    /// Value of the sub-row (f, destination node j); sub-row atomicity is assumed.
    bool subrow_kept(int f, int dst) const { return keep(f, dst * out_per_node()); }
    void set_subrow(int f, int dst, bool value);

    /// Throws ShapeError on a pruned diagonal entry or a split sub-row.
    void validate() const;
    bool is_dense() const;

    std::int64_t kept_kernels() const;
    std::int64_t kept_kernels_for_node(int node) const;  // over the node's output columns

    friend bool operator==(const LayerMask&, const LayerMask&) = default;

private:
    std::size_t index(int f, int o) const { return static_cast<std::size_t>(f) * out_ + o; }

    int layer_id_ = 0;
    int in_ = 0;
    int out_ = 0;
    int nodes_ = 1;
    std::vector<std::uint8_t> keep_;
};

/// Per-layer masks for a whole model. Layers that are not sparsifiable carry
/// no entry and behave as all-ones.
class BlockMask {
public:
    BlockMask() = default;
    BlockMask(int nodes, std::size_t layer_count) : nodes_(nodes), layers_(layer_count) {}

    /// All-ones mask for every sparsifiable layer of `model`.
    static BlockMask dense(const ModelSpec& model, int nodes);

    int nodes() const { return nodes_; }
    std::size_t layer_count() const { return layers_.size(); }
    const LayerMask* layer(int id) const;
    LayerMask* layer(int id);
    void set_layer(int id, LayerMask mask);

    /// Validates each layer mask and its agreement with `model`.
    void check(const ModelSpec& model) const;

    friend bool operator==(const BlockMask&, const BlockMask&) = default;

private:
    int nodes_ = 1;
    std::vector<std::optional<LayerMask>> layers_;
};

/// Feature lists exchanged for one layer; `sends[i*N + j]` is the sorted list of
/// global input-feature indices node i transmits to node j (empty for i == j).
struct LayerPlan {
    int layer_id = 0;
    bool exchanges = false;
    std::vector<std::vector<int>> sends;

    const std::vector<int>& to(int src, int dst, int nodes) const {
        return sends[static_cast<std::size_t>(src) * nodes + dst];
    }
    friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct CommPlan {
    int nodes = 1;
    std::vector<LayerPlan> layers;  // indexed by layer id

    std::int64_t messages(int layer_id) const;
    friend bool operator==(const CommPlan&, const CommPlan&) = default;
};

/// Plan for the masked layers only; other layers have `exchanges == false`.
/// Throws ShapeError if a mask breaks sub-row atomicity.
CommPlan mask_to_commplan(const BlockMask& mask);

/// Inverse of mask_to_commplan at sub-row granularity. Needs the model for
/// output counts.
BlockMask plan_to_mask(const ModelSpec& model, const CommPlan& plan);

/// Full exchange plan for running `model`: masked layers follow the mask,
/// other conv/dense/feature_matmul layers all-gather their inputs, and
/// partition-aligned kinds (pool, add, depthwise) exchange nothing.
CommPlan build_comm_plan(const ModelSpec& model, const BlockMask& mask);

struct LayerSparsity {
    int layer_id = 0;
    std::int64_t possible_messages = 0;  // I * (N - 1)
    std::int64_t sent_messages = 0;      // kept off-diagonal sub-rows
    Rational s_comm;
    Rational s_comp;
    Rational s_wt;
    Rational off_diag_prune_fraction;
};

/// Sparsity of each masked layer, in layer order.
std::vector<LayerSparsity> sparsity_stats(const BlockMask& mask);

/// L1 mass of each (input feature, destination node) sub-row; diagonal
/// entries are left at zero.
struct SubrowScores {
    int layer_id = 0;
    int in_features = 0;
    int nodes = 1;
    std::vector<double> score;  // [f * nodes + j]

    double at(int f, int dst) const { return score[static_cast<std::size_t>(f) * nodes + dst]; }
};

SubrowScores score_subrows_l1(const LayerSpec& layer, const LayerWeights& weights, int nodes);

enum class SelectStrategy { l1, random };
std::string to_string(SelectStrategy s);
SelectStrategy select_strategy_from_string(const std::string& name);

/// Number of sub-rows pruned for off-diagonal fraction q out of `candidates`.
std::int64_t prune_budget(double q, std::int64_t candidates);

/// Prunes floor(q * I * (N-1)) sub-rows of one layer. Sub-rows already pruned in
/// `previous` stay pruned and count toward the budget. l1 takes the lowest
/// scores, ties broken by ascending (feature, destination); random draws from
/// a generator seeded with (seed, layer id).
LayerMask select_subrows(const SubrowScores& scores, int out_features, double q,
                         SelectStrategy strategy, std::uint64_t seed = 0,
                         const LayerMask* previous = nullptr);

/// Applies select_subrows to every sparsifiable layer. `per_layer_q`, when
/// given, holds one fraction per layer id (entries for other layers ignored).
BlockMask select_model(const ModelSpec& model, const WeightStore& weights, int nodes, double q,
                       SelectStrategy strategy, std::uint64_t seed = 0,
                       const BlockMask* previous = nullptr,
                       const std::vector<double>* per_layer_q = nullptr);

/// Baseline partitionings: each layer is either fully dense (q = 0) or fully
/// independent (q = 1). Layer ids may range over [0, layer count].
BlockMask pattern_independent(const ModelSpec& model, int nodes);
BlockMask pattern_dense_then_split(const ModelSpec& model, int nodes, int split_layer);
BlockMask pattern_split_then_aggregate(const ModelSpec& model, int nodes, int aggr_layer);

}  // namespace sparsecomm
