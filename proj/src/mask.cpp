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

#include "sparsecomm/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

namespace sparsecomm {

LayerMask::LayerMask(int layer_id, int in_features, int out_features, int nodes)
    : layer_id_(layer_id), in_(in_features), out_(out_features), nodes_(nodes) {
    if (nodes < 1) throw DomainError("node count must be at least 1");
    if (in_features <= 0 || out_features <= 0 || in_features % nodes != 0 ||
        out_features % nodes != 0)
        throw ShapeError("layer " + std::to_string(layer_id) + ": I=" + std::to_string(in_features) +
                         ", O=" + std::to_string(out_features) + " not divisible by N=" +
                         std::to_string(nodes));
    keep_.assign(static_cast<std::size_t>(in_features) * out_features, 1);
}

void LayerMask::set_subrow(int f, int dst, bool value) {
    const int lo = dst * out_per_node();
    std::fill_n(keep_.begin() + static_cast<std::ptrdiff_t>(index(f, lo)), out_per_node(),
                value ? 1 : 0);
}

void LayerMask::validate() const {
    const int in_n = in_per_node();
    const int out_n = out_per_node();
    for (int f = 0; f < in_; ++f) {
        const int owner = f / in_n;
        for (int j = 0; j < nodes_; ++j) {
            const std::uint8_t* row = keep_.data() + index(f, j * out_n);
            if (j == owner) {
                if (std::find(row, row + out_n, 0) != row + out_n)
                    throw ShapeError("layer " + std::to_string(layer_id_) + ": diagonal block " +
                                     std::to_string(j) + " prunes feature " + std::to_string(f));
            } else if (std::find(row, row + out_n, row[0] == 0 ? 1 : 0) != row + out_n) {
                throw ShapeError("layer " + std::to_string(layer_id_) + ": sub-row (feature " +
                                 std::to_string(f) + ", block " + std::to_string(j) +
                                 ") is partially pruned");
            }
        }
    }
}

bool LayerMask::is_dense() const {
    return std::all_of(keep_.begin(), keep_.end(), [](std::uint8_t v) { return v != 0; });
}

std::int64_t LayerMask::kept_kernels() const {
    return std::count(keep_.begin(), keep_.end(), std::uint8_t{1});
}

std::int64_t LayerMask::kept_kernels_for_node(int node) const {
    const int out_n = out_per_node();
    std::int64_t kept = 0;
    for (int f = 0; f < in_; ++f) {
        const std::uint8_t* row = keep_.data() + index(f, node * out_n);
        kept += std::count(row, row + out_n, std::uint8_t{1});
    }
    return kept;
}

BlockMask BlockMask::dense(const ModelSpec& model, int nodes) {
    validate_model(model, nodes);
    BlockMask m(nodes, model.layers.size());
    for (const LayerSpec& l : model.layers) {
        if (l.sparsifiable) m.set_layer(l.id, LayerMask(l.id, l.in_features, l.out_features, nodes));
    }
    return m;
}

const LayerMask* BlockMask::layer(int id) const {
    if (id < 0 || id >= static_cast<int>(layers_.size()) || !layers_[id]) return nullptr;
    return &*layers_[id];
}

LayerMask* BlockMask::layer(int id) {
    if (id < 0 || id >= static_cast<int>(layers_.size()) || !layers_[id]) return nullptr;
    return &*layers_[id];
}

void BlockMask::set_layer(int id, LayerMask mask) {
    if (id < 0 || id >= static_cast<int>(layers_.size()))
        throw ShapeError("mask has no slot for layer " + std::to_string(id));
    if (mask.nodes() != nodes_)
        throw ShapeError("layer " + std::to_string(id) + " mask built for N=" +
                         std::to_string(mask.nodes()) + ", block mask uses N=" +
                         std::to_string(nodes_));
    layers_[id] = std::move(mask);
}

void BlockMask::check(const ModelSpec& model) const {
    if (layers_.size() != model.layers.size())
        throw ShapeError("mask covers " + std::to_string(layers_.size()) + " layers, model has " +
                         std::to_string(model.layers.size()));
    for (const LayerSpec& l : model.layers) {
        const LayerMask* lm = layer(l.id);
        if (l.sparsifiable != (lm != nullptr))
            throw ShapeError("layer " + std::to_string(l.id) +
                             (l.sparsifiable ? ": sparsifiable layer has no mask"
                                             : ": mask given for a non-sparsifiable layer"));
        if (!lm) continue;
        if (lm->in_features() != l.in_features || lm->out_features() != l.out_features)
            throw ShapeError("layer " + std::to_string(l.id) + ": mask is " +
                             std::to_string(lm->in_features()) + "x" +
                             std::to_string(lm->out_features()) + ", layer is " +
                             std::to_string(l.in_features) + "x" + std::to_string(l.out_features));
        lm->validate();
    }
}

// ---------------------------------------------------------------------------
// Plans

std::int64_t CommPlan::messages(int layer_id) const {
    const LayerPlan& lp = layers.at(static_cast<std::size_t>(layer_id));
    std::int64_t n = 0;
    for (const auto& s : lp.sends) n += static_cast<std::int64_t>(s.size());
    return n;
}

CommPlan mask_to_commplan(const BlockMask& mask) {
    const int n = mask.nodes();
    CommPlan plan;
    plan.nodes = n;
    plan.layers.resize(mask.layer_count());
    for (std::size_t id = 0; id < mask.layer_count(); ++id) {
        LayerPlan& lp = plan.layers[id];
        lp.layer_id = static_cast<int>(id);
        lp.sends.assign(static_cast<std::size_t>(n) * n, {});
        const LayerMask* lm = mask.layer(static_cast<int>(id));
        if (!lm) continue;
        lm->validate();
        lp.exchanges = true;
        for (int f = 0; f < lm->in_features(); ++f) {
            const int src = lm->in_owner(f);
            for (int dst = 0; dst < n; ++dst) {
                if (dst != src && lm->subrow_kept(f, dst))
                    lp.sends[static_cast<std::size_t>(src) * n + dst].push_back(f);
            }
        }
    }
    return plan;
}

BlockMask plan_to_mask(const ModelSpec& model, const CommPlan& plan) {
    const int n = plan.nodes;
    validate_model(model, n);
    if (plan.layers.size() != model.layers.size())
        throw FormatError("plan covers " + std::to_string(plan.layers.size()) +
                          " layers, model has " + std::to_string(model.layers.size()));
    BlockMask mask(n, model.layers.size());
    for (const LayerSpec& l : model.layers) {
        if (!l.sparsifiable) continue;
        const LayerPlan& lp = plan.layers[l.id];
        if (!lp.exchanges || lp.sends.size() != static_cast<std::size_t>(n) * n)
            throw FormatError("plan has no entry for sparsifiable layer " + std::to_string(l.id));
        LayerMask lm(l.id, l.in_features, l.out_features, n);
        for (int f = 0; f < l.in_features; ++f)
            for (int j = 0; j < n; ++j)
                if (j != lm.in_owner(f)) lm.set_subrow(f, j, false);
        for (int src = 0; src < n; ++src) {
            for (int dst = 0; dst < n; ++dst) {
                for (int f : lp.to(src, dst, n)) {
                    if (src == dst || f < 0 || f >= l.in_features || lm.in_owner(f) != src)
                        throw FormatError("layer " + std::to_string(l.id) + ": feature " +
                                          std::to_string(f) + " is not owned by node " +
                                          std::to_string(src));
                    lm.set_subrow(f, dst, true);
                }
            }
        }
        mask.set_layer(l.id, std::move(lm));
    }
    return mask;
}

CommPlan build_comm_plan(const ModelSpec& model, const BlockMask& mask) {
    const int n = mask.nodes();
    validate_model(model, n);
    mask.check(model);
    CommPlan plan = mask_to_commplan(mask);
    for (const LayerSpec& l : model.layers) {
        if (l.sparsifiable) continue;
        const bool gathers = l.kind == LayerKind::conv2d || l.kind == LayerKind::dense ||
                             l.kind == LayerKind::feature_matmul;
        if (!gathers || n == 1) continue;
        LayerPlan& lp = plan.layers[l.id];
        lp.exchanges = true;
        for (int src = 0; src < n; ++src) {
            std::vector<int> owned(split_begin(l.in_features, n, src + 1) -
                                   split_begin(l.in_features, n, src));
            std::iota(owned.begin(), owned.end(), split_begin(l.in_features, n, src));
            for (int dst = 0; dst < n; ++dst)
                if (dst != src) lp.sends[static_cast<std::size_t>(src) * n + dst] = owned;
        }
    }
    return plan;
}

std::vector<LayerSparsity> sparsity_stats(const BlockMask& mask) {
    std::vector<LayerSparsity> out;
    const int n = mask.nodes();
    for (std::size_t id = 0; id < mask.layer_count(); ++id) {
        const LayerMask* lm = mask.layer(static_cast<int>(id));
        if (!lm) continue;
        lm->validate();
        LayerSparsity s;
        s.layer_id = static_cast<int>(id);
        s.possible_messages = std::int64_t{lm->in_features()} * (n - 1);
        for (int f = 0; f < lm->in_features(); ++f)
            for (int j = 0; j < n; ++j)
                if (j != lm->in_owner(f) && lm->subrow_kept(f, j)) ++s.sent_messages;
        const std::int64_t kernels = std::int64_t{lm->in_features()} * lm->out_features();
        if (s.possible_messages > 0) {
            s.s_comm = Rational::make(s.possible_messages - s.sent_messages, s.possible_messages);
            s.off_diag_prune_fraction = s.s_comm;
        }
        s.s_wt = Rational::make(kernels - lm->kept_kernels(), kernels);
        s.s_comp = s.s_wt;
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Selection

SubrowScores score_subrows_l1(const LayerSpec& layer, const LayerWeights& weights, int nodes) {
    if (!layer.sparsifiable)
        throw DomainError("layer " + std::to_string(layer.id) + " is not sparsifiable");
    if (nodes < 1 || layer.in_features % nodes != 0 || layer.out_features % nodes != 0)
        throw ShapeError("layer " + std::to_string(layer.id) + ": not divisible by N=" +
                         std::to_string(nodes));
    if (static_cast<std::int64_t>(weights.weights.size()) != layer.weight_count())
        throw ShapeError("layer " + std::to_string(layer.id) + ": expected " +
                         std::to_string(layer.weight_count()) + " weights, got " +
                         std::to_string(weights.weights.size()));
    SubrowScores s;
    s.layer_id = layer.id;
    s.in_features = layer.in_features;
    s.nodes = nodes;
    s.score.assign(static_cast<std::size_t>(layer.in_features) * nodes, 0.0);
    const int in_n = layer.in_features / nodes;
    const int out_n = layer.out_features / nodes;
    const std::int64_t k = std::int64_t{layer.kernel_h} * layer.kernel_w;
    for (int f = 0; f < layer.in_features; ++f) {
        const int owner = f / in_n;
        for (int j = 0; j < nodes; ++j) {
            if (j == owner) continue;
            double sum = 0.0;
            for (int o = j * out_n; o < (j + 1) * out_n; ++o) {
                const float* w = weights.weights.data() + (std::int64_t{o} * layer.in_features + f) * k;
                for (std::int64_t t = 0; t < k; ++t) sum += std::fabs(static_cast<double>(w[t]));
            }
            s.score[static_cast<std::size_t>(f) * nodes + j] = sum;
        }
    }
    return s;
}

std::string to_string(SelectStrategy s) { return s == SelectStrategy::l1 ? "l1" : "random"; }

SelectStrategy select_strategy_from_string(const std::string& name) {
    if (name == "l1" || name == "disco_l1") return SelectStrategy::l1;
    if (name == "random") return SelectStrategy::random;
    throw FormatError("unknown selection strategy '" + name + "'");
}

std::int64_t prune_budget(double q, std::int64_t candidates) {
    if (!(q >= 0.0 && q <= 1.0))
        throw DomainError("prune fraction must lie in [0, 1], got " + std::to_string(q));
    // The epsilon absorbs representation error in products like 0.29 * 100.
    const auto k = static_cast<std::int64_t>(std::floor(q * static_cast<double>(candidates) + 1e-9));
    return std::min(k, candidates);
}

LayerMask select_subrows(const SubrowScores& scores, int out_features, double q,
                         SelectStrategy strategy, std::uint64_t seed, const LayerMask* previous) {
    const int in = scores.in_features;
    const int n = scores.nodes;
    LayerMask mask(scores.layer_id, in, out_features, n);
    if (previous) {
        if (previous->in_features() != in || previous->out_features() != out_features ||
            previous->nodes() != n)
            throw ShapeError("layer " + std::to_string(scores.layer_id) +
                             ": previous mask has a different shape");
        previous->validate();
    }
    const std::int64_t budget = prune_budget(q, std::int64_t{in} * (n - 1));

    struct Candidate {
        double score;
        int f;
        int j;
    };
    std::vector<Candidate> free;
    std::int64_t forced = 0;
    for (int f = 0; f < in; ++f) {
        const int owner = mask.in_owner(f);
        for (int j = 0; j < n; ++j) {
            if (j == owner) continue;
            if (previous && !previous->subrow_kept(f, j)) {
                mask.set_subrow(f, j, false);
                ++forced;
            } else {
                free.push_back({scores.at(f, j), f, j});
            }
        }
    }
    if (forced > budget)
        throw DomainError("layer " + std::to_string(scores.layer_id) + ": " +
                          std::to_string(forced) + " sub-rows already pruned exceed the budget of " +
                          std::to_string(budget) + " for q=" + std::to_string(q));
    const auto remaining = static_cast<std::size_t>(budget - forced);

    if (strategy == SelectStrategy::l1) {
        std::sort(free.begin(), free.end(), [](const Candidate& a, const Candidate& b) {
            return std::tie(a.score, a.f, a.j) < std::tie(b.score, b.f, b.j);
        });
    } else {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(scores.layer_id)};
        std::mt19937_64 rng(seq);
        std::shuffle(free.begin(), free.end(), rng);
    }
    for (std::size_t k = 0; k < remaining; ++k) mask.set_subrow(free[k].f, free[k].j, false);
    return mask;
}

BlockMask select_model(const ModelSpec& model, const WeightStore& weights, int nodes, double q,
                       SelectStrategy strategy, std::uint64_t seed, const BlockMask* previous,
                       const std::vector<double>* per_layer_q) {
    validate_model(model, nodes);
    weights.check_shapes(model);
    if (previous) previous->check(model);
    if (per_layer_q && per_layer_q->size() != model.layers.size())
        throw ShapeError("per-layer sparsity has " + std::to_string(per_layer_q->size()) +
                         " entries, model has " + std::to_string(model.layers.size()) + " layers");
    BlockMask mask(nodes, model.layers.size());
    for (const LayerSpec& l : model.layers) {
        if (!l.sparsifiable) continue;
        const double layer_q = per_layer_q ? (*per_layer_q)[l.id] : q;
        const SubrowScores scores = score_subrows_l1(l, weights.at(l.id), nodes);
        mask.set_layer(l.id, select_subrows(scores, l.out_features, layer_q, strategy, seed,
                                            previous ? previous->layer(l.id) : nullptr));
    }
    return mask;
}

namespace {

template <typename PruneAll>
BlockMask pattern(const ModelSpec& model, int nodes, PruneAll prune_all) {
    BlockMask mask = BlockMask::dense(model, nodes);
    for (const LayerSpec& l : model.layers) {
        LayerMask* lm = mask.layer(l.id);
        if (!lm || !prune_all(l.id)) continue;
        for (int f = 0; f < l.in_features; ++f)
            for (int j = 0; j < nodes; ++j)
                if (j != lm->in_owner(f)) lm->set_subrow(f, j, false);
    }
    return mask;
}

void check_boundary(const ModelSpec& model, int id, const char* what) {
    if (id < 0 || id > static_cast<int>(model.layers.size()))
        throw DomainError(std::string(what) + " " + std::to_string(id) + " outside [0, " +
                          std::to_string(model.layers.size()) + "]");
}

}  // namespace

BlockMask pattern_independent(const ModelSpec& model, int nodes) {
    return pattern(model, nodes, [](int) { return true; });
}

BlockMask pattern_dense_then_split(const ModelSpec& model, int nodes, int split_layer) {
    check_boundary(model, split_layer, "split layer");
    return pattern(model, nodes, [split_layer](int id) { return id >= split_layer; });
}

BlockMask pattern_split_then_aggregate(const ModelSpec& model, int nodes, int aggr_layer) {
    check_boundary(model, aggr_layer, "aggregation layer");
    return pattern(model, nodes, [aggr_layer](int id) { return id < aggr_layer; });
}

}  // namespace sparsecomm
