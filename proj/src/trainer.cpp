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

#include "sparsecomm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "kernels_impl.hpp"

namespace sparsecomm {

namespace {

detail::ConvGeom geometry(const LayerSpec& l) {
    return {l.in_features, l.in_height, l.in_width, l.out_features, l.kernel_h, l.kernel_w,
            l.stride,      l.padding,   l.out_height(), l.out_width()};
}

struct KeepFn {
    const LayerMask* mask;
    bool operator()(int i, int o) const { return mask == nullptr || mask->keep(i, o); }
};

// Parameters, activations and gradients of one model in precision T.
template <typename T>
class Net {
public:
    Net(const ModelSpec& model, const WeightStore& store, const BlockMask& mask)
        : model_(model), masks_(model.layers.size(), nullptr), pos_(model.layers.size(), -1) {
        for (std::size_t id = 0; id < model.layers.size(); ++id) {
            if (id < mask.layer_count()) masks_[id] = mask.layer(static_cast<int>(id));
            const Shape3 s = model.output_shape(static_cast<int>(id));
            acts_.emplace_back(static_cast<std::size_t>(s.size()));
            grads_.emplace_back(static_cast<std::size_t>(s.size()));
            const LayerKind k = model.layers[id].kind;
            if (k == LayerKind::feature_matmul)
                throw Error("layer " + std::to_string(id) + ": feature_matmul cannot be trained");
        }
        for (const LayerWeights& lw : store.layers()) {
            pos_[lw.layer_id] = static_cast<int>(w.size());
            w.emplace_back(lw.weights.begin(), lw.weights.end());
            b.emplace_back(lw.bias.begin(), lw.bias.end());
            gw.emplace_back(lw.weights.size());
            gb.emplace_back(lw.bias.size());
        }
    }

    void forward(const T* x) {
        for (const LayerSpec& l : model_.layers) {
            const T* in = operand(l.source(), x);
            T* out = acts_[l.id].data();
            const detail::ConvGeom g = geometry(l);
            const int p = pos_[l.id];
            switch (l.kind) {
                case LayerKind::conv2d:
                case LayerKind::dense:
                    detail::conv_forward(g, in, w[p].data(), b[p].data(), l.relu, KeepFn{masks_[l.id]}, out);
                    break;
                case LayerKind::dwconv:
                    detail::depthwise_forward(g, in, w[p].data(), b[p].data(), l.relu, out);
                    break;
                case LayerKind::pool:
                    detail::pool_forward(g, l.pool_type == PoolType::max, in, out);
                    break;
                case LayerKind::elementwise_add: {
                    const T* other = operand(*l.residual_from, x);
                    const std::size_t n = acts_[l.id].size();
                    for (std::size_t k = 0; k < n; ++k) {
                        const T v = in[k] + other[k];
                        out[k] = (l.relu && v < T(0)) ? T(0) : v;
                    }
                    break;
                }
                case LayerKind::feature_matmul:
                    break;
            }
        }
    }

    const std::vector<T>& logits() const { return acts_.back(); }

    T loss(int label) const {
        const std::vector<T>& z = logits();
        const T m = *std::max_element(z.begin(), z.end());
        T sum = 0;
        for (T v : z) sum += std::exp(v - m);
        return std::log(sum) + m - z[static_cast<std::size_t>(label)];
    }

    // Accumulates parameter gradients of the loss at the last forward pass.
    T backward(const T* x, int label) {
        for (auto& g : grads_) std::fill(g.begin(), g.end(), T(0));
        const std::vector<T>& z = logits();
        std::vector<T>& top = grads_.back();
        const T m = *std::max_element(z.begin(), z.end());
        T sum = 0;
        for (T v : z) sum += std::exp(v - m);
        for (std::size_t k = 0; k < z.size(); ++k) top[k] = std::exp(z[k] - m) / sum;
        top[static_cast<std::size_t>(label)] -= T(1);
        const T value = std::log(sum) + m - z[static_cast<std::size_t>(label)];

        for (int id = static_cast<int>(model_.layers.size()) - 1; id >= 0; --id) {
            const LayerSpec& l = model_.layers[id];
            T* g = grads_[id].data();
            const std::vector<T>& out = acts_[id];
            if (l.relu && l.kind != LayerKind::pool)
                for (std::size_t k = 0; k < out.size(); ++k)
                    if (!(out[k] > T(0))) g[k] = T(0);
            const int src = l.source();
            const T* in = operand(src, x);
            T* gin = src >= 0 ? grads_[src].data() : nullptr;
            const detail::ConvGeom geo = geometry(l);
            const int p = pos_[id];
            switch (l.kind) {
                case LayerKind::conv2d:
                case LayerKind::dense:
                    detail::conv_backward(geo, in, w[p].data(), g, KeepFn{masks_[id]}, gw[p].data(),
                                          gb[p].data(), gin);
                    break;
                case LayerKind::dwconv:
                    depthwise_backward(geo, in, w[p].data(), g, gw[p].data(), gb[p].data(), gin);
                    break;
                case LayerKind::pool:
                    if (gin) detail::pool_backward(geo, l.pool_type == PoolType::max, in, g, gin);
                    break;
                case LayerKind::elementwise_add: {
                    if (gin)
                        for (std::size_t k = 0; k < out.size(); ++k) gin[k] += g[k];
                    const int r = *l.residual_from;
                    if (r >= 0)
                        for (std::size_t k = 0; k < out.size(); ++k) grads_[r][k] += g[k];
                    break;
                }
                case LayerKind::feature_matmul:
                    break;
            }
        }
        return value;
    }

    void zero_param_grads() {
        for (auto& g : gw) std::fill(g.begin(), g.end(), T(0));
        for (auto& g : gb) std::fill(g.begin(), g.end(), T(0));
    }

    void store_into(WeightStore& store) const {
        for (LayerWeights& lw : store.layers()) {
            const int p = pos_[lw.layer_id];
            std::transform(w[p].begin(), w[p].end(), lw.weights.begin(), [](T v) { return static_cast<float>(v); });
            std::transform(b[p].begin(), b[p].end(), lw.bias.begin(), [](T v) { return static_cast<float>(v); });
        }
    }

    const LayerMask* mask_of(int id) const { return masks_[id]; }
    int position(int id) const { return pos_[id]; }

    std::vector<std::vector<T>> w, b, gw, gb;

private:
    const T* operand(int src, const T* x) const { return src < 0 ? x : acts_[src].data(); }

    static void depthwise_backward(const detail::ConvGeom& g, const T* in, const T* weights,
                                   const T* grad_out, T* grad_w, T* grad_b, T* grad_in) {
        const int plane = g.out_h * g.out_w;
        const int in_plane = g.in_h * g.in_w;
        for (int c = 0; c < g.out_channels; ++c) {
            const T* go = grad_out + static_cast<std::int64_t>(c) * plane;
            const T* src = in + static_cast<std::int64_t>(c) * in_plane;
            T* gi = grad_in ? grad_in + static_cast<std::int64_t>(c) * in_plane : nullptr;
            for (int p = 0; p < plane; ++p) grad_b[c] += go[p];
            for (int ky = 0; ky < g.kh; ++ky) {
                int y0, y1;
                detail::valid_range(ky, g.stride, g.pad, g.in_h, g.out_h, y0, y1);
                for (int kx = 0; kx < g.kw; ++kx) {
                    int x0, x1;
                    detail::valid_range(kx, g.stride, g.pad, g.in_w, g.out_w, x0, x1);
                    const std::int64_t widx = static_cast<std::int64_t>(c) * g.kh * g.kw + ky * g.kw + kx;
                    T acc = 0;
                    for (int y = y0; y < y1; ++y) {
                        const std::int64_t r = static_cast<std::int64_t>(y * g.stride + ky - g.pad) * g.in_w;
                        for (int x = x0; x < x1; ++x) {
                            const std::int64_t at = r + x * g.stride + kx - g.pad;
                            acc += go[y * g.out_w + x] * src[at];
                            if (gi) gi[at] += weights[widx] * go[y * g.out_w + x];
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }

    const ModelSpec& model_;
    std::vector<const LayerMask*> masks_;
    std::vector<int> pos_;
    std::vector<std::vector<T>> acts_, grads_;
};

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

void check_data(const ModelSpec& model, const Dataset& data) {
    if (data.image_shape != model.input)
        throw ShapeError("dataset images are " + to_string(data.image_shape) + ", model expects " +
                         to_string(model.input));
    const Shape3 out = model.output_shape(static_cast<int>(model.layers.size()) - 1);
    if (out.size() < data.classes)
        throw ShapeError("model produces " + std::to_string(out.size()) + " logits for " +
                         std::to_string(data.classes) + " classes");
}

const float* sample(const std::vector<float>& images, const Shape3& shape, std::size_t k) {
    return images.data() + k * static_cast<std::size_t>(shape.size());
}

}  // namespace

void TrainConfig::validate() const {
    if (nodes < 1) throw DomainError("nodes must be at least 1");
    if (epochs_dense < 0) throw DomainError("epochs_dense must be non-negative");
    if (batch_size < 1) throw DomainError("batch_size must be at least 1");
    if (!(lr >= 0.0) || !(finetune_lr >= 0.0)) throw DomainError("learning rates must be non-negative");
    if (!(lr_decay > 0.0) || lr_step < 1) throw DomainError("lr_decay must be positive and lr_step at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
    double last = 0.0;
    for (const PruneStage& s : schedule) {
        if (!(s.p > last && s.p <= 1.0))
            throw DomainError("prune fractions must be strictly increasing within (0, 1]");
        if (s.epochs < 1) throw DomainError("every prune stage needs at least one finetune epoch");
        last = s.p;
    }
}

std::vector<EpochRecord> train_epochs(const ModelSpec& model, WeightStore& weights,
                                      const BlockMask& mask, const Dataset& data, int epochs,
                                      double lr, double lr_decay, int lr_step, double momentum,
                                      int batch_size, std::uint64_t seed, int stage, double p,
                                      const EpochCallback& on_epoch) {
    check_data(model, data);
    weights.check_shapes(model);
    if (mask.layer_count() > 0) {
        mask.check(model);
        apply_mask(model, mask, weights);
    }
    if (batch_size < 1 || lr_step < 1) throw DomainError("batch size and lr step must be positive");

    Net<float> net(model, weights, mask);
    std::vector<std::vector<float>> velocity_w, velocity_b;
    for (const auto& v : net.w) velocity_w.emplace_back(v.size(), 0.0f);
    for (const auto& v : net.b) velocity_b.emplace_back(v.size(), 0.0f);

    std::vector<std::size_t> order(data.train_size());
    std::vector<EpochRecord> history;
    const float mom = static_cast<float>(momentum);
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = make_rng(seed, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        const float rate = static_cast<float>(lr * std::pow(lr_decay, (epoch - 1) / lr_step));

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
            net.zero_param_grads();
            for (std::size_t k = start; k < end; ++k) {
                const float* x = sample(data.train_images, data.image_shape, order[k]);
                net.forward(x);
                const float l = net.backward(x, data.train_labels[order[k]]);
                if (!std::isfinite(l)) throw DivergenceError(epoch);
                loss_sum += l;
            }
            const float scale = 1.0f / static_cast<float>(end - start);
            for (std::size_t q = 0; q < net.w.size(); ++q) {
                for (std::size_t k = 0; k < net.w[q].size(); ++k) {
                    velocity_w[q][k] = mom * velocity_w[q][k] + net.gw[q][k] * scale;
                    net.w[q][k] -= rate * velocity_w[q][k];
                }
                for (std::size_t k = 0; k < net.b[q].size(); ++k) {
                    velocity_b[q][k] = mom * velocity_b[q][k] + net.gb[q][k] * scale;
                    net.b[q][k] -= rate * velocity_b[q][k];
                }
            }
        }
        net.store_into(weights);
        EpochRecord rec{stage, p, epoch, order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size()),
                        evaluate(model, weights, mask, data)};
        if (!std::isfinite(rec.train_loss)) throw DivergenceError(epoch);
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

DenseResult train_dense(const ModelSpec& model, const Dataset& data, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
    config.validate();
    validate_model(model, config.nodes);
    DenseResult r;
    r.weights = WeightStore::random(model, config.seed);
    const BlockMask mask = BlockMask::dense(model, config.nodes);
    r.history = train_epochs(model, r.weights, mask, data, config.epochs_dense, config.lr,
                             config.lr_decay, config.lr_step, config.momentum, config.batch_size,
                             config.seed, 0, 0.0, on_epoch);
    return r;
}

WeightStore finetune_masked(const ModelSpec& model, WeightStore weights, const BlockMask& mask,
                            const Dataset& data, int epochs, double lr, const TrainConfig& config,
                            int stage, double p, const EpochCallback& on_epoch) {
    train_epochs(model, weights, mask, data, epochs, lr, 1.0, 1, config.momentum, config.batch_size,
                 config.seed, stage, p, on_epoch);
    return weights;
}

std::vector<StageCheckpoint> prune_schedule(const ModelSpec& model, const Dataset& data,
                                            const TrainConfig& config, const StageCheckpoint& start,
                                            const EpochCallback& on_epoch) {
    config.validate();
    std::vector<StageCheckpoint> out;
    const StageCheckpoint* current = &start;
    for (const PruneStage& s : config.schedule) {
        if (s.p < current->p)
            throw DomainError("prune fraction " + std::to_string(s.p) + " is below the current fraction " +
                              std::to_string(current->p));
        const int stage = current->stage + 1;
        const WeightStore& scored = config.one_shot ? start.weights : current->weights;
        const std::uint64_t select_seed = config.seed ^ (static_cast<std::uint64_t>(stage) << 32);
        BlockMask mask = select_model(model, scored, config.nodes, s.p, config.strategy, select_seed,
                                      &current->mask);
        WeightStore w = finetune_masked(model, current->weights, mask, data, s.epochs,
                                        config.finetune_lr, config, stage, s.p, on_epoch);
        const double acc = evaluate(model, w, mask, data);
        out.push_back({stage, s.p, std::move(mask), std::move(w), acc});
        current = &out.back();
    }
    return out;
}

std::vector<StageCheckpoint> iterative_disco(const ModelSpec& model, const Dataset& data,
                                             const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    DenseResult dense = train_dense(model, data, config, on_epoch);
    BlockMask mask = BlockMask::dense(model, config.nodes);
    const double acc = evaluate(model, dense.weights, mask, data);
    std::vector<StageCheckpoint> out;
    out.reserve(config.schedule.size() + 1);
    out.push_back({0, 0.0, std::move(mask), std::move(dense.weights), acc});
    auto rest = prune_schedule(model, data, config, out.front(), on_epoch);
    for (auto& c : rest) out.push_back(std::move(c));
    return out;
}

double evaluate(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                const Dataset& data) {
    check_data(model, data);
    if (data.test_size() == 0) throw DomainError("dataset has no test samples");
    const bool masked = mask.layer_count() > 0;
    std::size_t correct = 0;
    Tensor x(data.image_shape);
    for (std::size_t k = 0; k < data.test_size(); ++k) {
        const float* src = sample(data.test_images, data.image_shape, k);
        std::copy(src, src + data.image_shape.size(), x.data.begin());
        const Tensor y = masked ? forward_model(model, weights, mask, x) : forward_model(model, weights, x);
        const auto best = std::max_element(y.data.begin(), y.data.begin() + data.classes) - y.data.begin();
        if (best == data.test_labels[k]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.test_size());
}

GradientResult compute_gradients(const ModelSpec& model, const WeightStore& weights,
                                 const BlockMask& mask, const Tensor& input, int label) {
    validate_model(model);
    weights.check_shapes(model);
    if (input.shape != model.input) throw ShapeError("input shape does not match the model");
    const Shape3 out = model.output_shape(static_cast<int>(model.layers.size()) - 1);
    if (label < 0 || label >= out.size()) throw DomainError("label outside the model's logits");
    const std::vector<double> x(input.data.begin(), input.data.end());
    Net<double> net(model, weights, mask);
    net.forward(x.data());
    GradientResult r;
    r.loss = net.backward(x.data(), label);
    r.weight_grads = net.gw;
    r.bias_grads = net.gb;
    return r;
}

double gradient_check(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                      const Tensor& input, int label, int samples, std::uint64_t seed) {
    const GradientResult analytic = compute_gradients(model, weights, mask, input, label);
    const std::vector<double> x(input.data.begin(), input.data.end());
    Net<double> net(model, weights, mask);

    // Candidate parameters: (weighted layer position, is_bias, index).
    struct Param {
        int pos;
        bool bias;
        std::size_t index;
    };
    std::vector<Param> candidates;
    for (const LayerWeights& lw : weights.layers()) {
        const LayerSpec& l = model.layers[lw.layer_id];
        const int pos = net.position(lw.layer_id);
        const LayerMask* lm = net.mask_of(lw.layer_id);
        const std::size_t per_kernel = static_cast<std::size_t>(l.kernel_h) * l.kernel_w;
        for (std::size_t k = 0; k < lw.weights.size(); ++k) {
            if (lm) {
                const int o = static_cast<int>(k / (per_kernel * l.in_features));
                const int i = static_cast<int>((k / per_kernel) % l.in_features);
                if (!lm->keep(i, o)) continue;
            }
            candidates.push_back({pos, false, k});
        }
        for (std::size_t k = 0; k < lw.bias.size(); ++k) candidates.push_back({pos, true, k});
    }
    std::vector<Param> chosen;
    auto rng = make_rng(seed, 0, 0);
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(chosen),
                static_cast<std::size_t>(std::max(samples, 0)), rng);

    constexpr double h = 1e-3;
    double worst = 0.0;
    for (const Param& prm : chosen) {
        double& v = prm.bias ? net.b[prm.pos][prm.index] : net.w[prm.pos][prm.index];
        const double orig = v;
        v = orig + h;
        net.forward(x.data());
        const double up = net.loss(label);
        v = orig - h;
        net.forward(x.data());
        const double down = net.loss(label);
        v = orig;
        const double fd = (up - down) / (2.0 * h);
        const double a = prm.bias ? analytic.bias_grads[prm.pos][prm.index]
                                  : analytic.weight_grads[prm.pos][prm.index];
        const double scale = std::max({std::fabs(a), std::fabs(fd), 1e-4});
        worst = std::max(worst, std::fabs(a - fd) / scale);
    }
    return worst;
}

}  // namespace sparsecomm
