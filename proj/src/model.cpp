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

#include "sparsecomm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kernels_impl.hpp"
#include "sparsecomm/mask.hpp"

namespace sparsecomm {

namespace {

std::string layer_tag(const LayerSpec& l) {
    return "layer " + std::to_string(l.id) + " (" + to_string(l.kind) + ")";
}

}  // namespace

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::dense: return "dense";
        case LayerKind::dwconv: return "dwconv";
        case LayerKind::elementwise_add: return "elementwise_add";
        case LayerKind::pool: return "pool";
        case LayerKind::feature_matmul: return "feature_matmul";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (auto k : {LayerKind::conv2d, LayerKind::dense, LayerKind::dwconv,
                   LayerKind::elementwise_add, LayerKind::pool, LayerKind::feature_matmul}) {
        if (to_string(k) == name) return k;
    }
    throw FormatError("unknown layer kind '" + name + "'");
}

std::string to_string(const Shape3& s) {
    return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
           std::to_string(s.width) + ")";
}

int LayerSpec::out_height() const {
    switch (kind) {
        case LayerKind::conv2d:
        case LayerKind::dwconv:
        case LayerKind::pool:
            return (in_height + 2 * padding - kernel_h) / stride + 1;
        case LayerKind::dense: return 1;
        default: return in_height;
    }
}

int LayerSpec::out_width() const {
    switch (kind) {
        case LayerKind::conv2d:
        case LayerKind::dwconv:
        case LayerKind::pool:
            return (in_width + 2 * padding - kernel_w) / stride + 1;
        case LayerKind::dense: return 1;
        default: return in_width;
    }
}

std::int64_t LayerSpec::weight_count() const {
    switch (kind) {
        case LayerKind::conv2d:
        case LayerKind::dense:
            return std::int64_t{out_features} * in_features * kernel_h * kernel_w;
        case LayerKind::dwconv: return std::int64_t{out_features} * kernel_h * kernel_w;
        default: return 0;
    }
}

Shape3 ModelSpec::output_shape(int id) const {
    if (id == -1) return input;
    if (id < 0 || id >= static_cast<int>(layers.size()))
        throw ShapeError("no layer with id " + std::to_string(id));
    const LayerSpec& l = layers[id];
    return {l.out_features, l.out_height(), l.out_width()};
}

int ModelSpec::weighted_layer_count() const {
    return static_cast<int>(std::count_if(layers.begin(), layers.end(),
                                          [](const LayerSpec& l) { return l.has_weights(); }));
}

void validate_model(const ModelSpec& model, std::optional<int> nodes) {
    if (model.layers.empty()) throw ShapeError("model '" + model.name + "' has no layers");
    if (model.input.size() <= 0) throw ShapeError("model input shape must be positive");
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        const LayerSpec& l = model.layers[k];
        const std::string tag = layer_tag(l);
        if (l.id != static_cast<int>(k))
            throw ShapeError("layer ids must be consecutive from 0; found " + std::to_string(l.id) +
                             " at position " + std::to_string(k));
        if (l.in_features <= 0 || l.out_features <= 0 || l.kernel_h <= 0 || l.kernel_w <= 0 ||
            l.stride <= 0 || l.padding < 0)
            throw ShapeError(tag + ": non-positive dimension");
        const int src = l.source();
        if (src < -1 || src >= l.id) throw ShapeError(tag + ": input_from must name an earlier layer");
        const Shape3 expected = model.output_shape(src);
        const Shape3 actual{l.in_features, l.in_height, l.in_width};
        if (expected != actual)
            throw ShapeError(tag + ": input shape " + to_string(actual) + " does not match source " +
                             std::to_string(src) + " output " + to_string(expected));
        if (l.out_height() <= 0 || l.out_width() <= 0)
            throw ShapeError(tag + ": empty output for the given kernel/stride/padding");
        switch (l.kind) {
            case LayerKind::dense:
                if (l.in_height != 1 || l.in_width != 1 || l.kernel_h != 1 || l.kernel_w != 1)
                    throw ShapeError(tag + ": dense layers take 1x1 inputs and kernels");
                break;
            case LayerKind::dwconv:
            case LayerKind::pool:
            case LayerKind::elementwise_add:
                if (l.in_features != l.out_features)
                    throw ShapeError(tag + ": expects in_features == out_features, got " +
                                     std::to_string(l.in_features) + " and " +
                                     std::to_string(l.out_features));
                break;
            case LayerKind::feature_matmul:
                if (l.matmul_m <= 0 || l.matmul_k <= 0 || l.matmul_n <= 0)
                    throw ShapeError(tag + ": matmul dimensions must be positive");
                break;
            default: break;
        }
        if (l.kind == LayerKind::elementwise_add) {
            if (!l.residual_from) throw ShapeError(tag + ": elementwise_add needs residual_from");
        }
        if (l.residual_from) {
            const int r = *l.residual_from;
            if (r < -1 || r >= l.id) throw ShapeError(tag + ": residual_from must name an earlier layer");
            const Shape3 rs = model.output_shape(r);
            const Shape3 os = model.output_shape(l.id);
            if (rs != os)
                throw ShapeError(tag + ": residual source " + std::to_string(r) + " has shape " +
                                 to_string(rs) + ", expected " + to_string(os));
        }
        if (l.sparsifiable && l.kind != LayerKind::conv2d && l.kind != LayerKind::dense)
            throw ShapeError(tag + ": only conv2d and dense layers can be sparsifiable");
        if (nodes && l.sparsifiable) {
            const int n = *nodes;
            if (l.in_features % n != 0 || l.out_features % n != 0)
                throw ShapeError(tag + ": I=" + std::to_string(l.in_features) + " and O=" +
                                 std::to_string(l.out_features) + " must be divisible by N=" +
                                 std::to_string(n));
        }
    }
    if (nodes && *nodes < 1) throw DomainError("node count must be at least 1");
}

// ---------------------------------------------------------------------------
// WeightStore

WeightStore::WeightStore(const ModelSpec& model) {
    index_.assign(model.layers.size(), -1);
    for (const LayerSpec& l : model.layers) {
        if (!l.has_weights()) continue;
        index_[l.id] = static_cast<int>(layers_.size());
        LayerWeights lw;
        lw.layer_id = l.id;
        lw.weights.assign(static_cast<std::size_t>(l.weight_count()), 0.0f);
        lw.bias.assign(static_cast<std::size_t>(l.out_features), 0.0f);
        layers_.push_back(std::move(lw));
    }
}

WeightStore WeightStore::random(const ModelSpec& model, std::uint64_t seed) {
    WeightStore store(model);
    std::mt19937_64 rng(seed);
    for (LayerWeights& lw : store.layers_) {
        const LayerSpec& l = model.layers[lw.layer_id];
        const int fan_in = (l.kind == LayerKind::dwconv ? 1 : l.in_features) * l.kernel_h * l.kernel_w;
        const float bound = static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in)));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (float& w : lw.weights) w = dist(rng);
    }
    return store;
}

bool WeightStore::has(int layer_id) const {
    return layer_id >= 0 && layer_id < static_cast<int>(index_.size()) && index_[layer_id] >= 0;
}

LayerWeights& WeightStore::at(int layer_id) {
    if (!has(layer_id)) throw ShapeError("no weights for layer " + std::to_string(layer_id));
    return layers_[index_[layer_id]];
}

const LayerWeights& WeightStore::at(int layer_id) const {
    if (!has(layer_id)) throw ShapeError("no weights for layer " + std::to_string(layer_id));
    return layers_[index_[layer_id]];
}

void WeightStore::check_shapes(const ModelSpec& model) const {
    if (index_.size() != model.layers.size())
        throw ShapeError("weights cover " + std::to_string(index_.size()) + " layers, model has " +
                         std::to_string(model.layers.size()));
    for (const LayerSpec& l : model.layers) {
        if (l.has_weights() != has(l.id))
            throw ShapeError(layer_tag(l) + ": weight presence does not match layer kind");
        if (!l.has_weights()) continue;
        const LayerWeights& lw = at(l.id);
        if (static_cast<std::int64_t>(lw.weights.size()) != l.weight_count())
            throw ShapeError(layer_tag(l) + ": expected " + std::to_string(l.weight_count()) +
                             " weights, got " + std::to_string(lw.weights.size()));
        if (static_cast<int>(lw.bias.size()) != l.out_features)
            throw ShapeError(layer_tag(l) + ": expected " + std::to_string(l.out_features) +
                             " biases, got " + std::to_string(lw.bias.size()));
    }
}

void apply_mask(const ModelSpec& model, const BlockMask& mask, WeightStore& weights) {
    for (const LayerSpec& l : model.layers) {
        const LayerMask* lm = mask.layer(l.id);
        if (!lm) continue;
        LayerWeights& lw = weights.at(l.id);
        const std::int64_t k = std::int64_t{l.kernel_h} * l.kernel_w;
        for (int o = 0; o < l.out_features; ++o) {
            for (int f = 0; f < l.in_features; ++f) {
                if (lm->keep(f, o)) continue;
                float* w = lw.weights.data() + (std::int64_t{o} * l.in_features + f) * k;
                std::fill(w, w + k, 0.0f);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Accounting

std::int64_t flop_count(const LayerSpec& l) {
    const std::int64_t out_plane = std::int64_t{l.out_height()} * l.out_width();
    switch (l.kind) {
        case LayerKind::conv2d:
            return 2 * std::int64_t{l.kernel_w} * l.kernel_h * l.in_features * l.out_features * out_plane;
        case LayerKind::dense: return 2 * std::int64_t{l.in_features} * l.out_features;
        case LayerKind::dwconv:
            return 2 * std::int64_t{l.kernel_w} * l.kernel_h * l.in_features * out_plane;
        case LayerKind::elementwise_add:
        case LayerKind::pool: return std::int64_t{l.out_features} * out_plane;
        case LayerKind::feature_matmul: return 2 * l.matmul_m * l.matmul_k * l.matmul_n;
    }
    return 0;
}

std::int64_t feature_bytes(const LayerSpec& l, int bytes_per_value) {
    return std::int64_t{l.in_features} * l.in_height * l.in_width * bytes_per_value;
}

std::vector<LayerAccounting> account(const ModelSpec& model, int bytes_per_value) {
    std::vector<LayerAccounting> out;
    out.reserve(model.layers.size());
    for (const LayerSpec& l : model.layers) {
        LayerAccounting a;
        a.layer_id = l.id;
        a.ops = flop_count(l);
        a.input_bytes = feature_bytes(l, bytes_per_value);
        a.weight_bytes = l.weight_count() * 4;
        a.output_feature_bytes =
            std::int64_t{l.out_features} * l.out_height() * l.out_width() * bytes_per_value;
        out.push_back(a);
    }
    return out;
}

std::vector<NodeMemory> memory_estimate(const ModelSpec& model, const BlockMask& mask) {
    const int nodes = mask.nodes();
    validate_model(model, nodes);
    mask.check(model);
    std::vector<NodeMemory> mem(static_cast<std::size_t>(nodes));
    for (const LayerSpec& l : model.layers) {
        const std::int64_t in_plane_bytes = std::int64_t{l.in_height} * l.in_width * 4;
        const std::int64_t kernel_bytes = std::int64_t{l.kernel_h} * l.kernel_w * 4;
        const LayerMask* lm = mask.layer(l.id);
        for (int n = 0; n < nodes; ++n) {
            NodeMemory& m = mem[n];
            const int out_lo = split_begin(l.out_features, nodes, n);
            const int out_hi = split_begin(l.out_features, nodes, n + 1);
            const int in_lo = split_begin(l.in_features, nodes, n);
            const int in_hi = split_begin(l.in_features, nodes, n + 1);
            std::int64_t local = in_hi - in_lo;
            std::int64_t received = 0;
            if (lm) {
                m.weight_bytes += lm->kept_kernels_for_node(n) * kernel_bytes;
                for (int f = 0; f < l.in_features; ++f)
                    if (lm->in_owner(f) != n && lm->subrow_kept(f, n)) ++received;
            } else if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense) {
                m.weight_bytes += std::int64_t{out_hi - out_lo} * l.in_features * kernel_bytes;
                received = l.in_features - local;
            } else if (l.kind == LayerKind::dwconv) {
                m.weight_bytes += std::int64_t{out_hi - out_lo} * kernel_bytes;
            } else if (l.kind == LayerKind::feature_matmul) {
                received = l.in_features - local;
            }
            if (l.has_weights()) m.bias_bytes += std::int64_t{out_hi - out_lo} * 4;
            m.peak_feature_bytes = std::max(m.peak_feature_bytes, (local + received) * in_plane_bytes);
            m.receive_buffer_bytes = std::max(m.receive_buffer_bytes, received * in_plane_bytes);
        }
    }
    return mem;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace kernels {

void conv2d(const Tensor& in, std::span<const float> weights, std::span<const float> bias,
            int out_count, int kernel_h, int kernel_w, int stride, int padding, bool relu,
            const std::uint8_t* keep, int keep_stride, Tensor& out) {
    const detail::ConvGeom g{in.shape.channels,
                             in.shape.height,
                             in.shape.width,
                             out_count,
                             kernel_h,
                             kernel_w,
                             stride,
                             padding,
                             (in.shape.height + 2 * padding - kernel_h) / stride + 1,
                             (in.shape.width + 2 * padding - kernel_w) / stride + 1};
    if (static_cast<std::int64_t>(weights.size()) !=
        std::int64_t{out_count} * g.in_channels * kernel_h * kernel_w)
        throw ShapeError("conv2d: weight count does not match (" + std::to_string(out_count) + ", " +
                         std::to_string(g.in_channels) + ", " + std::to_string(kernel_h) + ", " +
                         std::to_string(kernel_w) + ")");
    out = Tensor({out_count, g.out_h, g.out_w});
    const float* b = bias.empty() ? nullptr : bias.data();
    if (keep) {
        detail::conv_forward(g, in.data.data(), weights.data(), b, relu,
                             [keep, keep_stride](int i, int o) {
                                 return keep[static_cast<std::size_t>(i) * keep_stride + o] != 0;
                             },
                             out.data.data());
    } else {
        detail::conv_forward(g, in.data.data(), weights.data(), b, relu,
                             [](int, int) { return true; }, out.data.data());
    }
}

void depthwise(const Tensor& in, std::span<const float> weights, std::span<const float> bias,
               int kernel_h, int kernel_w, int stride, int padding, bool relu, Tensor& out) {
    const int c = in.shape.channels;
    const detail::ConvGeom g{c,        in.shape.height, in.shape.width, c, kernel_h, kernel_w,
                             stride,   padding,
                             (in.shape.height + 2 * padding - kernel_h) / stride + 1,
                             (in.shape.width + 2 * padding - kernel_w) / stride + 1};
    out = Tensor({c, g.out_h, g.out_w});
    detail::depthwise_forward(g, in.data.data(), weights.data(),
                              bias.empty() ? nullptr : bias.data(), relu, out.data.data());
}

void pool(const Tensor& in, PoolType type, int kernel_h, int kernel_w, int stride, int padding,
          Tensor& out) {
    const int c = in.shape.channels;
    const detail::ConvGeom g{c,      in.shape.height, in.shape.width, c, kernel_h, kernel_w,
                             stride, padding,
                             (in.shape.height + 2 * padding - kernel_h) / stride + 1,
                             (in.shape.width + 2 * padding - kernel_w) / stride + 1};
    out = Tensor({c, g.out_h, g.out_w});
    detail::pool_forward(g, type == PoolType::max, in.data.data(), out.data.data());
}

}  // namespace kernels

std::vector<Tensor> forward_all(const ModelSpec& model, const WeightStore& weights,
                                const BlockMask* mask, const Tensor& input) {
    validate_model(model);
    if (input.shape != model.input)
        throw ShapeError("model input: expected " + to_string(model.input) + ", got " +
                         to_string(input.shape));
    if (static_cast<std::int64_t>(input.data.size()) != input.shape.size())
        throw ShapeError("model input: tensor data does not match its shape");
    weights.check_shapes(model);
    if (mask) mask->check(model);

    std::vector<Tensor> outs(model.layers.size());
    for (const LayerSpec& l : model.layers) {
        const int src = l.source();
        const Tensor& in = src == -1 ? input : outs[src];
        Tensor& out = outs[l.id];
        switch (l.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense: {
                const LayerWeights& lw = weights.at(l.id);
                const LayerMask* lm = mask ? mask->layer(l.id) : nullptr;
                kernels::conv2d(in, lw.weights, lw.bias, l.out_features, l.kernel_h, l.kernel_w,
                                l.stride, l.padding, l.relu, lm ? lm->data() : nullptr,
                                l.out_features, out);
                break;
            }
            case LayerKind::dwconv: {
                const LayerWeights& lw = weights.at(l.id);
                kernels::depthwise(in, lw.weights, lw.bias, l.kernel_h, l.kernel_w, l.stride,
                                   l.padding, l.relu, out);
                break;
            }
            case LayerKind::pool:
                kernels::pool(in, l.pool_type, l.kernel_h, l.kernel_w, l.stride, l.padding, out);
                break;
            case LayerKind::elementwise_add: {
                const int r = *l.residual_from;
                const Tensor& other = r == -1 ? input : outs[r];
                out = in;
                for (std::size_t k = 0; k < out.data.size(); ++k) {
                    float v = out.data[k] + other.data[k];
                    out.data[k] = (l.relu && v < 0.0f) ? 0.0f : v;
                }
                break;
            }
            case LayerKind::feature_matmul:
                throw Error(layer_tag(l) + ": feature_matmul is supported by the latency model only");
        }
    }
    return outs;
}

Tensor forward_model(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                     const Tensor& input) {
    auto outs = forward_all(model, weights, &mask, input);
    return std::move(outs.back());
}

Tensor forward_model(const ModelSpec& model, const WeightStore& weights, const Tensor& input) {
    auto outs = forward_all(model, weights, nullptr, input);
    return std::move(outs.back());
}

// ---------------------------------------------------------------------------
// Shipped manifests

namespace {

struct Builder {
    ModelSpec model;

    Shape3 shape_of(int id) const { return model.output_shape(id); }

    int add(LayerSpec l, int source) {
        const Shape3 in = shape_of(source);
        l.id = static_cast<int>(model.layers.size());
        l.in_features = in.channels;
        l.in_height = in.height;
        l.in_width = in.width;
        if (source != l.id - 1) l.input_from = source;
        model.layers.push_back(l);
        return l.id;
    }

    int conv(int source, int out, int k, int stride, int pad, bool relu, bool sparsifiable) {
        LayerSpec l;
        l.kind = LayerKind::conv2d;
        l.out_features = out;
        l.kernel_h = l.kernel_w = k;
        l.stride = stride;
        l.padding = pad;
        l.relu = relu;
        l.sparsifiable = sparsifiable;
        return add(l, source);
    }

    int pool(int source, PoolType type, int k, int stride, int pad) {
        LayerSpec l;
        l.kind = LayerKind::pool;
        l.pool_type = type;
        l.out_features = shape_of(source).channels;
        l.kernel_h = l.kernel_w = k;
        l.stride = stride;
        l.padding = pad;
        return add(l, source);
    }

    int residual(int source, int other) {
        LayerSpec l;
        l.kind = LayerKind::elementwise_add;
        l.out_features = shape_of(source).channels;
        l.residual_from = other;
        l.relu = true;
        return add(l, source);
    }

    int dense(int source, int out, bool relu, bool sparsifiable) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.out_features = out;
        l.relu = relu;
        l.sparsifiable = sparsifiable;
        return add(l, source);
    }
};

}  // namespace

ModelSpec resnet50_shapes() {
    Builder b;
    b.model.name = "resnet50";
    b.model.input = {3, 224, 224};
    b.model.num_classes = 1000;

    int x = b.conv(-1, 64, 7, 2, 3, true, false);
    x = b.pool(x, PoolType::max, 3, 2, 1);
    struct Stage {
        int width, blocks, stride;
    };
    for (const Stage s : {Stage{64, 3, 1}, Stage{128, 4, 2}, Stage{256, 6, 2}, Stage{512, 3, 2}}) {
        for (int blk = 0; blk < s.blocks; ++blk) {
            const int stride = blk == 0 ? s.stride : 1;
            const int block_in = x;
            int y = b.conv(block_in, s.width, 1, 1, 0, true, true);
            y = b.conv(y, s.width, 3, stride, 1, true, true);
            y = b.conv(y, 4 * s.width, 1, 1, 0, false, true);
            if (blk == 0) {
                const int shortcut = b.conv(block_in, 4 * s.width, 1, stride, 0, false, true);
                x = b.residual(shortcut, y);
            } else {
                x = b.residual(y, block_in);
            }
        }
    }
    x = b.pool(x, PoolType::avg, 7, 1, 0);
    b.dense(x, 1000, false, true);
    return b.model;
}

ModelSpec toy_cnn_shapes() {
    Builder b;
    b.model.name = "toy_cnn";
    b.model.input = {1, 28, 28};
    b.model.num_classes = 10;

    int x = b.conv(-1, 8, 3, 1, 1, true, false);
    x = b.pool(x, PoolType::max, 2, 2, 0);
    x = b.conv(x, 16, 3, 1, 1, true, true);
    x = b.pool(x, PoolType::max, 2, 2, 0);
    const int block_in = x;
    int y = b.conv(x, 16, 3, 1, 1, true, true);
    y = b.conv(y, 16, 3, 1, 1, false, true);
    x = b.residual(y, block_in);
    x = b.pool(x, PoolType::avg, 7, 1, 0);
    x = b.dense(x, 16, true, true);
    b.dense(x, 10, false, false);
    return b.model;
}

}  // namespace sparsecomm
