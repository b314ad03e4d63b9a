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
#include <span>
#include <string>
#include <vector>

#include "sparsecomm/common.hpp"

namespace sparsecomm {

class BlockMask;

enum class LayerKind { conv2d, dense, dwconv, elementwise_add, pool, feature_matmul };
enum class PoolType { max, avg };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Shape description of one layer. Spatial sizes refer to the layer input.
struct LayerSpec {
    int id = 0;
    LayerKind kind = LayerKind::conv2d;
    int in_features = 0;   // I
    int out_features = 0;  // O
    int kernel_w = 1;
    int kernel_h = 1;
    int in_height = 1;
    int in_width = 1;
    int stride = 1;
    int padding = 0;
    std::optional<int> residual_from;
    bool sparsifiable = false;

    // Where the (first) operand comes from: nullopt means the previous layer,
    // -1 the model input.
    std::optional<int> input_from;
    bool relu = false;
    PoolType pool_type = PoolType::max;
    // feature_matmul only: product of an (m x k) and a (k x n) matrix.
    std::int64_t matmul_m = 0;
    std::int64_t matmul_k = 0;
    std::int64_t matmul_n = 0;

    int out_height() const;
    int out_width() const;
    bool has_weights() const {
        return kind == LayerKind::conv2d || kind == LayerKind::dense || kind == LayerKind::dwconv;
    }
    /// Weight elements: O*I*H*W, or O*H*W for depthwise.
    std::int64_t weight_count() const;
    /// Source of the first operand, resolved (-1 is the model input).
    int source() const { return input_from.value_or(id - 1); }
};

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::int64_t size() const { return std::int64_t{channels} * height * width; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

struct ModelSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    Shape3 input;
    int num_classes = 0;

    /// Output shape of layer `id`; -1 gives the model input shape.
    Shape3 output_shape(int id) const;
    int weighted_layer_count() const;
};

/// Checks ids, chaining, residual shapes and weight-free kinds. When `nodes`
/// is given, also enforces I mod N = O mod N = 0 on sparsifiable layers.
void validate_model(const ModelSpec& model, std::optional<int> nodes = std::nullopt);

/// Dense CHW single-sample feature tensor.
struct Tensor {
    Shape3 shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(Shape3 s) : shape(s), data(static_cast<std::size_t>(s.size()), 0.0f) {}

    float* channel(int c) { return data.data() + std::int64_t{c} * shape.height * shape.width; }
    const float* channel(int c) const {
        return data.data() + std::int64_t{c} * shape.height * shape.width;
    }
};

struct LayerWeights {
    int layer_id = 0;
    std::vector<float> weights;  // (O, I, H, W) row-major; (O, 1, H, W) for dwconv
    std::vector<float> bias;     // length O

    friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Trainable parameters for every weighted layer, indexed by layer id.
class WeightStore {
public:
    WeightStore() = default;
    /// Zero-initialized storage shaped after `model`.
    explicit WeightStore(const ModelSpec& model);

    /// Seeded uniform init in [-b, b] with b = 1 / sqrt(fan_in); zero biases.
    static WeightStore random(const ModelSpec& model, std::uint64_t seed);

    bool has(int layer_id) const;
    LayerWeights& at(int layer_id);
    const LayerWeights& at(int layer_id) const;
    const std::vector<LayerWeights>& layers() const { return layers_; }
    std::vector<LayerWeights>& layers() { return layers_; }

    /// Throws ShapeError if any tensor disagrees with `model`.
    void check_shapes(const ModelSpec& model) const;

    friend bool operator==(const WeightStore&, const WeightStore&) = default;

private:
    std::vector<LayerWeights> layers_;
    std::vector<int> index_;  // layer id -> position in layers_, or -1
};

/// Zero every weight whose kernel is pruned by `mask`.
void apply_mask(const ModelSpec& model, const BlockMask& mask, WeightStore& weights);

struct LayerAccounting {
    int layer_id = 0;
    std::int64_t ops = 0;                 // C_c
    std::int64_t input_bytes = 0;         // F_s
    std::int64_t weight_bytes = 0;
    std::int64_t output_feature_bytes = 0;
};

std::int64_t flop_count(const LayerSpec& layer);
std::int64_t feature_bytes(const LayerSpec& layer, int bytes_per_value);
std::vector<LayerAccounting> account(const ModelSpec& model, int bytes_per_value);

struct NodeMemory {
    std::int64_t weight_bytes = 0;   // kept kernels owned by the node
    std::int64_t bias_bytes = 0;
    std::int64_t peak_feature_bytes = 0;   // max over layers of local + received inputs
    std::int64_t receive_buffer_bytes = 0; // max over layers of received inputs
    std::int64_t total() const { return weight_bytes + bias_bytes + peak_feature_bytes; }
};

/// Per-node memory footprint of distributing `model` under `mask`.
std::vector<NodeMemory> memory_estimate(const ModelSpec& model, const BlockMask& mask);

/// Centralized inference. Pruned kernels are skipped, which is bit-identical
/// to multiplying by explicit zeros. Accumulation runs over input features in
/// ascending order, then kernel rows, then kernel columns; bias is added last.
Tensor forward_model(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                     const Tensor& input);
Tensor forward_model(const ModelSpec& model, const WeightStore& weights, const Tensor& input);

/// Output of every layer, in layer order.
std::vector<Tensor> forward_all(const ModelSpec& model, const WeightStore& weights,
                                const BlockMask* mask, const Tensor& input);

namespace kernels {

/// Convolution of `in` (gathered channels, already in accumulation order) by
/// weights laid out (out_count, in.channels, kh, kw). `keep`, when non-null,
/// is indexed [in_channel * keep_stride + out] and skips zero entries.
void conv2d(const Tensor& in, std::span<const float> weights, std::span<const float> bias,
            int out_count, int kernel_h, int kernel_w, int stride, int padding, bool relu,
            const std::uint8_t* keep, int keep_stride, Tensor& out);

void depthwise(const Tensor& in, std::span<const float> weights, std::span<const float> bias,
               int kernel_h, int kernel_w, int stride, int padding, bool relu, Tensor& out);

void pool(const Tensor& in, PoolType type, int kernel_h, int kernel_w, int stride, int padding,
          Tensor& out);

}  // namespace kernels

ModelSpec resnet50_shapes();
ModelSpec toy_cnn_shapes();

}  // namespace sparsecomm
