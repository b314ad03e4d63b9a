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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sparsecomm/mask.hpp"
#include "sparsecomm/model.hpp"

namespace testutil {

using namespace sparsecomm;

// Appends layers to a model, inferring input dims from the source layer.
struct ModelBuilder {
    ModelSpec model;

    ModelBuilder(Shape3 input, std::string name = "test") {
        model.name = std::move(name);
        model.input = input;
    }

    int push(LayerSpec l, int source) {
        const Shape3 in = model.output_shape(source);
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
        return push(l, source);
    }

    int dense(int source, int out, bool relu, bool sparsifiable) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.out_features = out;
        l.relu = relu;
        l.sparsifiable = sparsifiable;
        return push(l, source);
    }

    int pool(int source, PoolType type, int k, int stride, int pad = 0) {
        LayerSpec l;
        l.kind = LayerKind::pool;
        l.pool_type = type;
        l.out_features = model.output_shape(source).channels;
        l.kernel_h = l.kernel_w = k;
        l.stride = stride;
        l.padding = pad;
        return push(l, source);
    }

    int add(int source, int residual, bool relu) {
        LayerSpec l;
        l.kind = LayerKind::elementwise_add;
        l.out_features = model.output_shape(source).channels;
        l.residual_from = residual;
        l.relu = relu;
        return push(l, source);
    }

    int dwconv(int source, int k, int stride, int pad, bool relu) {
        LayerSpec l;
        l.kind = LayerKind::dwconv;
        l.out_features = model.output_shape(source).channels;
        l.kernel_h = l.kernel_w = k;
        l.stride = stride;
        l.padding = pad;
        l.relu = relu;
        return push(l, source);
    }
};

// Small CNN with random widths (multiples of 8), kernels, strides and an
// optional residual block; every sparsifiable layer is divisible by 8.
inline ModelSpec random_cnn(std::mt19937_64& rng) {
    auto pick = [&](std::initializer_list<int> v) {
        std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
        return *(v.begin() + d(rng));
    };
    const int side = pick({8, 10, 12});
    ModelBuilder b({pick({1, 3}), side, side}, "random_cnn");
    int x = b.conv(-1, pick({8, 16}), 3, 1, 1, true, false);
    x = b.conv(x, pick({8, 16, 24}), pick({1, 3}), pick({1, 2}), 1, true, true);
    if (pick({0, 1})) x = b.pool(x, PoolType::max, 2, 2);
    if (pick({0, 1})) {
        const int block_in = x;
        const int width = b.model.output_shape(x).channels;
        int y = b.conv(x, width, 3, 1, 1, true, true);
        y = b.conv(y, width, 3, 1, 1, false, true);
        x = b.add(y, block_in, true);
    }
    if (pick({0, 1})) x = b.dwconv(x, 3, 1, 1, true);
    const Shape3 s = b.model.output_shape(x);
    x = b.pool(x, PoolType::avg, s.height, 1);
    x = b.dense(x, pick({8, 16}), true, true);
    b.dense(x, 10, false, false);
    b.model.num_classes = 10;
    return b.model;
}

// Mask with a random off-diagonal prune fraction q on every sparsifiable layer.
inline BlockMask random_mask(const ModelSpec& model, int nodes, double q, std::uint64_t seed) {
    const WeightStore w = WeightStore::random(model, seed);
    return select_model(model, w, nodes, q, SelectStrategy::random, seed);
}

inline Tensor random_tensor(Shape3 shape, std::uint64_t seed) {
    Tensor t(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (float& v : t.data) v = d(rng);
    return t;
}

inline double max_abs(const std::vector<float>& v) {
    double m = 0.0;
    for (float x : v) m = std::max(m, std::fabs(static_cast<double>(x)));
    return m;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("sparsecomm_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
