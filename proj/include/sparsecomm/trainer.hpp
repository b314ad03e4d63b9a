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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sparsecomm/mask.hpp"
#include "sparsecomm/model.hpp"

namespace sparsecomm {

struct Dataset {
    Shape3 image_shape;
    int classes = 0;
    std::vector<float> train_images;  // sample-major
    std::vector<int> train_labels;
    std::vector<float> test_images;
    std::vector<int> test_labels;

    std::size_t train_size() const { return train_labels.size(); }
    std::size_t test_size() const { return test_labels.size(); }
};

/// Sinusoidal gratings whose orientation encodes the class (k * pi / K), with a
/// random phase per sample plus Gaussian pixel noise.
struct SyntheticConfig {
    std::uint64_t seed = 1;
    int classes = 10;
    int train_per_class = 100;
    int test_per_class = 200;
    double noise_stddev = 1.5;
};

Dataset make_synthetic_dataset(const SyntheticConfig& config);

/// MNIST-style IDX files (magic 2051 images, 2049 labels); pixels scaled to [0, 1].
void load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              std::vector<float>& out_images, std::vector<int>& out_labels, Shape3& shape);

struct PruneStage {
    double p = 0.0;  // cumulative off-diagonal prune fraction
    int epochs = 1;  // finetune epochs after pruning
};

struct TrainConfig {
    std::uint64_t seed = 1;
    int nodes = 2;
    int epochs_dense = 12;
    int batch_size = 16;
    double lr = 0.02;
    double lr_decay = 0.5;   // multiplied in every `lr_step` epochs
    int lr_step = 4;
    double momentum = 0.9;
    double finetune_lr = 0.002;
    std::vector<PruneStage> schedule{{0.5, 1}, {0.8, 1}, {0.9, 1}, {0.95, 1}, {0.99, 1}};
    SelectStrategy strategy = SelectStrategy::l1;
    bool one_shot = false;  // score every stage from the dense weights

    void validate() const;
};

struct EpochRecord {
    int stage = 0;
    double p = 0.0;
    int epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct StageCheckpoint {
    int stage = 0;
    double p = 0.0;
    BlockMask mask;
    WeightStore weights;
    double accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// SGD with momentum on softmax cross-entropy. Weights pruned by `mask` are
/// zeroed first and receive zero updates. Throws DivergenceError on a
/// non-finite loss.
std::vector<EpochRecord> train_epochs(const ModelSpec& model, WeightStore& weights,
                                      const BlockMask& mask, const Dataset& data, int epochs,
                                      double lr, double lr_decay, int lr_step, double momentum,
                                      int batch_size, std::uint64_t seed, int stage = 0,
                                      double p = 0.0, const EpochCallback& on_epoch = {});

struct DenseResult {
    WeightStore weights;
    std::vector<EpochRecord> history;
};

DenseResult train_dense(const ModelSpec& model, const Dataset& data, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

WeightStore finetune_masked(const ModelSpec& model, WeightStore weights, const BlockMask& mask,
                            const Dataset& data, int epochs, double lr,
                            const TrainConfig& config, int stage = 0, double p = 0.0,
                            const EpochCallback& on_epoch = {});

/// Dense training followed by one prune-and-finetune stage per schedule entry.
/// The first checkpoint is the dense model (stage 0, p = 0).
std::vector<StageCheckpoint> iterative_disco(const ModelSpec& model, const Dataset& data,
                                             const TrainConfig& config,
                                             const EpochCallback& on_epoch = {});

/// Continues a schedule from an existing checkpoint.
std::vector<StageCheckpoint> prune_schedule(const ModelSpec& model, const Dataset& data,
                                            const TrainConfig& config,
                                            const StageCheckpoint& start,
                                            const EpochCallback& on_epoch = {});

double evaluate(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                const Dataset& data);

/// Mean cross-entropy of one sample and the gradient of every parameter,
/// evaluated in double precision. Gradients of pruned kernels are zero.
struct GradientResult {
    double loss = 0.0;
    std::vector<std::vector<double>> weight_grads;  // per weighted layer, store order
    std::vector<std::vector<double>> bias_grads;
};

GradientResult compute_gradients(const ModelSpec& model, const WeightStore& weights,
                                 const BlockMask& mask, const Tensor& input, int label);

/// Compares analytic gradients against central finite differences (step 1e-3)
/// on `samples` randomly chosen kept parameters. Returns max relative error.
double gradient_check(const ModelSpec& model, const WeightStore& weights, const BlockMask& mask,
                      const Tensor& input, int label, int samples = 64, std::uint64_t seed = 7);

}  // namespace sparsecomm
