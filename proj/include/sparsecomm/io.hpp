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

#include <filesystem>
#include <iosfwd>
#include <string>

#include "sparsecomm/latency.hpp"
#include "sparsecomm/mask.hpp"
#include "sparsecomm/model.hpp"
#include "sparsecomm/trainer.hpp"

namespace sparsecomm::io {

// Model manifest: JSON with snake_case keys mirroring ModelSpec/LayerSpec.
std::string model_to_json(const ModelSpec& model);
ModelSpec model_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const ModelSpec& model);
ModelSpec load_model(const std::filesystem::path& path);
/// `builtin:resnet50`, `builtin:toy_cnn`, or a manifest path.
ModelSpec resolve_model(const std::string& ref);

// Weights: "DISCOWT1", u32 layer count, then per weighted layer u32 id, u64
// weight count, weights (O, I, H, W) and O bias values; all little-endian.
void write_weights(std::ostream& os, const WeightStore& weights);
WeightStore read_weights(std::istream& is, const ModelSpec& model);
void save_weights(const std::filesystem::path& path, const WeightStore& weights);
WeightStore load_weights(const std::filesystem::path& path, const ModelSpec& model);

// Masks and plans share one schema: per layer, per off-diagonal node pair,
// the sorted kept (transmitted) input features.
std::string mask_to_json(const BlockMask& mask);
BlockMask mask_from_json(const std::string& text, const ModelSpec& model);
void save_mask(const std::filesystem::path& path, const BlockMask& mask);
BlockMask load_mask(const std::filesystem::path& path, const ModelSpec& model);
std::string plan_to_json(const CommPlan& plan);
CommPlan plan_from_json(const std::string& text);

std::string system_to_json(const SystemConfig& system);
SystemConfig system_from_json(const std::string& text);
/// Preset name or path to a JSON file.
SystemConfig resolve_system(const std::string& ref);

/// Unknown keys are rejected so that typos do not silently fall back to defaults.
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

// Tensors: raw little-endian float32 plus a `<path>.shape` sidecar "C H W".
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sparsecomm::io
