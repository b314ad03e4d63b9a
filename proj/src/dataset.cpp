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

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "sparsecomm/trainer.hpp"

namespace sparsecomm {

namespace {

constexpr int kSide = 28;

void append_grating(int label, int classes, std::mt19937_64& rng, double noise, std::vector<float>& out) {
    constexpr double kCycles = 3.0;
    const double theta = std::numbers::pi * label / classes;
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise_dist(0.0, noise);
    const double phase = phase_dist(rng);
    const double c = std::cos(theta), s = std::sin(theta);
    for (int y = 0; y < kSide; ++y) {
        for (int x = 0; x < kSide; ++x) {
            const double u = (x * c + y * s) / kSide;
            const double v = std::sin(2.0 * std::numbers::pi * kCycles * u + phase);
            out.push_back(static_cast<float>(v + noise_dist(rng)));
        }
    }
}

void fill_split(const SyntheticConfig& config, int per_class, std::uint64_t stream,
                std::vector<float>& images, std::vector<int>& labels) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    images.reserve(static_cast<std::size_t>(per_class) * config.classes * kSide * kSide);
    for (int n = 0; n < per_class; ++n) {
        for (int k = 0; k < config.classes; ++k) {
            append_grating(k, config.classes, rng, config.noise_stddev, images);
            labels.push_back(k);
        }
    }
}

std::uint32_t read_be32(std::istream& is, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("'" + path.string() + "' is truncated");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticConfig& config) {
    if (config.classes < 1 || config.classes > 10)
        throw DomainError("synthetic dataset supports 1 to 10 classes");
    if (config.train_per_class < 1 || config.test_per_class < 1)
        throw DomainError("synthetic dataset needs at least one sample per class and split");
    if (!(config.noise_stddev >= 0.0)) throw DomainError("noise standard deviation must be non-negative");
    Dataset d;
    d.image_shape = {1, kSide, kSide};
    d.classes = config.classes;
    fill_split(config, config.train_per_class, 0, d.train_images, d.train_labels);
    fill_split(config, config.test_per_class, 1, d.test_images, d.test_labels);
    return d;
}

void load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              std::vector<float>& out_images, std::vector<int>& out_labels, Shape3& shape) {
    std::ifstream img(images, std::ios::binary);
    if (!img) throw FormatError("cannot open '" + images.string() + "'");
    if (read_be32(img, images) != 2051) throw FormatError("'" + images.string() + "' is not an IDX image file");
    const std::uint32_t count = read_be32(img, images);
    const std::uint32_t rows = read_be32(img, images);
    const std::uint32_t cols = read_be32(img, images);

    std::ifstream lab(labels, std::ios::binary);
    if (!lab) throw FormatError("cannot open '" + labels.string() + "'");
    if (read_be32(lab, labels) != 2049) throw FormatError("'" + labels.string() + "' is not an IDX label file");
    if (read_be32(lab, labels) != count)
        throw FormatError("image and label files disagree on the sample count");

    const std::size_t plane = std::size_t{rows} * cols;
    std::vector<unsigned char> pixels(plane * count);
    if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
        throw FormatError("'" + images.string() + "' is truncated");
    std::vector<unsigned char> raw(count);
    if (!lab.read(reinterpret_cast<char*>(raw.data()), count))
        throw FormatError("'" + labels.string() + "' is truncated");

    shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
    out_images.resize(pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) out_images[k] = pixels[k] / 255.0f;
    out_labels.assign(raw.begin(), raw.end());
}

}  // namespace sparsecomm
