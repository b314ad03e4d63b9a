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
#include <numeric>
#include <stdexcept>
#include <string>

namespace sparsecomm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor, layer or mask dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration, manifest or file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Argument outside its documented domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A layer whose computation already dominates communication (A < 1) has no
/// equilibrium sparsity.
class ComputeBoundError : public Error {
public:
    ComputeBoundError(int layer_id, double a_factor)
        : Error("layer " + std::to_string(layer_id) + " is compute-bound (A=" +
                std::to_string(a_factor) + " < 1)"),
          layer_id_(layer_id), a_factor_(a_factor) {}

    int layer_id() const { return layer_id_; }
    double a_factor() const { return a_factor_; }

private:
    int layer_id_;
    double a_factor_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch)
        : Error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)),
          epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/// Exact non-negative fraction used for sparsity bookkeeping.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static Rational make(std::int64_t n, std::int64_t d) {
        if (d == 0) throw DomainError("rational with zero denominator");
        if (d < 0) {
            n = -n;
            d = -d;
        }
        const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
        return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend Rational operator*(const Rational& a, const Rational& b) {
        // Reduce crosswise first to keep intermediate products small.
        const Rational x = make(a.num, b.den);
        const Rational y = make(b.num, a.den);
        return make(x.num * y.num, x.den * y.den);
    }
    friend bool operator==(const Rational& a, const Rational& b) {
        return a.num == b.num && a.den == b.den;
    }
};

/// First index of part `part` when `count` items are split into `parts`
/// contiguous, near-equal ranges.
inline int split_begin(int count, int parts, int part) {
    return static_cast<int>(static_cast<std::int64_t>(count) * part / parts);
}

/// Node owning item `index` under split_begin's partition.
inline int split_owner(int count, int parts, int index) {
    int lo = 0, hi = parts - 1;
    while (lo < hi) {
        const int mid = (lo + hi + 1) / 2;
        if (split_begin(count, parts, mid) <= index)
            lo = mid;
        else
            hi = mid - 1;
    }
    return lo;
}

}  // namespace sparsecomm
