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

// Templated tensor kernels shared by inference (float) and the trainer
// (float for SGD, double for gradient checks). Plane-at-a-time loops keep the
// per-element addition sequence at: input channel, kernel row, kernel column.

#include <algorithm>
#include <cstdint>
#include <limits>

namespace sparsecomm::detail {

struct ConvGeom {
    int in_channels;
    int in_h;
    int in_w;
    int out_channels;
    int kh;
    int kw;
    int stride;
    int pad;
    int out_h;
    int out_w;
};

// Output index range [lo, hi) whose tap `k` lands inside [0, extent).
inline void valid_range(int k, int stride, int pad, int extent, int out_extent, int& lo, int& hi) {
    // out*stride + k - pad >= 0  and  <= extent - 1
    const int a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    const int b = extent - 1 + pad - k;
    hi = b < 0 ? 0 : std::min(out_extent, b / stride + 1);
    if (hi < lo) hi = lo;
}

// out[o] = sum_i w[o, i] * in[i] (+ bias). `keep(i, o)` selects kernels;
// callers pass an always-true functor for unmasked layers.
template <typename T, typename W, typename Keep>
void conv_forward(const ConvGeom& g, const T* in, const W* weights, const W* bias, bool relu,
                  Keep&& keep, T* out) {
    const int plane = g.out_h * g.out_w;
    const int in_plane = g.in_h * g.in_w;
    for (int o = 0; o < g.out_channels; ++o) {
        T* dst = out + static_cast<std::int64_t>(o) * plane;
        std::fill(dst, dst + plane, T(0));
        for (int i = 0; i < g.in_channels; ++i) {
            if (!keep(i, o)) continue;
            const T* src = in + static_cast<std::int64_t>(i) * in_plane;
            const W* wk = weights + (static_cast<std::int64_t>(o) * g.in_channels + i) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
                int y0, y1;
                valid_range(ky, g.stride, g.pad, g.in_h, g.out_h, y0, y1);
                for (int kx = 0; kx < g.kw; ++kx) {
                    int x0, x1;
                    valid_range(kx, g.stride, g.pad, g.in_w, g.out_w, x0, x1);
                    const T w = static_cast<T>(wk[ky * g.kw + kx]);
                    for (int y = y0; y < y1; ++y) {
                        const T* row = src + static_cast<std::int64_t>(y * g.stride + ky - g.pad) * g.in_w;
                        T* orow = dst + static_cast<std::int64_t>(y) * g.out_w;
                        const int off = kx - g.pad;
                        for (int x = x0; x < x1; ++x) orow[x] += w * row[x * g.stride + off];
                    }
                }
            }
        }
        const T b = bias ? static_cast<T>(bias[o]) : T(0);
        for (int p = 0; p < plane; ++p) {
            T v = dst[p] + b;
            if (relu && v < T(0)) v = T(0);
            dst[p] = v;
        }
    }
}

// Accumulates weight/bias gradients and, when `grad_in` is non-null, the input
// gradient. `grad_out` is the gradient w.r.t. the (post-bias) output.
template <typename T, typename Keep>
void conv_backward(const ConvGeom& g, const T* in, const T* weights, const T* grad_out,
                   Keep&& keep, T* grad_w, T* grad_b, T* grad_in) {
    const int plane = g.out_h * g.out_w;
    const int in_plane = g.in_h * g.in_w;
    for (int o = 0; o < g.out_channels; ++o) {
        const T* go = grad_out + static_cast<std::int64_t>(o) * plane;
        if (grad_b) {
            T s = 0;
            for (int p = 0; p < plane; ++p) s += go[p];
            grad_b[o] += s;
        }
        for (int i = 0; i < g.in_channels; ++i) {
            if (!keep(i, o)) continue;
            const T* src = in + static_cast<std::int64_t>(i) * in_plane;
            T* gi = grad_in ? grad_in + static_cast<std::int64_t>(i) * in_plane : nullptr;
            const std::int64_t kbase = (static_cast<std::int64_t>(o) * g.in_channels + i) * g.kh * g.kw;
            for (int ky = 0; ky < g.kh; ++ky) {
                int y0, y1;
                valid_range(ky, g.stride, g.pad, g.in_h, g.out_h, y0, y1);
                for (int kx = 0; kx < g.kw; ++kx) {
                    int x0, x1;
                    valid_range(kx, g.stride, g.pad, g.in_w, g.out_w, x0, x1);
                    const int off = kx - g.pad;
                    const T w = weights[kbase + ky * g.kw + kx];
                    T acc = 0;
                    for (int y = y0; y < y1; ++y) {
                        const std::int64_t r = static_cast<std::int64_t>(y * g.stride + ky - g.pad) * g.in_w;
                        const T* row = src + r;
                        const T* grow = go + static_cast<std::int64_t>(y) * g.out_w;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * row[x * g.stride + off];
                        if (gi) {
                            T* girow = gi + r;
                            for (int x = x0; x < x1; ++x) girow[x * g.stride + off] += w * grow[x];
                        }
                    }
                    grad_w[kbase + ky * g.kw + kx] += acc;
                }
            }
        }
    }
}

template <typename T, typename W>
void depthwise_forward(const ConvGeom& g, const T* in, const W* weights, const W* bias, bool relu,
                       T* out) {
    const int plane = g.out_h * g.out_w;
    const int in_plane = g.in_h * g.in_w;
    for (int c = 0; c < g.out_channels; ++c) {
        T* dst = out + static_cast<std::int64_t>(c) * plane;
        std::fill(dst, dst + plane, T(0));
        const T* src = in + static_cast<std::int64_t>(c) * in_plane;
        const W* wk = weights + static_cast<std::int64_t>(c) * g.kh * g.kw;
        for (int ky = 0; ky < g.kh; ++ky) {
            int y0, y1;
            valid_range(ky, g.stride, g.pad, g.in_h, g.out_h, y0, y1);
            for (int kx = 0; kx < g.kw; ++kx) {
                int x0, x1;
                valid_range(kx, g.stride, g.pad, g.in_w, g.out_w, x0, x1);
                const T w = static_cast<T>(wk[ky * g.kw + kx]);
                for (int y = y0; y < y1; ++y) {
                    const T* row = src + static_cast<std::int64_t>(y * g.stride + ky - g.pad) * g.in_w;
                    T* orow = dst + static_cast<std::int64_t>(y) * g.out_w;
                    const int off = kx - g.pad;
                    for (int x = x0; x < x1; ++x) orow[x] += w * row[x * g.stride + off];
                }
            }
        }
        const T b = bias ? static_cast<T>(bias[c]) : T(0);
        for (int p = 0; p < plane; ++p) {
            T v = dst[p] + b;
            if (relu && v < T(0)) v = T(0);
            dst[p] = v;
        }
    }
}

template <typename T>
void pool_forward(const ConvGeom& g, bool is_max, const T* in, T* out) {
    const int plane = g.out_h * g.out_w;
    const int in_plane = g.in_h * g.in_w;
    const T inv_area = T(1) / static_cast<T>(g.kh * g.kw);
    for (int c = 0; c < g.out_channels; ++c) {
        const T* src = in + static_cast<std::int64_t>(c) * in_plane;
        T* dst = out + static_cast<std::int64_t>(c) * plane;
        for (int y = 0; y < g.out_h; ++y) {
            for (int x = 0; x < g.out_w; ++x) {
                T acc = is_max ? -std::numeric_limits<T>::infinity() : T(0);
                for (int ky = 0; ky < g.kh; ++ky) {
                    const int iy = y * g.stride + ky - g.pad;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int kx = 0; kx < g.kw; ++kx) {
                        const int ix = x * g.stride + kx - g.pad;
                        if (ix < 0 || ix >= g.in_w) continue;
                        const T v = src[iy * g.in_w + ix];
                        if (is_max)
                            acc = v > acc ? v : acc;
                        else
                            acc += v;
                    }
                }
                dst[y * g.out_w + x] = is_max ? acc : acc * inv_area;
            }
        }
    }
}

template <typename T>
void pool_backward(const ConvGeom& g, bool is_max, const T* in, const T* grad_out, T* grad_in) {
    const int in_plane = g.in_h * g.in_w;
    const int plane = g.out_h * g.out_w;
    const T inv_area = T(1) / static_cast<T>(g.kh * g.kw);
    for (int c = 0; c < g.out_channels; ++c) {
        const T* src = in + static_cast<std::int64_t>(c) * in_plane;
        T* gi = grad_in + static_cast<std::int64_t>(c) * in_plane;
        const T* go = grad_out + static_cast<std::int64_t>(c) * plane;
        for (int y = 0; y < g.out_h; ++y) {
            for (int x = 0; x < g.out_w; ++x) {
                const T gv = go[y * g.out_w + x];
                int best = -1;
                T best_v = -std::numeric_limits<T>::infinity();
                for (int ky = 0; ky < g.kh; ++ky) {
                    const int iy = y * g.stride + ky - g.pad;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int kx = 0; kx < g.kw; ++kx) {
                        const int ix = x * g.stride + kx - g.pad;
                        if (ix < 0 || ix >= g.in_w) continue;
                        const int idx = iy * g.in_w + ix;
                        if (is_max) {
                            if (src[idx] > best_v) {
                                best_v = src[idx];
                                best = idx;
                            }
                        } else {
                            gi[idx] += gv * inv_area;
                        }
                    }
                }
                if (is_max && best >= 0) gi[best] += gv;
            }
        }
    }
}

}  // namespace sparsecomm::detail
