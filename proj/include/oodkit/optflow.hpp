/**
 * Copyright 2026 The oodkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "oodkit/imaging.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::optflow {

/// Single-channel real-valued image used inside the flow computation.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FloatImage() = default;
  FloatImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

FloatImage to_float_gray(const imaging::Image& img);

/// Dense displacement field: pixel (x, y) of the first frame moves to
/// (x + u, y + v) in the second.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), u(static_cast<std::size_t>(w) * h), v(static_cast<std::size_t>(w) * h) {}

  bool operator==(const FlowField&) const = default;
};

struct FarnebackParams {
  int window_size = 15;
  int iterations = 3;
  int pyramid_levels = 3;
  double pyramid_scale = 0.5;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const;
};

/// Per-pixel coefficients of f(p + x) ~ x^T A x + b^T x + c, with x = (dx, dy).
struct PolyCoeffs {
  int width = 0;
  int height = 0;
  // Planes: c, b_x, b_y, A_xx, A_yy, A_xy.
  std::vector<float> c, bx, by, axx, ayy, axy;
};

/// Gaussian-weighted least-squares quadratic fit over a poly_n x poly_n
/// window, replicate borders.
PolyCoeffs polynomial_expansion(const FloatImage& img, int poly_n, double poly_sigma);

/// Coarse-to-fine Farneback dense flow from `prev` to `next`.
FlowField farneback_flow(const imaging::Image& prev, const imaging::Image& next,
                         const FarnebackParams& p = {});
FlowField farneback_flow(const FloatImage& prev, const FloatImage& next,
                         const FarnebackParams& p = {});

/// u and v stacks of the `depth` most recent flows, oldest first, each shaped
/// depth x H x W.
struct FlowStack {
  Tensor u;
  Tensor v;
};

/// Returns nullopt while fewer than `depth` flows are available (warm-up).
std::optional<FlowStack> stack_flows(std::span<const FlowField> flows, int depth);

// Middlebury .flo: "PIEH", i32 width, i32 height, interleaved (u, v) f32, all LE.
std::vector<std::uint8_t> write_flo(const FlowField& flow);
FlowField read_flo(std::span<const std::uint8_t> bytes);

}  // namespace oodkit::optflow
