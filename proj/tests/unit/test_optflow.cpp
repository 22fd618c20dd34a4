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

#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oodkit/error.hpp"
#include "oodkit/optflow.hpp"
#include "oodkit/random.hpp"

using namespace oodkit;
using namespace oodkit::optflow;

namespace {

// Smooth random texture: blurred white noise, periodic in x and y.
FloatImage smooth_texture(int w, int h, std::uint64_t seed, double sigma = 2.0) {
  auto rng = make_rng(seed);
  std::vector<double> noise(static_cast<std::size_t>(w) * h);
  for (auto& v : noise) v = uniform(rng, 0.0, 255.0);
  const int r = static_cast<int>(3 * sigma);
  FloatImage out(w, h);
  double lo = 1e9, hi = -1e9;
  std::vector<double> tmp(noise.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0, ws = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
          acc += g * noise[static_cast<std::size_t>(((y + dy + h) % h) * w + (x + dx + w) % w)];
          ws += g;
        }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / ws;
      lo = std::min(lo, acc / ws);
      hi = std::max(hi, acc / ws);
    }
  for (std::size_t i = 0; i < tmp.size(); ++i) out.data[i] = static_cast<float>((tmp[i] - lo) / (hi - lo) * 255.0);
  return out;
}

FloatImage shift_wrap(const FloatImage& img, int sx, int sy) {
  FloatImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = img.at(((x - sx) % img.width + img.width) % img.width,
                            ((y - sy) % img.height + img.height) % img.height);
  return out;
}

struct CentralStats {
  double mean_u = 0, mean_v = 0, mean_abs_v = 0, epe = 0;
};

CentralStats central(const FlowField& f, double gt_u, double gt_v) {
  const int mx = f.width / 8;
  const int my = f.height / 8;
  CentralStats s;
  int n = 0;
  for (int y = my; y < f.height - my; ++y)
    for (int x = mx; x < f.width - mx; ++x) {
      const auto i = static_cast<std::size_t>(y) * f.width + x;
      s.mean_u += f.u[i];
      s.mean_v += f.v[i];
      s.mean_abs_v += std::abs(f.v[i]);
      s.epe += std::hypot(f.u[i] - gt_u, f.v[i] - gt_v);
      ++n;
    }
  s.mean_u /= n;
  s.mean_v /= n;
  s.mean_abs_v /= n;
  s.epe /= n;
  return s;
}

// Direct weighted least squares at one pixel via normal equations solved by
// Gaussian elimination on the full window (no separable filtering).
std::array<double, 6> direct_fit(const FloatImage& img, int px, int py, int poly_n, double sigma) {
  const int n = poly_n / 2;
  double ata[6][7] = {};
  for (int dy = -n; dy <= n; ++dy)
    for (int dx = -n; dx <= n; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      const double b[6] = {1, double(dx), double(dy), double(dx * dx), double(dy * dy), double(dx * dy)};
      const double f = img.at(px + dx, py + dy);
      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) ata[i][j] += w * b[i] * b[j];
        ata[i][6] += w * b[i] * f;
      }
    }
  for (int c = 0; c < 6; ++c) {
    for (int r = c + 1; r < 6; ++r) {
      const double f = ata[r][c] / ata[c][c];
      for (int k = c; k < 7; ++k) ata[r][k] -= f * ata[c][k];
    }
  }
  std::array<double, 6> x{};
  for (int r = 5; r >= 0; --r) {
    double s = ata[r][6];
    for (int k = r + 1; k < 6; ++k) s -= ata[r][k] * x[static_cast<std::size_t>(k)];
    x[static_cast<std::size_t>(r)] = s / ata[r][r];
  }
  return x;
}

}  // namespace

TEST_CASE("polynomial expansion of exact signals") {
  const int w = 16, h = 12;
  FloatImage constant(w, h, 42.0f);
  auto pc = polynomial_expansion(constant, 5, 1.1);
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      CHECK(pc.c[i] == doctest::Approx(42.0).epsilon(1e-5));
      CHECK(std::abs(pc.bx[i]) < 1e-4);
      CHECK(std::abs(pc.axx[i]) < 1e-4);
    }

  FloatImage ramp(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp.at(x, y) = 2.0f * x;
  pc = polynomial_expansion(ramp, 5, 1.1);
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      CHECK(pc.bx[i] == doctest::Approx(2.0).epsilon(1e-4));
      CHECK(std::abs(pc.by[i]) < 1e-4);
      CHECK(std::abs(pc.axx[i]) < 1e-4);
      CHECK(std::abs(pc.ayy[i]) < 1e-4);
    }

  FloatImage quad(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) quad.at(x, y) = static_cast<float>((x - 8.0) * (x - 8.0));
  pc = polynomial_expansion(quad, 5, 1.1);
  const auto oracle = direct_fit(quad, 7, 6, 5, 1.1);
  const auto i = static_cast<std::size_t>(6) * w + 7;
  CHECK(oracle[3] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(pc.axx[i] - 1.0) < 1e-3);
  CHECK(std::abs(pc.bx[i] - oracle[1]) < 1e-3);

  // random texture agrees with the direct fit at interior pixels
  const auto tex = smooth_texture(20, 20, 3);
  pc = polynomial_expansion(tex, 7, 1.5);
  for (auto [x, y] : {std::pair{5, 5}, {10, 13}, {14, 8}}) {
    const auto o = direct_fit(tex, x, y, 7, 1.5);
    const auto k = static_cast<std::size_t>(y) * 20 + x;
    CHECK(pc.c[k] == doctest::Approx(o[0]).epsilon(1e-4));
    CHECK(pc.bx[k] == doctest::Approx(o[1]).epsilon(1e-3));
    CHECK(pc.by[k] == doctest::Approx(o[2]).epsilon(1e-3));
    CHECK(pc.axx[k] == doctest::Approx(o[3]).epsilon(1e-3));
    CHECK(pc.ayy[k] == doctest::Approx(o[4]).epsilon(1e-3));
    CHECK(pc.axy[k] == doctest::Approx(o[5] / 2).epsilon(1e-3));
  }
}

TEST_CASE("identical and textureless frames give near-zero flow") {
  const auto tex = smooth_texture(48, 40, 5);
  auto f = farneback_flow(tex, tex);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    CHECK(std::abs(f.u[i]) <= 0.1f);
    CHECK(std::abs(f.v[i]) <= 0.1f);
  }
  FloatImage flat(32, 24, 128.0f);
  f = farneback_flow(flat, flat);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    REQUIRE(std::isfinite(f.u[i]));
    CHECK(std::abs(f.u[i]) <= 0.1f);
    CHECK(std::abs(f.v[i]) <= 0.1f);
  }
  FloatImage flat2(32, 24, 90.0f);
  f = farneback_flow(flat, flat2);
  for (std::size_t i = 0; i < f.u.size(); ++i) CHECK(std::isfinite(f.u[i]));
}

TEST_CASE("translated texture recovers the translation") {
  const auto start = std::chrono::steady_clock::now();
  const auto a = smooth_texture(64, 64, 17);
  const auto b = shift_wrap(a, 3, 0);
  const auto f = farneback_flow(a, b);
  const auto s = central(f, 3.0, 0.0);
  CHECK(s.mean_u >= 2.5);
  CHECK(s.mean_u <= 3.5);
  CHECK(s.mean_abs_v <= 0.3);
  CHECK(s.epe <= 0.5);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(10));
}

TEST_CASE("flow is covariant under swapping frames") {
  const auto img = smooth_texture(64, 48, 23);
  for (int s : {-4, -2, 1, 3}) {
    const auto shifted = shift_wrap(img, s, 0);
    const auto fwd = central(farneback_flow(img, shifted), s, 0);
    const auto bwd = central(farneback_flow(shifted, img), -s, 0);
    CHECK(std::abs(fwd.mean_u + bwd.mean_u) <= 0.5);
  }
}

TEST_CASE("frame size mismatch and parameter validation") {
  CHECK_THROWS_AS(farneback_flow(FloatImage(10, 10), FloatImage(10, 11)), ShapeError);
  FarnebackParams p;
  p.window_size = 4;
  CHECK_THROWS_AS(farneback_flow(FloatImage(10, 10), FloatImage(10, 10), p), ArgumentError);
}

TEST_CASE("stack_flows ordering and warm-up") {
  std::vector<FlowField> history;
  for (int k = 1; k <= 8; ++k) {
    FlowField f(3, 2);
    std::fill(f.u.begin(), f.u.end(), static_cast<float>(k));
    std::fill(f.v.begin(), f.v.end(), static_cast<float>(-k));
    history.push_back(f);
  }
  CHECK_FALSE(stack_flows(std::span(history).first(1), 2).has_value());
  const auto two = stack_flows(std::span(history).first(2), 2);
  REQUIRE(two.has_value());
  CHECK(two->u.shape() == Shape{2, 2, 3});
  CHECK(two->u.f32_data()[0] == 1.0f);
  CHECK(two->u.f32_data()[6] == 2.0f);
  CHECK(two->v.f32_data()[6] == -2.0f);
  const auto six = stack_flows(history, 6);
  REQUIRE(six.has_value());
  CHECK(six->u.f32_data()[0] == 3.0f);
  CHECK(six->u.f32_data()[5 * 6] == 8.0f);
}

TEST_CASE(".flo format") {
  FlowField one(1, 1);
  one.u[0] = 1.5f;
  one.v[0] = -2.0f;
  const auto bytes = write_flo(one);
  CHECK(bytes.size() == 20);
  CHECK(read_flo(bytes) == one);

  FlowField f(7, 3);
  auto rng = make_rng(1);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = static_cast<float>(standard_normal(rng));
    f.v[i] = static_cast<float>(standard_normal(rng));
  }
  CHECK(read_flo(write_flo(f)) == f);

  auto bad = bytes;
  bad[0] = bad[1] = bad[2] = bad[3] = 'X';
  try {
    read_flo(bad);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::kBadMagic);
  }
  auto truncated = write_flo(f);
  truncated.resize(truncated.size() - 3);
  try {
    read_flo(truncated);
    FAIL("expected error");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatErrc::kTruncated);
  }
}
