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

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "oodkit/error.hpp"
#include "oodkit/random.hpp"
#include "oodkit/tensor.hpp"

using namespace oodkit;

namespace {

// Independent binary16 reference: decode every pattern with ldexp, then pick
// the nearest finite value (ties to even mantissa) by search.
struct HalfTable {
  std::vector<std::pair<double, std::uint16_t>> positives;  // sorted finite values >= 0

  HalfTable() {
    for (std::uint32_t b = 0; b < 0x7C00; ++b) {
      const int e = static_cast<int>(b >> 10);
      const int m = static_cast<int>(b & 0x3FF);
      const double v = e == 0 ? std::ldexp(m, -24) : std::ldexp(1024 + m, e - 25);
      positives.emplace_back(v, static_cast<std::uint16_t>(b));
    }
  }

  std::uint16_t encode(float x) const {
    const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
    const double a = std::abs(static_cast<double>(x));
    if (std::isinf(x) || a >= 65520.0) return sign | 0x7C00;
    auto it = std::lower_bound(positives.begin(), positives.end(), std::make_pair(a, std::uint16_t{0}));
    if (it == positives.end()) return sign | 0x7C00;
    if (it->first == a || it == positives.begin()) return sign | it->second;
    const auto lo = *(it - 1);
    const auto hi = *it;
    const double dl = a - lo.first;
    const double dh = hi.first - a;
    if (dl < dh) return sign | lo.second;
    if (dh < dl) return sign | hi.second;
    return sign | ((lo.second & 1) == 0 ? lo.second : hi.second);
  }
};

const HalfTable& half_table() {
  static const HalfTable t;
  return t;
}

}  // namespace

TEST_CASE("quantize_affine element rule") {
  const auto x = Tensor::f32({3}, {1.0f, 100.0f, 0.0f});
  const auto q = quantize_affine(x, {0.1f, 0});
  CHECK(q.qint8_data()[0] == 10);
  CHECK(q.qint8_data()[1] == 127);
  CHECK(quantize_affine(Tensor::f32({1}, {0.0f}), {0.01f, -128}).qint8_data()[0] == -128);
  // ties away from zero
  CHECK(quantize_value(0.25f, {0.5f, 0}) == 1);
  CHECK(quantize_value(-0.25f, {0.5f, 0}) == -1);
  CHECK(quantize_value(-1000.0f, {0.1f, 0}) == -128);
}

TEST_CASE("quantize_affine rejects non-finite input and names the index") {
  const auto x = Tensor::f32({3}, {0.0f, std::numeric_limits<float>::quiet_NaN(), 1.0f});
  try {
    quantize_affine(x, {0.1f, 0});
    FAIL("expected error");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
  CHECK_THROWS_AS(quantize_affine(x, {0.0f, 0}), ArgumentError);
}

TEST_CASE("dequantize") {
  const auto q = Tensor::qint8({2}, {10, -128}, {0.1f, 0});
  CHECK(dequantize(q).f32_data()[0] == doctest::Approx(1.0f));
  CHECK(dequantize(Tensor::qint8({1}, {-128}, {0.01f, -128})).f32_data()[0] == 0.0f);
  CHECK_THROWS_AS(dequantize(Tensor::f32({1}, {1.0f})), ArgumentError);
}

TEST_CASE("calibrate_quant_params formulas") {
  std::vector<Tensor> s = {Tensor::f32({2}, {0.0f, 1.0f}), Tensor::f32({2}, {2.55f, 0.3f})};
  auto qp = calibrate_quant_params(s, CalibrationMode::kAsymmetric);
  CHECK(qp.scale == doctest::Approx(0.01f).epsilon(1e-6));
  CHECK(qp.zero_point == -128);

  std::vector<Tensor> sym = {Tensor::f32({3}, {-1.27f, 0.5f, 1.27f})};
  qp = calibrate_quant_params(sym, CalibrationMode::kSymmetric);
  CHECK(qp.scale == doctest::Approx(0.01f).epsilon(1e-6));
  CHECK(qp.zero_point == 0);

  std::vector<Tensor> zeros = {Tensor::zeros({4})};
  qp = calibrate_quant_params(zeros, CalibrationMode::kAsymmetric);
  CHECK(qp.scale == doctest::Approx(1.0f / 127.0f));
  CHECK(qp.zero_point == 0);

  CHECK_THROWS(calibrate_quant_params(std::span<const Tensor>{}, CalibrationMode::kSymmetric));
}

TEST_CASE("quantization properties over random values") {
  auto rng = make_rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const float lo = static_cast<float>(uniform(rng, -5.0, 0.5));
    const float hi = lo + static_cast<float>(uniform(rng, 0.01, 8.0));
    RangeObserver obs;
    obs.observe(std::vector<float>{lo, hi});
    const auto qp = obs.params(CalibrationMode::kAsymmetric);
    // observed extremes stay representable
    CHECK(std::abs(dequantize_value(quantize_value(lo, qp), qp) - lo) <= qp.scale / 2 * 1.0001f);
    CHECK(std::abs(dequantize_value(quantize_value(hi, qp), qp) - hi) <= qp.scale / 2 * 1.0001f);
    if (lo <= 0.0f && hi >= 0.0f) CHECK(dequantize_value(quantize_value(0.0f, qp), qp) == 0.0f);
    float prev = lo;
    std::int8_t prev_q = quantize_value(prev, qp);
    for (int i = 0; i < 200; ++i) {
      const float x = static_cast<float>(uniform(rng, lo, hi));
      CHECK(std::abs(dequantize_value(quantize_value(x, qp), qp) - x) <= qp.scale / 2 * 1.0001f);
      const float y = std::max(x, prev);
      CHECK(quantize_value(y, qp) >= prev_q);  // monotone
      prev = y;
      prev_q = quantize_value(y, qp);
    }
  }
}

TEST_CASE("f16 known encodings") {
  CHECK(f32_to_f16(1.0f) == 0x3C00);
  CHECK(f32_to_f16(0.1f) == 0x2E66);
  CHECK(f16_to_f32(0x2E66) == doctest::Approx(0.0999756).epsilon(1e-6));
  CHECK(f32_to_f16(70000.0f) == 0x7C00);
  CHECK(f32_to_f16(-70000.0f) == 0xFC00);
  CHECK(f32_to_f16(65504.0f) == 0x7BFF);
  CHECK(f32_to_f16(std::ldexp(1.0f, -24)) == 0x0001);  // smallest subnormal
  CHECK(f32_to_f16(std::ldexp(1.0f, -25)) == 0x0000);  // tie to even -> zero
  CHECK(f16_to_f32(0x0001) == std::ldexp(1.0f, -24));
  CHECK(std::isnan(f16_to_f32(f32_to_f16(std::numeric_limits<float>::quiet_NaN()))));
}

TEST_CASE("f16 matches the brute-force reference and is idempotent") {
  auto rng = make_rng(11);
  const auto& table = half_table();
  for (int i = 0; i < 20000; ++i) {
    const double mag = std::ldexp(uniform(rng, 1.0, 2.0), static_cast<int>(uniform_int(rng, -28, 17)));
    const float x = static_cast<float>(uniform01(rng) < 0.5 ? -mag : mag);
    const auto h = f32_to_f16(x);
    REQUIRE(h == table.encode(x));
    const float r = f16_to_f32(h);
    CHECK(f16_to_f32(f32_to_f16(r)) == r);
  }
  // every pattern decodes and re-encodes to itself
  for (std::uint32_t b = 0; b < 0x10000; ++b) {
    if ((b & 0x7C00) == 0x7C00 && (b & 0x3FF) != 0) continue;  // NaNs
    REQUIRE(f32_to_f16(f16_to_f32(static_cast<std::uint16_t>(b))) == b);
  }
}

TEST_CASE("tensor invariants and payload round trip") {
  CHECK_THROWS_AS(Tensor::f32({2, 2}, {1, 2, 3}), ShapeError);
  const auto t = cast_f16(Tensor::f32({2, 3}, {0.1f, -2.5f, 3.0f, 1e-6f, 65504.0f, -0.0f}));
  CHECK(t.dtype() == DType::kF16);
  const auto back = Tensor::from_payload(t.shape(), t.dtype(), t.payload_bytes(), std::nullopt);
  CHECK(back.bit_equal(t));
  const auto q = Tensor::qint8({2}, {-5, 7}, {0.5f, 3});
  const auto qb = Tensor::from_payload(q.shape(), q.dtype(), q.payload_bytes(), q.quant());
  CHECK(qb.bit_equal(q));
  CHECK_THROWS_AS(Tensor::from_payload({3}, DType::kF32, std::vector<std::uint8_t>(8), std::nullopt),
                  FormatError);
}
