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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace oodkit {

enum class DType : std::uint8_t { kF32, kF16, kQInt8 };

const char* to_string(DType dtype);
DType dtype_from_string(const std::string& name);

/// Affine mapping between real values and int8 codes:
/// real = (q - zero_point) * scale.
struct QuantParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Immutable dense row-major tensor. Storage is chosen by dtype: f32 values,
/// binary16 bit patterns, or int8 codes with their QuantParams.
class Tensor {
 public:
  Tensor() = default;

  static Tensor f32(Shape shape, std::vector<float> data);
  static Tensor f16(Shape shape, std::vector<std::uint16_t> bits);
  static Tensor qint8(Shape shape, std::vector<std::int8_t> codes, QuantParams qp);
  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return f32(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
  }

  const Shape& shape() const noexcept { return shape_; }
  DType dtype() const noexcept { return dtype_; }
  std::size_t numel() const noexcept { return numel_; }
  const std::optional<QuantParams>& quant() const noexcept { return quant_; }

  std::span<const float> f32_data() const;
  std::span<const std::uint16_t> f16_data() const;
  std::span<const std::int8_t> qint8_data() const;

  /// Real-valued view of any dtype (dequantizes or widens).
  std::vector<float> to_f32() const;

  /// Payload as little-endian bytes, as stored in model files.
  std::vector<std::uint8_t> payload_bytes() const;
  static Tensor from_payload(Shape shape, DType dtype, std::span<const std::uint8_t> bytes,
                             std::optional<QuantParams> qp);

  /// Bitwise equality of shape, dtype, quant params and payload.
  bool bit_equal(const Tensor& other) const;

 private:
  Tensor(Shape shape, DType dtype, std::optional<QuantParams> qp);

  Shape shape_;
  DType dtype_ = DType::kF32;
  std::size_t numel_ = 0;
  std::variant<std::vector<float>, std::vector<std::uint16_t>, std::vector<std::int8_t>> data_;
  std::optional<QuantParams> quant_;
};

// Quantization

/// q = clamp(round(x / scale) + zero_point, -128, 127), ties away from zero.
std::int8_t quantize_value(float x, const QuantParams& qp);
inline float dequantize_value(std::int8_t q, const QuantParams& qp) {
  return static_cast<float>(static_cast<std::int32_t>(q) - qp.zero_point) * qp.scale;
}

Tensor quantize_affine(const Tensor& x, const QuantParams& qp);
Tensor dequantize(const Tensor& q);

enum class CalibrationMode { kAsymmetric, kSymmetric };

/// Running min/max over everything observed; turns into QuantParams.
class RangeObserver {
 public:
  void observe(std::span<const float> values);
  void observe(const Tensor& t) { observe(std::span<const float>(t.to_f32())); }

  bool empty() const noexcept { return count_ == 0; }
  float min() const noexcept { return min_; }
  float max() const noexcept { return max_; }

  QuantParams params(CalibrationMode mode) const;

 private:
  float min_ = 0.0f;
  float max_ = 0.0f;
  std::size_t count_ = 0;
};

QuantParams calibrate_quant_params(std::span<const Tensor> samples, CalibrationMode mode);

// Half precision

std::uint16_t f32_to_f16(float x) noexcept;
float f16_to_f32(std::uint16_t bits) noexcept;

/// Round-trips a value through binary16.
inline float round_to_f16(float x) noexcept { return f16_to_f32(f32_to_f16(x)); }

Tensor cast_f16(const Tensor& x);

}  // namespace oodkit
