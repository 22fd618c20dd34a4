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

#include "oodkit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "oodkit/error.hpp"
#include "oodkit/random.hpp"

namespace oodkit {

const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::kBadMagic: return "bad magic";
    case FormatErrc::kBadHeader: return "bad header";
    case FormatErrc::kTruncated: return "truncated";
    case FormatErrc::kUnsupported: return "unsupported";
    case FormatErrc::kVersionMismatch: return "version mismatch";
    case FormatErrc::kChecksumMismatch: return "checksum mismatch";
    case FormatErrc::kUnknownLayer: return "unknown layer";
    case FormatErrc::kNonFinite: return "non-finite value";
  }
  return "format error";
}

double standard_normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

const char* to_string(DType dtype) {
  switch (dtype) {
    case DType::kF32: return "f32";
    case DType::kF16: return "f16";
    case DType::kQInt8: return "qint8";
  }
  return "?";
}

DType dtype_from_string(const std::string& name) {
  if (name == "f32") return DType::kF32;
  if (name == "f16") return DType::kF16;
  if (name == "qint8") return DType::kQInt8;
  throw ArgumentError("unknown dtype '" + name + "'");
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, DType dtype, std::optional<QuantParams> qp)
    : shape_(std::move(shape)), dtype_(dtype), quant_(qp) {
  numel_ = static_cast<std::size_t>(shape_numel(shape_));
  if ((dtype_ == DType::kQInt8) != quant_.has_value()) {
    throw ArgumentError("quant params must be present exactly for qint8 tensors");
  }
  if (quant_ && !(quant_->scale > 0.0f)) throw ArgumentError("quant scale must be positive");
  if (quant_ && (quant_->zero_point < -128 || quant_->zero_point > 127)) {
    throw ArgumentError("zero point outside int8 range");
  }
}

Tensor Tensor::f32(Shape shape, std::vector<float> data) {
  Tensor t(std::move(shape), DType::kF32, std::nullopt);
  if (data.size() != t.numel_) {
    throw ShapeError("f32 tensor " + shape_to_string(t.shape_) + " given " +
                     std::to_string(data.size()) + " elements");
  }
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::f16(Shape shape, std::vector<std::uint16_t> bits) {
  Tensor t(std::move(shape), DType::kF16, std::nullopt);
  if (bits.size() != t.numel_) {
    throw ShapeError("f16 tensor " + shape_to_string(t.shape_) + " given " +
                     std::to_string(bits.size()) + " elements");
  }
  t.data_ = std::move(bits);
  return t;
}

Tensor Tensor::qint8(Shape shape, std::vector<std::int8_t> codes, QuantParams qp) {
  Tensor t(std::move(shape), DType::kQInt8, qp);
  if (codes.size() != t.numel_) {
    throw ShapeError("qint8 tensor " + shape_to_string(t.shape_) + " given " +
                     std::to_string(codes.size()) + " elements");
  }
  t.data_ = std::move(codes);
  return t;
}

std::span<const float> Tensor::f32_data() const {
  if (dtype_ != DType::kF32) throw ArgumentError("tensor is not f32");
  return std::get<std::vector<float>>(data_);
}

std::span<const std::uint16_t> Tensor::f16_data() const {
  if (dtype_ != DType::kF16) throw ArgumentError("tensor is not f16");
  return std::get<std::vector<std::uint16_t>>(data_);
}

std::span<const std::int8_t> Tensor::qint8_data() const {
  if (dtype_ != DType::kQInt8) throw ArgumentError("tensor is not qint8");
  return std::get<std::vector<std::int8_t>>(data_);
}

std::vector<float> Tensor::to_f32() const {
  switch (dtype_) {
    case DType::kF32: {
      auto s = f32_data();
      return {s.begin(), s.end()};
    }
    case DType::kF16: {
      auto s = f16_data();
      std::vector<float> out(s.size());
      std::transform(s.begin(), s.end(), out.begin(), f16_to_f32);
      return out;
    }
    case DType::kQInt8: {
      auto s = qint8_data();
      std::vector<float> out(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) out[i] = dequantize_value(s[i], *quant_);
      return out;
    }
  }
  return {};
}

namespace {

template <class T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <class T>
T read_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                               std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

std::size_t element_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF16: return 2;
    case DType::kQInt8: return 1;
  }
  return 0;
}

}  // namespace

std::vector<std::uint8_t> Tensor::payload_bytes() const {
  std::vector<std::uint8_t> out;
  out.reserve(numel_ * element_size(dtype_));
  std::visit([&](const auto& v) {
    for (auto x : v) append_le(out, x);
  }, data_);
  return out;
}

Tensor Tensor::from_payload(Shape shape, DType dtype, std::span<const std::uint8_t> bytes,
                            std::optional<QuantParams> qp) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  if (bytes.size() != n * element_size(dtype)) {
    throw FormatError(FormatErrc::kTruncated, "tensor payload has " + std::to_string(bytes.size()) +
                                                  " bytes, expected " +
                                                  std::to_string(n * element_size(dtype)));
  }
  switch (dtype) {
    case DType::kF32: {
      std::vector<float> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = read_le<float>(bytes.data() + 4 * i);
      return f32(std::move(shape), std::move(v));
    }
    case DType::kF16: {
      std::vector<std::uint16_t> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = read_le<std::uint16_t>(bytes.data() + 2 * i);
      return f16(std::move(shape), std::move(v));
    }
    case DType::kQInt8: {
      if (!qp) throw FormatError(FormatErrc::kBadHeader, "qint8 tensor without quant params");
      std::vector<std::int8_t> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<std::int8_t>(bytes[i]);
      return qint8(std::move(shape), std::move(v), *qp);
    }
  }
  throw FormatError(FormatErrc::kUnsupported, "dtype");
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ && dtype_ == other.dtype_ && quant_ == other.quant_ &&
         payload_bytes() == other.payload_bytes();
}

// Quantization

std::int8_t quantize_value(float x, const QuantParams& qp) {
  const double q = std::round(static_cast<double>(x) / qp.scale) + qp.zero_point;
  return static_cast<std::int8_t>(std::clamp(q, -128.0, 127.0));
}

Tensor quantize_affine(const Tensor& x, const QuantParams& qp) {
  if (!(qp.scale > 0.0f)) throw ArgumentError("quantize_affine: scale must be positive");
  const auto values = x.to_f32();
  std::vector<std::int8_t> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ArgumentError("quantize_affine: non-finite element at index " + std::to_string(i));
    }
    codes[i] = quantize_value(values[i], qp);
  }
  return Tensor::qint8(x.shape(), std::move(codes), qp);
}

Tensor dequantize(const Tensor& q) {
  if (q.dtype() != DType::kQInt8 || !q.quant()) {
    throw ArgumentError("dequantize: tensor carries no quant params");
  }
  return Tensor::f32(q.shape(), q.to_f32());
}

void RangeObserver::observe(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) continue;
    if (count_ == 0) {
      min_ = max_ = v;
    } else {
      min_ = std::min(min_, v);
      max_ = std::max(max_, v);
    }
    ++count_;
  }
}

QuantParams RangeObserver::params(CalibrationMode mode) const {
  if (count_ == 0) throw ArgumentError("calibration observed no finite values");
  const double lo = min_;
  const double hi = max_;
  if (lo == hi) {
    return {static_cast<float>(std::max(std::abs(lo), 1.0) / 127.0), 0};
  }
  if (mode == CalibrationMode::kSymmetric) {
    return {static_cast<float>(std::max(std::abs(lo), std::abs(hi)) / 127.0), 0};
  }
  // The range is widened to contain zero so that 0.0 stays exactly representable.
  const double a = std::min(lo, 0.0);
  const double b = std::max(hi, 0.0);
  const float scale = static_cast<float>((b - a) / 255.0);
  const double zp = -128.0 - std::round(a / static_cast<double>(scale));
  return {scale, static_cast<std::int32_t>(std::clamp(zp, -128.0, 127.0))};
}

QuantParams calibrate_quant_params(std::span<const Tensor> samples, CalibrationMode mode) {
  if (samples.empty()) throw ArgumentError("calibrate_quant_params: empty sample set");
  RangeObserver obs;
  for (const auto& t : samples) obs.observe(t);
  return obs.params(mode);
}

// Half precision

std::uint16_t f32_to_f16(float x) noexcept {
  const auto f = std::bit_cast<std::uint32_t>(x);
  const auto sign = static_cast<std::uint16_t>((f >> 16) & 0x8000u);
  const std::uint32_t abs = f & 0x7FFFFFFFu;

  if (abs >= 0x7F800000u) {  // inf / nan
    if (abs == 0x7F800000u) return sign | 0x7C00u;
    return static_cast<std::uint16_t>(sign | 0x7E00u | ((abs >> 13) & 0x3FFu));
  }
  if (abs >= 0x477FF000u) return sign | 0x7C00u;  // >= 65520 rounds to inf
  if (abs < 0x38800000u) {                        // below 2^-14: subnormal or zero
    const float mag = std::bit_cast<float>(abs) * 0x1.0p24f;
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(std::nearbyint(mag)));
  }
  const std::uint32_t exp = (abs >> 23) - 112u;
  const std::uint32_t mant = abs & 0x7FFFFFu;
  std::uint32_t h = (exp << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return static_cast<std::uint16_t>(sign | h);
}

float f16_to_f32(std::uint16_t bits) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1Fu;
  const std::uint32_t mant = bits & 0x3FFu;
  if (exp == 0) {
    const float mag = static_cast<float>(mant) * 0x1.0p-24f;
    return sign ? -mag : mag;
  }
  if (exp == 0x1F) return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
}

Tensor cast_f16(const Tensor& x) {
  const auto values = x.to_f32();
  std::vector<std::uint16_t> bits(values.size());
  std::transform(values.begin(), values.end(), bits.begin(), f32_to_f16);
  return Tensor::f16(x.shape(), std::move(bits));
}

}  // namespace oodkit
