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

#include "oodkit/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodkit/nn.hpp"
#include "oodkit/random.hpp"

namespace oodkit::net {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kMaxPool2D: return "maxpool2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kBatchNorm2D: return "batchnorm2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kReshape: return "reshape";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::kConv2D, LayerKind::kMaxPool2D, LayerKind::kDense, LayerKind::kReLU,
                 LayerKind::kBatchNorm2D, LayerKind::kFlatten, LayerKind::kUpsample, LayerKind::kReshape}) {
    if (name == to_string(k)) return k;
  }
  throw FormatError(FormatErrc::kUnknownLayer, "unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv2d(int out_channels, int kernel, int stride, int padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv2D;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::maxpool2d(int kernel) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool2D;
  s.kernel = kernel;
  return s;
}

LayerSpec LayerSpec::dense(int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.out_dim = out_dim;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::batchnorm2d() {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm2D;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::upsample(int h, int w) {
  LayerSpec s;
  s.kind = LayerKind::kUpsample;
  s.h = h;
  s.w = w;
  return s;
}

LayerSpec LayerSpec::reshape(int c, int h, int w) {
  LayerSpec s;
  s.kind = LayerKind::kReshape;
  s.c = c;
  s.h = h;
  s.w = w;
  return s;
}

std::string to_string(const Geometry& g) {
  return std::to_string(g.c) + "x" + std::to_string(g.h) + "x" + std::to_string(g.w);
}

const char* to_string(VarianceParam v) {
  switch (v) {
    case VarianceParam::kLogVar: return "log_var";
    case VarianceParam::kNegLogVar: return "neg_log_var";
    case VarianceParam::kVar: return "var";
  }
  return "?";
}

VarianceParam variance_param_from_string(const std::string& name) {
  for (auto v : {VarianceParam::kLogVar, VarianceParam::kNegLogVar, VarianceParam::kVar}) {
    if (name == to_string(v)) return v;
  }
  throw ArgumentError("unknown variance parametrization '" + name + "'");
}

Geometry layer_output(const LayerSpec& s, const Geometry& in) {
  const std::string where = std::string(to_string(s.kind)) + " on " + to_string(in);
  if (in.c < 1 || in.h < 1 || in.w < 1) throw ShapeError("empty geometry for " + where);
  switch (s.kind) {
    case LayerKind::kConv2D: {
      if (s.out_channels < 1 || s.kernel < 1 || s.stride < 1 || s.padding < 0) {
        throw ShapeError("invalid conv2d parameters for " + where);
      }
      const int oh = in.h + 2 * s.padding - s.kernel;
      const int ow = in.w + 2 * s.padding - s.kernel;
      if (oh < 0 || ow < 0) throw ShapeError("kernel larger than padded input for " + where);
      return {s.out_channels, oh / s.stride + 1, ow / s.stride + 1};
    }
    case LayerKind::kMaxPool2D:
      if (s.kernel < 1 || in.h < s.kernel || in.w < s.kernel) throw ShapeError("pool kernel too large for " + where);
      return {in.c, in.h / s.kernel, in.w / s.kernel};
    case LayerKind::kDense:
      if (s.out_dim < 1) throw ShapeError("invalid dense size for " + where);
      return {s.out_dim, 1, 1};
    case LayerKind::kReLU:
    case LayerKind::kBatchNorm2D: return in;
    case LayerKind::kFlatten: return {static_cast<int>(in.numel()), 1, 1};
    case LayerKind::kUpsample:
      if (s.h < 1 || s.w < 1) throw ShapeError("invalid upsample target for " + where);
      return {in.c, s.h, s.w};
    case LayerKind::kReshape: {
      const Geometry out{s.c, s.h, s.w};
      if (out.c < 1 || out.h < 1 || out.w < 1 || out.numel() != in.numel()) {
        throw ShapeError("reshape to " + to_string(out) + " does not preserve size for " + where);
      }
      return out;
    }
  }
  throw ShapeError("unhandled layer for " + where);
}

std::vector<Geometry> ModelSpec::encoder_shapes() const {
  std::vector<Geometry> out;
  Geometry g = input;
  for (const auto& l : encoder) {
    g = layer_output(l, g);
    out.push_back(g);
  }
  return out;
}

Geometry ModelSpec::body_output() const {
  const auto s = encoder_shapes();
  return s.empty() ? input : s.back();
}

std::vector<LayerSpec> ModelSpec::mirror_decoder() const {
  std::vector<Geometry> s{input};
  for (const auto& g : encoder_shapes()) s.push_back(g);
  auto flat = [](const Geometry& g) { return g.h == 1 && g.w == 1; };
  std::vector<LayerSpec> dec;
  const Geometry top = s.back();
  dec.push_back(LayerSpec::dense(static_cast<int>(top.numel())));
  if (!flat(top)) dec.push_back(LayerSpec::reshape(top.c, top.h, top.w));
  for (std::size_t i = encoder.size(); i-- > 0;) {
    const LayerSpec& l = encoder[i];
    const Geometry& before = s[i];
    const Geometry& after = s[i + 1];
    switch (l.kind) {
      case LayerKind::kConv2D: {
        if (before.h != after.h || before.w != after.w) dec.push_back(LayerSpec::upsample(before.h, before.w));
        const int k = l.kernel | 1;
        dec.push_back(LayerSpec::conv2d(before.c, k, 1, k / 2));
        break;
      }
      case LayerKind::kMaxPool2D:
      case LayerKind::kUpsample: dec.push_back(LayerSpec::upsample(before.h, before.w)); break;
      case LayerKind::kDense:
        dec.push_back(LayerSpec::dense(static_cast<int>(before.numel())));
        if (!flat(before)) dec.push_back(LayerSpec::reshape(before.c, before.h, before.w));
        break;
      case LayerKind::kReLU: dec.push_back(LayerSpec::relu()); break;
      case LayerKind::kBatchNorm2D: dec.push_back(LayerSpec::batchnorm2d()); break;
      case LayerKind::kFlatten:
      case LayerKind::kReshape: dec.push_back(LayerSpec::reshape(before.c, before.h, before.w)); break;
    }
  }
  return dec;
}

void ModelSpec::validate() const {
  if (input.c < 1 || input.h < 1 || input.w < 1) throw ShapeError("invalid input geometry " + to_string(input));
  if (n_latent < 1) throw ArgumentError("n_latent must be >= 1");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("beta must be positive");
  encoder_shapes();
  Geometry g{n_latent, 1, 1};
  for (const auto& l : decoder_layers()) g = layer_output(l, g);
  if (!(g == input)) throw ShapeError("decoder output " + to_string(g) + " does not match input " + to_string(input));
}

ModelSpec bvae_spec(Geometry input, int n_latent, double beta, VarianceParam variance) {
  ModelSpec s;
  s.input = input;
  s.n_latent = n_latent;
  s.beta = beta;
  s.variance = variance;
  s.variance_relu = true;
  int h = input.h, w = input.w;
  for (int depth : {16, 16, 8, 8}) {
    s.encoder.push_back(LayerSpec::conv2d(depth, 3, 1, 1));
    s.encoder.push_back(LayerSpec::relu());
    if (h >= 2 && w >= 2) {
      s.encoder.push_back(LayerSpec::maxpool2d(2));
      h /= 2;
      w /= 2;
    }
  }
  s.encoder.push_back(LayerSpec::flatten());
  s.encoder.push_back(LayerSpec::dense(128));
  s.encoder.push_back(LayerSpec::relu());
  s.validate();
  return s;
}

ModelSpec optflow_spec(Geometry input, int n_latent, double beta) {
  ModelSpec s;
  s.input = input;
  s.n_latent = n_latent;
  s.beta = beta;
  s.variance = VarianceParam::kVar;
  s.variance_relu = true;
  for (int depth : {8, 16, 16, 32}) {
    s.encoder.push_back(LayerSpec::conv2d(depth, 5, 3, 2));
    s.encoder.push_back(LayerSpec::batchnorm2d());
    s.encoder.push_back(LayerSpec::relu());
  }
  s.encoder.push_back(LayerSpec::flatten());
  s.validate();
  return s;
}

const Tensor& DetectorModel::weight(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw Error("model has no weight '" + name + "'");
  return it->second;
}

bool DetectorModel::operator==(const DetectorModel& other) const {
  if (!(spec == other.spec) || precision != other.precision || activation_quant != other.activation_quant ||
      metadata != other.metadata || weights.size() != other.weights.size()) {
    return false;
  }
  for (const auto& [name, t] : weights) {
    auto it = other.weights.find(name);
    if (it == other.weights.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

DetectorModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  VaeGraph<float> g(spec, {});
  Rng rng = make_rng(seed, 0x696E6974);
  for (Param<float>* p : g.params()) {
    const bool is_weight = p->name.size() > 2 && p->name.compare(p->name.size() - 2, 2, ".w") == 0;
    if (is_weight) {
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < p->shape.size(); ++d) fan_in *= p->shape[d];
      double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      if (p->name == "var.w") sd *= 0.1;
      for (auto& v : p->value) v = static_cast<float>(sd * standard_normal(rng));
    } else if (p->name == "var.b" && spec.variance == VarianceParam::kVar) {
      std::fill(p->value.begin(), p->value.end(), 1.0f);
    }
  }
  DetectorModel m;
  m.spec = spec;
  m.weights = g.export_weights();
  m.precision = DType::kF32;
  return m;
}

// Tensor-level operators

namespace {

struct Nchw {
  int n, c, h, w;
  bool batched;
};

Nchw as_nchw(const Tensor& x, const char* op) {
  const Shape& s = x.shape();
  if (s.size() == 3) return {1, int(s[0]), int(s[1]), int(s[2]), false};
  if (s.size() == 4) return {int(s[0]), int(s[1]), int(s[2]), int(s[3]), true};
  throw ShapeError(std::string(op) + " expects a CHW or NCHW tensor, got " + shape_to_string(s));
}

Shape out_shape(const Nchw& in, int c, int h, int w) {
  if (in.batched) return {in.n, c, h, w};
  return {c, h, w};
}

Tensor pack(DType dtype, Shape shape, std::vector<float> v) {
  if (dtype == DType::kF16) {
    std::vector<std::uint16_t> bits(v.size());
    std::transform(v.begin(), v.end(), bits.begin(), f32_to_f16);
    return Tensor::f16(std::move(shape), std::move(bits));
  }
  return Tensor::f32(std::move(shape), std::move(v));
}

std::int8_t requantize(std::int32_t acc, double multiplier, std::int32_t zero_point) {
  const double r = std::round(static_cast<double>(acc) * multiplier) + zero_point;
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

std::vector<std::int32_t> centered(const Tensor& q) {
  const auto codes = q.qint8_data();
  const std::int32_t zp = q.quant()->zero_point;
  std::vector<std::int32_t> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i] - zp;
  return out;
}

std::vector<std::int32_t> quantize_bias(const Tensor& b, double acc_scale) {
  const auto v = b.to_f32();
  std::vector<std::int32_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<std::int32_t>(std::lround(v[i] / acc_scale));
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding,
              std::optional<QuantParams> out_qp) {
  const Nchw in = as_nchw(x, "conv2d");
  const Shape& ws = w.shape();
  if (ws.size() != 4 || ws[2] != ws[3]) throw ShapeError("conv2d weight must be OCxICxKxK, got " + shape_to_string(ws));
  const int oc = int(ws[0]), k = int(ws[2]);
  if (ws[1] != in.c) {
    throw ShapeError("conv2d weight expects " + std::to_string(ws[1]) + " input channels, got " +
                     std::to_string(in.c));
  }
  if (b.shape() != Shape{oc}) throw ShapeError("conv2d bias must have shape [" + std::to_string(oc) + "]");
  const Geometry og = layer_output(LayerSpec::conv2d(oc, k, stride, padding), {in.c, in.h, in.w});
  const std::size_t in_sz = std::size_t(in.c) * in.h * in.w;
  const std::size_t out_sz = std::size_t(og.numel());
  const Shape shape = out_shape(in, og.c, og.h, og.w);

  if (x.dtype() == DType::kQInt8 || w.dtype() == DType::kQInt8) {
    if (x.dtype() != DType::kQInt8 || w.dtype() != DType::kQInt8) {
      throw ArgumentError("conv2d: quantized path needs qint8 input and weights");
    }
    if (!out_qp) throw ArgumentError("conv2d: quantized path needs output QuantParams");
    const double sx = x.quant()->scale, sw = w.quant()->scale;
    const auto xc = centered(x);
    const auto wc = w.qint8_data();
    const auto bias = quantize_bias(b, sx * sw);
    const double mult = sx * sw / out_qp->scale;
    std::vector<std::int8_t> out(out_sz * in.n);
    std::vector<std::int32_t> acc(out_sz);
    for (int n = 0; n < in.n; ++n) {
      for (int o = 0; o < oc; ++o) std::fill_n(acc.begin() + std::size_t(o) * og.h * og.w, og.h * og.w, bias[o]);
      kernels::conv_forward<std::int32_t>(xc.data() + n * in_sz, in.c, in.h, in.w, wc.data(), oc, k, stride,
                                          padding, og.h, og.w, acc.data());
      for (std::size_t j = 0; j < out_sz; ++j) out[n * out_sz + j] = requantize(acc[j], mult, out_qp->zero_point);
    }
    return Tensor::qint8(shape, std::move(out), *out_qp);
  }

  const auto xv = x.to_f32();
  const auto wv = w.to_f32();
  const auto bv = b.to_f32();
  std::vector<float> out(out_sz * in.n);
  for (int n = 0; n < in.n; ++n) {
    float* y = out.data() + n * out_sz;
    for (int o = 0; o < oc; ++o) std::fill_n(y + std::size_t(o) * og.h * og.w, og.h * og.w, bv[o]);
    kernels::conv_forward<float>(xv.data() + n * in_sz, in.c, in.h, in.w, wv.data(), oc, k, stride, padding, og.h,
                                 og.w, y);
  }
  const bool half = x.dtype() == DType::kF16 || w.dtype() == DType::kF16;
  return pack(half ? DType::kF16 : DType::kF32, shape, std::move(out));
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b, std::optional<QuantParams> out_qp) {
  const Shape& ws = w.shape();
  if (ws.size() != 2) throw ShapeError("dense weight must be OUTxIN, got " + shape_to_string(ws));
  const int out_dim = int(ws[0]), in_dim = int(ws[1]);
  const Shape& xs = x.shape();
  if (xs.empty()) throw ShapeError("dense input must have rank >= 1");
  int n = 1;
  Shape shape{out_dim};
  if (xs.size() == 2) {
    n = int(xs[0]);
    shape = {n, out_dim};
  }
  if (static_cast<std::int64_t>(x.numel()) != std::int64_t(n) * in_dim) {
    throw ShapeError("dense expects " + std::to_string(in_dim) + " inputs per sample, got " + shape_to_string(xs));
  }
  if (b.shape() != Shape{out_dim}) throw ShapeError("dense bias must have shape [" + std::to_string(out_dim) + "]");

  if (x.dtype() == DType::kQInt8 || w.dtype() == DType::kQInt8) {
    if (x.dtype() != DType::kQInt8 || w.dtype() != DType::kQInt8) {
      throw ArgumentError("dense: quantized path needs qint8 input and weights");
    }
    if (!out_qp) throw ArgumentError("dense: quantized path needs output QuantParams");
    const double sx = x.quant()->scale, sw = w.quant()->scale;
    const auto xc = centered(x);
    const auto bias = quantize_bias(b, sx * sw);
    const double mult = sx * sw / out_qp->scale;
    std::vector<std::int8_t> out(std::size_t(n) * out_dim);
    std::vector<std::int32_t> acc(out_dim);
    for (int s = 0; s < n; ++s) {
      kernels::dense_forward<std::int32_t>(xc.data() + std::size_t(s) * in_dim, in_dim, w.qint8_data().data(),
                                           bias.data(), out_dim, acc.data());
      for (int o = 0; o < out_dim; ++o) out[std::size_t(s) * out_dim + o] = requantize(acc[o], mult, out_qp->zero_point);
    }
    return Tensor::qint8(shape, std::move(out), *out_qp);
  }

  const auto xv = x.to_f32();
  const auto wv = w.to_f32();
  const auto bv = b.to_f32();
  std::vector<float> out(std::size_t(n) * out_dim);
  for (int s = 0; s < n; ++s) {
    kernels::dense_forward<float>(xv.data() + std::size_t(s) * in_dim, in_dim, wv.data(), bv.data(), out_dim,
                                  out.data() + std::size_t(s) * out_dim);
  }
  const bool half = x.dtype() == DType::kF16 || w.dtype() == DType::kF16;
  return pack(half ? DType::kF16 : DType::kF32, shape, std::move(out));
}

Tensor maxpool2d(const Tensor& x, int kernel) {
  const Nchw in = as_nchw(x, "maxpool2d");
  const Geometry og = layer_output(LayerSpec::maxpool2d(kernel), {in.c, in.h, in.w});
  const Shape shape = out_shape(in, og.c, og.h, og.w);
  auto pool = [&](auto src, auto& dst) {
    std::size_t j = 0;
    for (int n = 0; n < in.n; ++n) {
      for (int c = 0; c < in.c; ++c) {
        const std::size_t plane = ((std::size_t(n) * in.c) + c) * in.h * in.w;
        for (int r = 0; r < og.h; ++r) {
          for (int q = 0; q < og.w; ++q, ++j) {
            auto best = src[plane + std::size_t(r * kernel) * in.w + q * kernel];
            for (int a = 0; a < kernel; ++a) {
              for (int b = 0; b < kernel; ++b) {
                best = std::max(best, src[plane + std::size_t(r * kernel + a) * in.w + q * kernel + b]);
              }
            }
            dst[j] = best;
          }
        }
      }
    }
  };
  const std::size_t total = std::size_t(in.n) * og.numel();
  if (x.dtype() == DType::kQInt8) {
    std::vector<std::int8_t> out(total);
    pool(x.qint8_data(), out);
    return Tensor::qint8(shape, std::move(out), *x.quant());
  }
  std::vector<float> out(total);
  pool(x.to_f32(), out);
  return pack(x.dtype(), shape, std::move(out));
}

Tensor relu(const Tensor& x) {
  if (x.dtype() == DType::kQInt8) {
    const auto zp = static_cast<std::int8_t>(x.quant()->zero_point);
    std::vector<std::int8_t> out(x.qint8_data().begin(), x.qint8_data().end());
    for (auto& q : out) q = std::max(q, zp);
    return Tensor::qint8(x.shape(), std::move(out), *x.quant());
  }
  auto v = x.to_f32();
  for (auto& f : v) f = f > 0.0f ? f : 0.0f;
  return pack(x.dtype(), x.shape(), std::move(v));
}

Tensor batchnorm2d(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                   std::vector<float>& running_mean, std::vector<float>& running_var, double eps,
                   BatchNormMode mode, double momentum) {
  const Nchw in = as_nchw(x, "batchnorm2d");
  const auto c = std::size_t(in.c);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batchnorm2d parameters must have " + std::to_string(c) + " channels");
  }
  if (!(eps > 0.0)) throw ArgumentError("batchnorm2d eps must be positive");
  const auto v = x.to_f32();
  const std::size_t plane = std::size_t(in.h) * in.w;
  std::vector<float> out(v.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = running_mean[ch], var = running_var[ch];
    if (mode == BatchNormMode::kTraining) {
      const double m = double(plane) * in.n;
      double s = 0, ss = 0;
      for (int n = 0; n < in.n; ++n) {
        for (std::size_t j = 0; j < plane; ++j) s += v[(std::size_t(n) * c + ch) * plane + j];
      }
      mean = s / m;
      for (int n = 0; n < in.n; ++n) {
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = v[(std::size_t(n) * c + ch) * plane + j] - mean;
          ss += d * d;
        }
      }
      var = ss / m;
      const double unbiased = m > 1 ? ss / (m - 1) : 0.0;
      running_mean[ch] = float((1 - momentum) * running_mean[ch] + momentum * mean);
      running_var[ch] = float((1 - momentum) * running_var[ch] + momentum * unbiased);
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int n = 0; n < in.n; ++n) {
      for (std::size_t j = 0; j < plane; ++j) {
        const std::size_t i = (std::size_t(n) * c + ch) * plane + j;
        out[i] = float(gamma[ch] * (v[i] - mean) * inv + beta[ch]);
      }
    }
  }
  return pack(x.dtype() == DType::kF16 ? DType::kF16 : DType::kF32, x.shape(), std::move(out));
}

// Inference engines

namespace {

Batch<float> to_batch(std::span<const Tensor> xs, const Geometry& g) {
  Batch<float> b(static_cast<int>(xs.size()), g);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& x = xs[i];
    if (x.numel() != static_cast<std::size_t>(g.numel()) || x.shape().size() < 2) {
      throw ShapeError("input " + shape_to_string(x.shape()) + " does not match model geometry " + to_string(g));
    }
    const Shape& s = x.shape();
    const bool chw = s.size() == 3 && s[0] == g.c && s[1] == g.h && s[2] == g.w;
    const bool hw = s.size() == 2 && g.c == 1 && s[0] == g.h && s[1] == g.w;
    if (!chw && !hw) {
      throw ShapeError("input " + shape_to_string(s) + " does not match model geometry " + to_string(g));
    }
    const auto v = x.to_f32();
    std::copy(v.begin(), v.end(), b.sample(static_cast<int>(i)));
  }
  return b;
}

LatentOutput latent_of(const VaeGraph<float>::Posterior& p, int i, DType precision) {
  LatentOutput out;
  const auto L = p.mu.stride();
  out.mu.assign(p.mu.sample(i), p.mu.sample(i) + L);
  out.var.assign(p.var.sample(i), p.var.sample(i) + L);
  out.precision = precision;
  return out;
}

/// Integer pipeline of a quantized encoder.
class QuantEngine {
 public:
  explicit QuantEngine(const DetectorModel& m) : spec_(m.spec) {
    auto site = [&](const std::string& name) {
      auto it = m.activation_quant.find(name);
      if (it == m.activation_quant.end()) throw Error("quantized model lacks activation site '" + name + "'");
      return it->second;
    };
    input_qp_ = site("input");
    QuantParams cur = input_qp_;
    Geometry g = spec_.input;
    const auto& enc = spec_.encoder;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      Op op;
      op.spec = enc[i];
      op.in = g;
      op.out = layer_output(enc[i], g);
      op.in_qp = cur;
      const std::string prefix = "enc." + std::to_string(i);
      switch (enc[i].kind) {
        case LayerKind::kConv2D:
        case LayerKind::kDense: {
          const bool fused = i + 1 < enc.size() && enc[i + 1].kind == LayerKind::kReLU;
          op.out_qp = site(fused ? "enc." + std::to_string(i + 1) : prefix);
          load_affine(m, prefix, op);
          break;
        }
        case LayerKind::kBatchNorm2D:
          throw Error("quantized inference requires BatchNorm folded into the preceding conv");
        default: op.out_qp = cur; break;
      }
      cur = op.out_qp;
      g = op.out;
      ops_.push_back(std::move(op));
    }
    for (const char* head : {"mu", "var"}) {
      Op op;
      op.spec = LayerSpec::dense(spec_.n_latent);
      op.in = g;
      op.out = {spec_.n_latent, 1, 1};
      op.in_qp = cur;
      op.out_qp = site(head);
      load_affine(m, head, op);
      heads_.push_back(std::move(op));
    }
  }

  LatentOutput encode(std::span<const float> x) const {
    std::vector<std::int32_t> a(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = quantize_value(x[i], input_qp_) - input_qp_.zero_point;
    std::vector<std::int32_t> buf;
    for (const Op& op : ops_) {
      run(op, a, buf);
      a.swap(buf);
    }
    LatentOutput out;
    out.precision = DType::kQInt8;
    std::vector<std::int32_t> mu, h;
    run(heads_[0], a, mu);
    run(heads_[1], a, h);
    const auto L = static_cast<std::size_t>(spec_.n_latent);
    out.mu.resize(L);
    out.var.resize(L);
    for (std::size_t j = 0; j < L; ++j) {
      out.mu[j] = static_cast<float>(mu[j]) * heads_[0].out_qp.scale;
      std::int32_t hq = h[j];
      if (spec_.variance_relu) hq = std::max(hq, 0);
      out.var[j] = decode_variance(spec_.variance, static_cast<float>(hq) * heads_[1].out_qp.scale);
    }
    return out;
  }

 private:
  // Activations travel as zero-point-centered int32 codes.
  struct Op {
    LayerSpec spec;
    Geometry in, out;
    QuantParams in_qp, out_qp;
    std::vector<std::int8_t> w;
    std::vector<std::int32_t> bias;
    double multiplier = 0.0;
  };

  void load_affine(const DetectorModel& m, const std::string& prefix, Op& op) const {
    const Tensor& w = m.weight(prefix + ".w");
    const Tensor& b = m.weight(prefix + ".b");
    if (w.dtype() != DType::kQInt8) throw Error("weight '" + prefix + ".w' is not qint8");
    op.w.assign(w.qint8_data().begin(), w.qint8_data().end());
    const double acc_scale = double(op.in_qp.scale) * w.quant()->scale;
    op.bias = quantize_bias(b, acc_scale);
    op.multiplier = acc_scale / op.out_qp.scale;
  }

  static std::int32_t requant_centered(std::int32_t acc, const Op& op) {
    const double r = std::round(static_cast<double>(acc) * op.multiplier) + op.out_qp.zero_point;
    return static_cast<std::int32_t>(std::clamp(r, -128.0, 127.0)) - op.out_qp.zero_point;
  }

  void run(const Op& op, const std::vector<std::int32_t>& x, std::vector<std::int32_t>& y) const {
    const Geometry& i = op.in;
    const Geometry& o = op.out;
    y.assign(static_cast<std::size_t>(o.numel()), 0);
    switch (op.spec.kind) {
      case LayerKind::kConv2D: {
        const std::size_t plane = std::size_t(o.h) * o.w;
        for (int c = 0; c < o.c; ++c) std::fill_n(y.begin() + c * plane, plane, op.bias[c]);
        kernels::conv_forward<std::int32_t>(x.data(), i.c, i.h, i.w, op.w.data(), o.c, op.spec.kernel,
                                            op.spec.stride, op.spec.padding, o.h, o.w, y.data());
        for (auto& v : y) v = requant_centered(v, op);
        break;
      }
      case LayerKind::kDense:
        kernels::dense_forward<std::int32_t>(x.data(), static_cast<int>(i.numel()), op.w.data(), op.bias.data(),
                                             o.c, y.data());
        for (auto& v : y) v = requant_centered(v, op);
        break;
      case LayerKind::kReLU:
        for (std::size_t j = 0; j < y.size(); ++j) y[j] = std::max(x[j], 0);
        break;
      case LayerKind::kMaxPool2D: {
        const int k = op.spec.kernel;
        std::size_t j = 0;
        for (int c = 0; c < o.c; ++c) {
          for (int r = 0; r < o.h; ++r) {
            for (int q = 0; q < o.w; ++q, ++j) {
              std::int32_t best = std::numeric_limits<std::int32_t>::min();
              for (int a = 0; a < k; ++a) {
                for (int b = 0; b < k; ++b) {
                  best = std::max(best, x[(std::size_t(c) * i.h + r * k + a) * i.w + q * k + b]);
                }
              }
              y[j] = best;
            }
          }
        }
        break;
      }
      case LayerKind::kUpsample: {
        std::size_t j = 0;
        for (int c = 0; c < o.c; ++c) {
          for (int r = 0; r < o.h; ++r) {
            const int sr = static_cast<int>((2LL * r + 1) * i.h / (2LL * o.h));
            for (int q = 0; q < o.w; ++q, ++j) {
              const int sq = static_cast<int>((2LL * q + 1) * i.w / (2LL * o.w));
              y[j] = x[(std::size_t(c) * i.h + sr) * i.w + sq];
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
      case LayerKind::kReshape: y = x; break;
      case LayerKind::kBatchNorm2D: throw Error("unfolded BatchNorm in quantized encoder");
    }
  }

  ModelSpec spec_;
  QuantParams input_qp_;
  std::vector<Op> ops_;
  std::vector<Op> heads_;
};

void round_f16(const std::string&, Batch<float>& b) {
  for (auto& v : b.data) v = round_to_f16(v);
}

}  // namespace

struct Encoder::Impl {
  DType precision;
  ModelSpec spec;
  std::unique_ptr<VaeGraph<float>> graph;
  std::unique_ptr<QuantEngine> quant;

  std::vector<LatentOutput> run(std::span<const Tensor> xs) const {
    Batch<float> b = to_batch(xs, spec.input);
    std::vector<LatentOutput> out;
    out.reserve(xs.size());
    if (quant) {
      for (int i = 0; i < b.n; ++i) out.push_back(quant->encode({b.sample(i), b.stride()}));
      return out;
    }
    const auto post = precision == DType::kF16 ? graph->infer(b, round_f16) : graph->infer(b);
    for (int i = 0; i < b.n; ++i) out.push_back(latent_of(post, i, precision));
    return out;
  }
};

Encoder::Encoder(const DetectorModel& model) : impl_(std::make_unique<Impl>()) {
  impl_->precision = model.precision;
  impl_->spec = model.spec;
  if (model.precision == DType::kQInt8) {
    impl_->quant = std::make_unique<QuantEngine>(model);
  } else {
    impl_->graph = std::make_unique<VaeGraph<float>>(model.spec, model.weights);
  }
}

Encoder::~Encoder() = default;
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;

const Geometry& Encoder::input() const noexcept { return impl_->spec.input; }
DType Encoder::precision() const noexcept { return impl_->precision; }
int Encoder::n_latent() const noexcept { return impl_->spec.n_latent; }

LatentOutput Encoder::encode(const Tensor& x) const { return impl_->run({&x, 1}).front(); }

std::vector<LatentOutput> Encoder::encode_batch(std::span<const Tensor> xs) const {
  if (xs.empty()) return {};
  return impl_->run(xs);
}

LatentOutput encode(const DetectorModel& model, const Tensor& x) { return Encoder(model).encode(x); }

Tensor decode(const DetectorModel& model, std::span<const float> z) {
  if (z.size() != static_cast<std::size_t>(model.spec.n_latent)) {
    throw ShapeError("decode expects " + std::to_string(model.spec.n_latent) + " latent values, got " +
                     std::to_string(z.size()));
  }
  const VaeGraph<float> g(model.spec, model.weights);
  Batch<float> b(1, {model.spec.n_latent, 1, 1});
  std::copy(z.begin(), z.end(), b.data.begin());
  auto y = g.infer_decode(b);
  const Geometry& in = model.spec.input;
  return Tensor::f32({in.c, in.h, in.w}, std::move(y.data));
}

double gaussian_kl(std::span<const float> mu, std::span<const float> var) {
  if (mu.size() != var.size()) throw ShapeError("mu and var differ in length");
  double kl = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const double m = mu[j], v = var[j];
    if (!(v > 0.0)) throw ArgumentError("variance must be positive at dim " + std::to_string(j));
    kl += 0.5 * (m * m + v - std::log(v) - 1.0);
  }
  return kl;
}

LossTerms beta_vae_loss(std::span<const float> x, std::span<const float> x_hat, const LatentOutput& latent,
                        double beta, Reduction recon) {
  if (x.size() != x_hat.size()) throw ShapeError("reconstruction size differs from input");
  LossTerms t;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x_hat[i]) - double(x[i]);
    t.recon += d * d;
  }
  if (recon == Reduction::kMean && !x.empty()) t.recon /= double(x.size());
  t.kl = gaussian_kl(latent.mu, latent.var);
  t.total = t.recon + beta * t.kl;
  return t;
}

}  // namespace oodkit::net
