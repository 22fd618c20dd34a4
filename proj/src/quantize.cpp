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

#include <cmath>

#include "oodkit/network.hpp"
#include "oodkit/nn.hpp"

namespace oodkit::net {

namespace {

void require_f32(const DetectorModel& m, const char* op) {
  if (m.precision != DType::kF32) {
    throw ArgumentError(std::string(op) + " needs an f32 model, got " + to_string(m.precision));
  }
}

std::string enc_name(std::size_t i, const char* leaf) { return "enc." + std::to_string(i) + "." + leaf; }

}  // namespace

DetectorModel fold_batchnorm(const DetectorModel& model) {
  require_f32(model, "fold_batchnorm");
  const auto& enc = model.spec.encoder;
  DetectorModel out = model;
  out.spec.encoder.clear();
  out.spec.decoder = model.spec.decoder_layers();
  out.weights.clear();
  for (const auto& [name, t] : model.weights) {
    if (name.rfind("enc.", 0) != 0) out.weights.emplace(name, t);
  }
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const std::size_t j = out.spec.encoder.size();
    out.spec.encoder.push_back(enc[i]);
    const bool has_params = enc[i].kind == LayerKind::kConv2D || enc[i].kind == LayerKind::kDense;
    const bool fold = enc[i].kind == LayerKind::kConv2D && i + 1 < enc.size() &&
                      enc[i + 1].kind == LayerKind::kBatchNorm2D;
    if (enc[i].kind == LayerKind::kBatchNorm2D) {
      for (const char* leaf : {"gamma", "beta", "running_mean", "running_var"}) {
        out.weights.emplace(enc_name(j, leaf), model.weight(enc_name(i, leaf)));
      }
      continue;
    }
    if (!has_params) continue;
    const Tensor& w = model.weight(enc_name(i, "w"));
    const Tensor& b = model.weight(enc_name(i, "b"));
    if (!fold) {
      out.weights.emplace(enc_name(j, "w"), w);
      out.weights.emplace(enc_name(j, "b"), b);
      continue;
    }
    auto wv = w.to_f32();
    auto bv = b.to_f32();
    const auto gamma = model.weight(enc_name(i + 1, "gamma")).to_f32();
    const auto beta = model.weight(enc_name(i + 1, "beta")).to_f32();
    const auto mean = model.weight(enc_name(i + 1, "running_mean")).to_f32();
    const auto var = model.weight(enc_name(i + 1, "running_var")).to_f32();
    const std::size_t per_oc = wv.size() / bv.size();
    for (std::size_t o = 0; o < bv.size(); ++o) {
      const double s = gamma[o] / std::sqrt(double(var[o]) + kBatchNormEps);
      for (std::size_t k = 0; k < per_oc; ++k) wv[o * per_oc + k] = float(wv[o * per_oc + k] * s);
      bv[o] = float((bv[o] - mean[o]) * s + beta[o]);
    }
    out.weights.emplace(enc_name(j, "w"), Tensor::f32(w.shape(), std::move(wv)));
    out.weights.emplace(enc_name(j, "b"), Tensor::f32(b.shape(), std::move(bv)));
    ++i;
  }
  out.spec.validate();
  return out;
}

DetectorModel quantize_model(const DetectorModel& model, std::span<const Tensor> calibration) {
  require_f32(model, "quantize_model");
  if (calibration.size() < 8) {
    throw ArgumentError("quantize_model needs at least 8 calibration inputs, got " +
                        std::to_string(calibration.size()));
  }
  DetectorModel folded = fold_batchnorm(model);
  for (const auto& l : folded.spec.encoder) {
    if (l.kind == LayerKind::kBatchNorm2D) throw Error("BatchNorm without a preceding conv cannot be folded");
  }
  const VaeGraph<float> graph(folded.spec, folded.weights);
  std::map<std::string, RangeObserver> sites;
  auto observe = [&](const std::string& site, Batch<float>& b) { sites[site].observe(b.data); };
  for (const Tensor& x : calibration) {
    Batch<float> b(1, folded.spec.input);
    const auto v = x.to_f32();
    if (v.size() != b.data.size()) throw ShapeError("calibration input does not match model geometry");
    std::copy(v.begin(), v.end(), b.data.begin());
    graph.infer(b, observe);
  }
  DetectorModel out = folded;
  out.precision = DType::kQInt8;
  out.activation_quant.clear();
  for (const auto& [site, obs] : sites) out.activation_quant[site] = obs.params(CalibrationMode::kAsymmetric);
  for (auto& [name, t] : out.weights) {
    RangeObserver obs;
    obs.observe(t);
    t = quantize_affine(t, obs.params(CalibrationMode::kSymmetric));
  }
  return out;
}

DetectorModel cast_model_f16(const DetectorModel& model) {
  require_f32(model, "cast_model_f16");
  DetectorModel out = model;
  out.precision = DType::kF16;
  for (auto& [name, t] : out.weights) t = cast_f16(t);
  return out;
}

}  // namespace oodkit::net
