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
#include <numeric>

#include "oodkit/network.hpp"
#include "oodkit/nn.hpp"
#include "oodkit/random.hpp"

namespace oodkit::net {

namespace {

struct AdamState {
  std::vector<float> m, v;
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

TrainResult train(const ModelSpec& spec, std::span<const Tensor> data, const TrainOptions& opts) {
  return train(init_model(spec, opts.seed), data, opts);
}

TrainResult train(const DetectorModel& init, std::span<const Tensor> data, const TrainOptions& opts) {
  if (data.empty()) throw ArgumentError("training set is empty");
  if (opts.epochs < 0 || opts.batch < 1 || !(opts.lr >= 0.0)) throw ArgumentError("invalid training options");
  const ModelSpec& spec = init.spec;
  const Geometry& g = spec.input;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].numel() != static_cast<std::size_t>(g.numel())) {
      throw ShapeError("training image " + std::to_string(i) + " has shape " + shape_to_string(data[i].shape()) +
                       ", model expects " + to_string(g));
    }
  }
  std::vector<std::vector<float>> samples;
  samples.reserve(data.size());
  for (const auto& t : data) samples.push_back(t.to_f32());

  VaeGraph<float> graph(spec, init.weights);
  auto params = graph.params();
  std::vector<AdamState> adam(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam[i].m.assign(params[i]->value.size(), 0.0f);
    adam[i].v.assign(params[i]->value.size(), 0.0f);
  }
  Rng shuffle_rng = make_rng(opts.seed, 0x73687566);
  Rng noise_rng = make_rng(opts.seed, 0x6E6F6973);

  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const int L = spec.n_latent;
  long step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(shuffle_rng, 0, std::int64_t(i) - 1))]);
    }
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch));
      const int n = static_cast<int>(end - start);
      Batch<float> x(n, g);
      for (int s = 0; s < n; ++s) {
        const auto& src = samples[order[start + s]];
        std::copy(src.begin(), src.end(), x.sample(s));
      }
      std::vector<float> noise(static_cast<std::size_t>(n) * L);
      for (auto& e : noise) e = static_cast<float>(standard_normal(noise_rng));
      graph.zero_grad();
      const LossTerms t = graph.loss(x, noise, spec.beta, opts.recon);
      if (!std::isfinite(t.total)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(start) + " (recon " + std::to_string(t.recon) + ", kl " +
                    std::to_string(t.kl) + ")");
      }
      graph.backward();
      ++step;
      const double c1 = 1.0 - std::pow(kAdamBeta1, double(step));
      const double c2 = 1.0 - std::pow(kAdamBeta2, double(step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        Param<float>& prm = *params[p];
        if (!prm.trainable) continue;
        for (std::size_t j = 0; j < prm.value.size(); ++j) {
          const double gr = prm.grad[j];
          if (opts.optimizer == Optimizer::kSgd) {
            prm.value[j] = static_cast<float>(prm.value[j] - opts.lr * gr);
            continue;
          }
          float& m = adam[p].m[j];
          float& v = adam[p].v[j];
          m = static_cast<float>(kAdamBeta1 * m + (1.0 - kAdamBeta1) * gr);
          v = static_cast<float>(kAdamBeta2 * v + (1.0 - kAdamBeta2) * gr * gr);
          const double mh = m / c1, vh = v / c2;
          prm.value[j] = static_cast<float>(prm.value[j] - opts.lr * mh / (std::sqrt(vh) + kAdamEps));
        }
      }
      epoch_loss += t.total * n;
      seen += static_cast<std::size_t>(n);
    }
    result.loss_history.push_back(epoch_loss / double(seen));
  }
  result.model = init;
  result.model.precision = DType::kF32;
  result.model.activation_quant.clear();
  result.model.weights = graph.export_weights();
  return result;
}

}  // namespace oodkit::net
