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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "oodkit/network.hpp"

namespace oodkit::net {

namespace {

/// Equal-frequency bins; equal values always share a bin.
std::vector<int> quantile_bins(const std::vector<double>& v, int n_bins) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<int> bins(n);
  std::size_t r = 0;
  while (r < n) {
    std::size_t e = r;
    while (e < n && v[idx[e]] == v[idx[r]]) ++e;
    const int b = std::min<int>(n_bins - 1, static_cast<int>(r * static_cast<std::size_t>(n_bins) / n));
    for (std::size_t k = r; k < e; ++k) bins[idx[k]] = b;
    r = e;
  }
  return bins;
}

std::vector<int> dense_labels(const std::vector<int>& raw, int& n_values) {
  std::map<int, int> ids;
  for (int v : raw) ids.emplace(v, 0);
  int next = 0;
  for (auto& [v, id] : ids) id = next++;
  n_values = next;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = ids[raw[i]];
  return out;
}

double entropy(const std::vector<int>& labels, int n_values) {
  std::vector<double> count(n_values, 0.0);
  for (int l : labels) count[l] += 1.0;
  double h = 0.0;
  const double n = double(labels.size());
  for (double c : count) {
    if (c > 0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

double mutual_information(const std::vector<int>& a, int na, const std::vector<int>& b, int nb) {
  std::vector<double> joint(std::size_t(na) * nb, 0.0), pa(na, 0.0), pb(nb, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[std::size_t(a[i]) * nb + b[i]] += 1.0;
    pa[a[i]] += 1.0;
    pb[b[i]] += 1.0;
  }
  const double n = double(a.size());
  double mi = 0.0;
  for (int x = 0; x < na; ++x) {
    for (int y = 0; y < nb; ++y) {
      const double c = joint[std::size_t(x) * nb + y];
      if (c > 0) mi += (c / n) * std::log(c * n / (pa[x] * pb[y]));
    }
  }
  return std::max(0.0, mi);
}

}  // namespace

double mig_score(std::span<const std::vector<float>> latent_means, std::span<const std::vector<int>> factor_labels,
                 int n_bins) {
  const std::size_t n = latent_means.size();
  if (n < 2 || factor_labels.size() != n) throw ArgumentError("mig_score needs matching latents and labels (n >= 2)");
  if (n_bins < 2) throw ArgumentError("mig_score needs n_bins >= 2");
  const std::size_t L = latent_means[0].size();
  const std::size_t K = factor_labels[0].size();
  if (L == 0 || K == 0) throw ArgumentError("mig_score needs at least one latent dim and one factor");
  for (std::size_t i = 0; i < n; ++i) {
    if (latent_means[i].size() != L || factor_labels[i].size() != K) {
      throw ShapeError("ragged latent or factor rows at sample " + std::to_string(i));
    }
  }
  std::vector<std::vector<int>> zbins(L);
  for (std::size_t j = 0; j < L; ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = latent_means[i][j];
    zbins[j] = quantile_bins(col, n_bins);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<int> raw(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = factor_labels[i][k];
    int nv = 0;
    const auto labels = dense_labels(raw, nv);
    if (nv < 2) throw ArgumentError("factor " + std::to_string(k) + " takes a single value");
    const double h = entropy(labels, nv);
    std::vector<double> mi(L);
    for (std::size_t j = 0; j < L; ++j) mi[j] = mutual_information(zbins[j], n_bins, labels, nv);
    std::sort(mi.begin(), mi.end(), std::greater<>());
    const double second = L > 1 ? mi[1] : 0.0;
    total += (mi[0] - second) / h;
  }
  return std::clamp(total / double(K), 0.0, 1.0);
}

double mig_score(const DetectorModel& model, std::span<const Tensor> probes,
                 std::span<const std::vector<int>> factor_labels, int n_bins) {
  const Encoder enc(model);
  std::vector<std::vector<float>> means;
  means.reserve(probes.size());
  for (const auto& lat : enc.encode_batch(probes)) means.push_back(lat.mu);
  return mig_score(means, factor_labels, n_bins);
}

}  // namespace oodkit::net
