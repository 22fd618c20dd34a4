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

#include "oodkit/oodcore.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "oodkit/error.hpp"

namespace oodkit::ood {

const char* to_string(MartingaleKind k) { return k == MartingaleKind::kMixture ? "mixture" : "power"; }
const char* to_string(ScoreCombine c) { return c == ScoreCombine::kMax ? "max" : "mean"; }

MartingaleKind martingale_kind_from_string(const std::string& s) {
  if (s == "mixture") return MartingaleKind::kMixture;
  if (s == "power") return MartingaleKind::kPower;
  throw ArgumentError("unknown martingale kind '" + s + "'");
}

ScoreCombine score_combine_from_string(const std::string& s) {
  if (s == "max") return ScoreCombine::kMax;
  if (s == "mean") return ScoreCombine::kMean;
  throw ArgumentError("unknown score combination '" + s + "'");
}

void PostprocessConfig::validate() const {
  if (window < 1) throw ArgumentError("martingale window must be >= 1");
  if (!(decay >= 0.0) || !std::isfinite(decay)) throw ArgumentError("decay must be finite and >= 0");
  if (epsilon_grid < 3 || epsilon_grid % 2 == 0) throw ArgumentError("epsilon grid must be odd and >= 3");
  if (!(power_epsilon > 0.0 && power_epsilon < 1.0)) throw ArgumentError("power epsilon must lie in (0, 1)");
  for (int d : kl_dims) {
    if (d < 0) throw ArgumentError("negative latent dim in kl_dims");
  }
}

void CalibrationSet::normalize() {
  if (scores.empty()) throw ArgumentError("calibration set is empty");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ArgumentError("calibration scores must be finite");
  }
  std::sort(scores.begin(), scores.end());
}

double kl_nonconformity(const net::LatentOutput& latent, std::span<const int> dims) {
  if (latent.mu.size() != latent.var.size()) throw ShapeError("mu and var differ in length");
  auto term = [&](std::size_t j) {
    const double m = latent.mu[j], v = latent.var[j];
    if (!(v > 0.0)) throw ArgumentError("variance must be positive at dim " + std::to_string(j));
    return 0.5 * (m * m + v - std::log(v) - 1.0);
  };
  double s = 0.0;
  if (dims.empty()) {
    if (latent.mu.empty()) throw ArgumentError("empty latent");
    for (std::size_t j = 0; j < latent.mu.size(); ++j) s += term(j);
  } else {
    for (int d : dims) {
      if (d < 0 || static_cast<std::size_t>(d) >= latent.mu.size()) {
        throw ArgumentError("latent dim " + std::to_string(d) + " out of range");
      }
      s += term(static_cast<std::size_t>(d));
    }
  }
  return std::max(0.0, s);
}

double icp_pvalue(double score, const CalibrationSet& calib) {
  if (calib.scores.empty()) throw ArgumentError("calibration set is empty");
  if (std::isnan(score)) throw ArgumentError("nonconformity score is NaN");
  const auto it = std::lower_bound(calib.scores.begin(), calib.scores.end(), score);
  const auto ge = static_cast<double>(calib.scores.end() - it);
  return (ge + 1.0) / (static_cast<double>(calib.scores.size()) + 1.0);
}

namespace {

double sum_log_p(std::span<const double> p_window) {
  if (p_window.empty()) throw ArgumentError("martingale window is empty");
  double s = 0.0;
  for (double p : p_window) {
    if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("p-value outside (0, 1]: " + std::to_string(p));
    s += std::log(p);
  }
  return s;
}

}  // namespace

double log_mixture_martingale(std::span<const double> p_window, int grid) {
  if (grid < 3 || grid % 2 == 0) throw ArgumentError("epsilon grid must be odd and >= 3");
  const double s = sum_log_p(p_window);
  const double n = static_cast<double>(p_window.size());
  const double h = 1.0 / (grid - 1);
  // The eps = 0 node contributes 0 for any nonempty window.
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(grid));
  double peak = -std::numeric_limits<double>::infinity();
  for (int k = 1; k < grid; ++k) {
    const double eps = k * h;
    const double w = (k == grid - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    const double t = std::log(w * h / 3.0) + n * std::log(eps) + (eps - 1.0) * s;
    terms.push_back(t);
    peak = std::max(peak, t);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - peak);
  return peak + std::log(acc);
}

double mixture_martingale(std::span<const double> p_window, int grid) {
  return std::exp(log_mixture_martingale(p_window, grid));
}

double log_power_martingale(std::span<const double> p_window, double epsilon) {
  const double s = sum_log_p(p_window);
  return static_cast<double>(p_window.size()) * std::log(epsilon) + (epsilon - 1.0) * s;
}

double cusum_update_log(double s, double log_m, double decay) { return std::max(0.0, s + log_m - decay); }

double cusum_update(double s, double m, double decay) {
  if (!(m > 0.0)) throw ArgumentError("martingale value must be positive");
  return cusum_update_log(s, std::log(m), decay);
}

double score_pvalue(DetectorState& state, double p, const PostprocessConfig& cfg) {
  if (!(p > 0.0 && p <= 1.0)) throw ArgumentError("p-value outside (0, 1]: " + std::to_string(p));
  state.p_window.push_back(p);
  while (state.p_window.size() > static_cast<std::size_t>(cfg.window)) state.p_window.pop_front();
  const std::vector<double> win(state.p_window.begin(), state.p_window.end());
  const double log_m = cfg.martingale == MartingaleKind::kMixture ? log_mixture_martingale(win, cfg.epsilon_grid)
                                                                  : log_power_martingale(win, cfg.power_epsilon);
  state.cusum = cusum_update_log(state.cusum, log_m, cfg.decay);
  ++state.frames_seen;
  return state.cusum;
}

double score_frame(DetectorState& state, const net::LatentOutput& latent, const CalibrationSet& calib,
                   const PostprocessConfig& cfg) {
  if (calib.precision != latent.precision) {
    throw Error(std::string("calibration set was built under ") + to_string(calib.precision) +
                " but the latent comes from a " + to_string(latent.precision) + " model");
  }
  return score_pvalue(state, icp_pvalue(kl_nonconformity(latent, cfg.kl_dims), calib), cfg);
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw ArgumentError("auroc needs nonempty ID and OOD scores");
  std::vector<std::pair<double, bool>> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.emplace_back(s, false);
  for (double s : ood_scores) all.emplace_back(s, true);
  for (const auto& [s, ood] : all) {
    if (std::isnan(s)) throw ArgumentError("auroc score is NaN");
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the Mann-Whitney U statistic, exact in integers.
  std::uint64_t twice_u = 0, id_below = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::uint64_t id_here = 0, ood_here = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second ? ood_here : id_here) += 1;
      ++j;
    }
    twice_u += 2 * ood_here * id_below + ood_here * id_here;
    id_below += id_here;
    i = j;
  }
  const double pairs = static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size());
  return static_cast<double>(twice_u) / (2.0 * pairs);
}

double harmonic_fitness(std::span<const double> aurocs) {
  if (aurocs.empty()) throw ArgumentError("harmonic fitness needs at least one AUROC");
  double inv = 0.0;
  for (double a : aurocs) {
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError("AUROC outside [0, 1]: " + std::to_string(a));
    if (a == 0.0) return 0.0;
    inv += 1.0 / a;
  }
  return static_cast<double>(aurocs.size()) / inv;
}

CalibrationSet build_calibration(const net::Encoder& encoder, std::span<const Tensor> images,
                                 const PostprocessConfig& cfg, std::uint32_t model_checksum) {
  cfg.validate();
  if (images.empty()) throw ArgumentError("calibration needs at least one image");
  CalibrationSet out;
  out.precision = encoder.precision();
  out.model_checksum = model_checksum;
  out.scores.reserve(images.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    const auto part = images.subspan(i, std::min(kChunk, images.size() - i));
    for (const auto& lat : encoder.encode_batch(part)) out.scores.push_back(kl_nonconformity(lat, cfg.kl_dims));
  }
  out.normalize();
  return out;
}

CalibrationSet build_calibration(const net::DetectorModel& model, std::span<const Tensor> images,
                                 const PostprocessConfig& cfg) {
  return build_calibration(net::Encoder(model), images, cfg, net::model_checksum(model));
}

std::vector<double> kl_dim_gaps(const net::Encoder& encoder, std::span<const Tensor> id,
                                std::span<const Tensor> perturbed) {
  if (id.empty() || perturbed.empty()) throw ArgumentError("kl_dim_gaps needs ID and perturbed inputs");
  const auto n = static_cast<std::size_t>(encoder.n_latent());
  auto mean_terms = [&](std::span<const Tensor> xs) {
    std::vector<double> acc(n, 0.0);
    for (const auto& lat : encoder.encode_batch(xs))
      for (std::size_t j = 0; j < n; ++j) {
        const int d = static_cast<int>(j);
        acc[j] += kl_nonconformity(lat, std::span<const int>(&d, 1));
      }
    for (auto& v : acc) v /= static_cast<double>(xs.size());
    return acc;
  };
  const auto a = mean_terms(id), b = mean_terms(perturbed);
  std::vector<double> gap(n);
  for (std::size_t j = 0; j < n; ++j) gap[j] = b[j] - a[j];
  return gap;
}

std::vector<int> top_k_dims(std::span<const double> gaps, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > gaps.size()) throw ArgumentError("top-k must lie in [1, n_latent]");
  std::vector<int> idx(gaps.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return gaps[a] > gaps[b]; });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string calibration_to_csv(const CalibrationSet& calib) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%08" PRIx32, calib.model_checksum);
  os << "# oodkit calibration v1\n# precision=" << to_string(calib.precision) << "\n# model_checksum=" << buf
     << "\nscore\n";
  for (double s : calib.scores) {
    std::snprintf(buf, sizeof buf, "%.17g", s);
    os << buf << '\n';
  }
  return os.str();
}

CalibrationSet calibration_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  CalibrationSet out;
  bool have_precision = false, have_column = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      try {
        if (key == "precision") {
          out.precision = dtype_from_string(value);
          have_precision = true;
        } else if (key == "model_checksum") {
          out.model_checksum = static_cast<std::uint32_t>(std::stoul(value, nullptr, 16));
        }
      } catch (const std::exception&) {
        throw FormatError(FormatErrc::kBadHeader, "bad calibration header line " + std::to_string(lineno));
      }
      continue;
    }
    if (!have_column) {
      if (line != "score") throw FormatError(FormatErrc::kBadHeader, "calibration CSV lacks the 'score' column");
      have_column = true;
      continue;
    }
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(line, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != line.size()) {
      throw FormatError(FormatErrc::kBadHeader, "unparsable score on line " + std::to_string(lineno));
    }
    if (!std::isfinite(v)) throw FormatError(FormatErrc::kNonFinite, "non-finite score on line " + std::to_string(lineno));
    out.scores.push_back(v);
  }
  if (!have_precision || !have_column) throw FormatError(FormatErrc::kBadHeader, "calibration CSV header incomplete");
  if (out.scores.empty()) throw FormatError(FormatErrc::kTruncated, "calibration CSV has no scores");
  out.normalize();
  return out;
}

void write_calibration(const CalibrationSet& calib, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << calibration_to_csv(calib);
  if (!f) throw Error("failed writing '" + path + "'");
}

CalibrationSet read_calibration(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open calibration '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return calibration_from_csv(ss.str());
}

}  // namespace oodkit::ood
