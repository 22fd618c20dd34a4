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
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodkit/network.hpp"

namespace oodkit::ood {

enum class MartingaleKind { kMixture, kPower };
/// How the per-encoder scores of a multi-encoder detector are combined.
enum class ScoreCombine { kMax, kMean };

const char* to_string(MartingaleKind k);
const char* to_string(ScoreCombine c);
MartingaleKind martingale_kind_from_string(const std::string& s);
ScoreCombine score_combine_from_string(const std::string& s);

struct PostprocessConfig {
  int window = 20;
  double decay = 0.1;
  /// Simpson grid over epsilon in [0, 1]; odd and >= 3.
  int epsilon_grid = 101;
  /// Latent dims entering the nonconformity score; empty means all.
  std::vector<int> kl_dims;
  MartingaleKind martingale = MartingaleKind::kMixture;
  /// Betting exponent of the power martingale.
  double power_epsilon = 0.5;
  ScoreCombine combine = ScoreCombine::kMax;

  void validate() const;
};

/// Sorted nonconformity scores of ID calibration images.
struct CalibrationSet {
  std::vector<double> scores;
  DType precision = DType::kF32;
  std::uint32_t model_checksum = 0;

  /// Sorts and checks the invariants (nonempty, finite).
  void normalize();
};

struct DetectorState {
  std::deque<double> p_window;
  double cusum = 0.0;
  std::uint64_t frames_seen = 0;
};

/// 1/2 * sum over dims of (mu^2 + var - ln var - 1).
double kl_nonconformity(const net::LatentOutput& latent, std::span<const int> dims = {});

/// (#{c >= score} + 1) / (N + 1).
double icp_pvalue(double score, const CalibrationSet& calib);

/// Natural log of the mixture martingale over the window.
double log_mixture_martingale(std::span<const double> p_window, int grid = 101);
/// M = integral over [0,1] of prod(eps * p^(eps - 1)) d eps (Simpson rule).
double mixture_martingale(std::span<const double> p_window, int grid = 101);
double log_power_martingale(std::span<const double> p_window, double epsilon);

/// max(0, S + ln M - decay), taking ln M directly.
double cusum_update_log(double s, double log_m, double decay);
double cusum_update(double s, double m, double decay);

/// Pushes the frame's p-value, updates the CUSUM state and returns it as the
/// frame score. Throws when the calibration precision differs from the
/// latent's.
double score_frame(DetectorState& state, const net::LatentOutput& latent, const CalibrationSet& calib,
                   const PostprocessConfig& cfg);
/// Same, from a precomputed p-value.
double score_pvalue(DetectorState& state, double p, const PostprocessConfig& cfg);

/// Mann-Whitney AUROC, P(ood > id) + P(ood == id) / 2.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// n / sum(1 / a_i); 0 when any a_i is 0.
double harmonic_fitness(std::span<const double> aurocs);

CalibrationSet build_calibration(const net::Encoder& encoder, std::span<const Tensor> images,
                                 const PostprocessConfig& cfg, std::uint32_t model_checksum = 0);
CalibrationSet build_calibration(const net::DetectorModel& model, std::span<const Tensor> images,
                                 const PostprocessConfig& cfg);

/// Per latent dim: mean KL term over `perturbed` minus mean over `id`.
std::vector<double> kl_dim_gaps(const net::Encoder& encoder, std::span<const Tensor> id,
                                std::span<const Tensor> perturbed);

/// Indices of the k largest gaps in ascending order; ties go to the lower index.
std::vector<int> top_k_dims(std::span<const double> gaps, int k);

std::string calibration_to_csv(const CalibrationSet& calib);
CalibrationSet calibration_from_csv(const std::string& text);
void write_calibration(const CalibrationSet& calib, const std::string& path);
CalibrationSet read_calibration(const std::string& path);

}  // namespace oodkit::ood
