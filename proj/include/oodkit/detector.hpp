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

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "oodkit/dataset.hpp"
#include "oodkit/genome.hpp"
#include "oodkit/imaging.hpp"
#include "oodkit/network.hpp"
#include "oodkit/oodcore.hpp"
#include "oodkit/optflow.hpp"

namespace oodkit::detector {

struct OptflowSettings {
  optflow::FarnebackParams farneback;
  /// Multiplier applied to flow vectors before they enter the encoders.
  double flow_scale = 0.25;
  /// Rows removed from the top of the resized frame (0 keeps the full extent).
  int crop_top = 0;
};

/// Everything needed to run one detector: preprocessing genome, encoder
/// models (one for BVAE; u and v encoders for optical flow), one calibration
/// set per model, and the post-processing configuration.
struct DetectorBundle {
  ga::Genome genome;
  std::vector<net::DetectorModel> models;
  std::vector<ood::CalibrationSet> calibrations;
  ood::PostprocessConfig post;
  OptflowSettings flow;

  ga::Family family() const { return genome.family; }
  DType precision() const;
  void validate() const;
};

/// CHW float tensor with values in [0, 1].
Tensor image_to_tensor(const imaging::Image& img);

/// Color conversion and resize (BVAE) or gray, resize, sharpen and crop
/// (optical flow).
imaging::Image preprocess_frame(const imaging::Image& frame, const ga::Genome& genome, const OptflowSettings& flow);

/// Rolling optical-flow history for one stream.
class FlowHistory {
 public:
  FlowHistory(int depth, const OptflowSettings& settings);

  /// Feeds the next preprocessed frame; returns the (u, v) stacks once
  /// `depth` flows are available.
  std::optional<std::pair<Tensor, Tensor>> push(const imaging::Image& frame);
  void reset();

 private:
  int depth_;
  OptflowSettings settings_;
  std::optional<optflow::FloatImage> prev_;
  std::deque<optflow::FlowField> flows_;
};

/// Stage 1: frame -> one input tensor per encoder (nullopt during flow warm-up).
class Preprocessor {
 public:
  explicit Preprocessor(const DetectorBundle& bundle);
  std::optional<std::vector<Tensor>> operator()(const imaging::Image& frame);
  void reset();

 private:
  ga::Genome genome_;
  OptflowSettings flow_;
  std::optional<FlowHistory> history_;
};

/// Stage 3: latents -> frame score, one DetectorState per encoder.
class Postprocessor {
 public:
  explicit Postprocessor(const DetectorBundle& bundle);
  double operator()(const std::vector<net::LatentOutput>& latents);
  /// Same, from precomputed p-values.
  double score_pvalues(const std::vector<double>& pvalues);
  void reset();

 private:
  std::vector<ood::CalibrationSet> calib_;
  ood::PostprocessConfig post_;
  std::vector<ood::DetectorState> states_;
};

/// All stages chained in one object.
class StreamDetector {
 public:
  explicit StreamDetector(const DetectorBundle& bundle);
  std::optional<double> process(const imaging::Image& frame);
  void reset();
  const std::vector<net::Encoder>& encoders() const { return encoders_; }

 private:
  Preprocessor pre_;
  std::vector<net::Encoder> encoders_;
  Postprocessor post_;
};

/// Network inputs for a set of sequences, one vector per encoder.
std::vector<std::vector<Tensor>> prepare_inputs(const ga::Genome& genome, const OptflowSettings& flow,
                                                const std::vector<std::vector<const data::Sample*>>& sequences);

struct TrainSettings {
  net::TrainOptions train;
  int n_latent = 8;
  double beta = 2.32;
  net::VarianceParam variance = net::VarianceParam::kVar;
  int of_n_latent = 12;
  double of_beta = 1.0;
  ood::PostprocessConfig post;
  OptflowSettings flow;
  /// When positive, kl_dims becomes the k latent dims whose KL term rises most
  /// from the calib split to the same frames with every factor set to the
  /// middle of its OOD range. Gaps are summed over encoders.
  int kl_top_k = 0;
};

/// Phase 2 for one genome: preprocess the train split, train the encoder(s),
/// build calibration sets from the calib split. Result is f32.
DetectorBundle build_detector(const ga::Genome& genome, const data::Dataset& ds, const TrainSettings& settings);

/// Converts an f32 bundle to `precision` (quantization observes the calib
/// split) and regenerates every calibration set under the new precision.
DetectorBundle convert_bundle(const DetectorBundle& f32, DType precision, const data::Dataset& ds);

/// Per-frame p-values of the test split, one vector per encoder.
struct EpisodeTrace {
  bool ood = false;
  std::vector<std::vector<double>> pvalues;
};

struct PartitionTrace {
  std::string name;
  std::vector<EpisodeTrace> episodes;
};

std::vector<PartitionTrace> trace_pvalues(const DetectorBundle& bundle, const data::Dataset& ds);

struct Evaluation {
  std::vector<std::string> partitions;
  std::vector<double> aurocs;
  double fitness = 0.0;
};

/// Runs post-processing over the traces with `post` (state reset per episode).
Evaluation score_traces(const std::vector<PartitionTrace>& traces, const ood::PostprocessConfig& post);
Evaluation evaluate(const DetectorBundle& bundle, const data::Dataset& ds);

struct DeltaSweep {
  std::vector<double> deltas;
  std::vector<Evaluation> results;
  double best_delta = 0.0;
  double best_fitness = 0.0;
};

/// Fitness per decay value; argmax with ties going to the smaller decay.
DeltaSweep sweep_delta(const std::vector<PartitionTrace>& traces, const ood::PostprocessConfig& base,
                       const std::vector<double>& grid);

std::string post_config_to_json(const ood::PostprocessConfig& post);
ood::PostprocessConfig post_config_from_json(const std::string& text);

/// Directory layout: bundle.json, model_<i>.oodm, calib_<i>.csv.
void save_bundle(const DetectorBundle& bundle, const std::string& dir);
DetectorBundle load_bundle(const std::string& dir);

}  // namespace oodkit::detector
