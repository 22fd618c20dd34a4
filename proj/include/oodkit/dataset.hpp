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
#include <string>
#include <vector>

#include "oodkit/imaging.hpp"

namespace oodkit::data {

enum class Split { kTrain, kCalib, kTest };
enum class Factor { kRain, kSnow, kBrightness };

const char* to_string(Split s);
const char* to_string(Factor f);
Split split_from_string(const std::string& s);
Factor factor_from_string(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool overlaps(const Range& o) const { return lo <= o.hi && o.lo <= hi; }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// ID and OOD ranges of one generative factor. With `symmetric` the OOD
/// range is a magnitude and a random sign is applied (brightness darker or
/// brighter than the ID band).
struct FactorSpec {
  Factor factor = Factor::kRain;
  Range id;
  Range ood;
  bool symmetric = false;

  bool in_ood(double v) const { return symmetric ? ood.contains(std::abs(v)) : ood.contains(v); }
};

struct DatasetConfig {
  imaging::SceneParams scene;
  /// Runs per scene; the last run is the test run.
  int runs = 4;
  int frames_per_run = 72;
  /// Train/calib runs are cut into chunks of this many consecutive frames;
  /// every third chunk goes to calibration.
  int chunk_len = 12;
  /// Test episodes: consecutive frames with constant factor values.
  int episode_len = 24;
  /// Per scene and partition; must be even (half ID, half OOD).
  int episodes_per_scene = 2;
  /// OOD partitions, one per listed factor. Factors not listed stay at 0.
  std::vector<FactorSpec> factors;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Brightness (ID [-0.5, 0.5], OOD magnitude [0.6, 0.9]) and rain (ID
/// [0, 0.003], OOD [0.004, 0.01]).
DatasetConfig bvae_dataset_config();
/// Rain and snow at 0.003 in OOD episodes, clean ID frames.
DatasetConfig optflow_dataset_config();

struct Sample {
  imaging::Image image;
  int scene = 0;
  int run = 0;
  std::int64_t frame_index = 0;
  Split split = Split::kTrain;
  imaging::AugmentationParams factors;
  bool ood = false;
  /// Test partition name (factor) or empty for train/calib.
  std::string partition;
  /// Frames sharing a sequence id are consecutive in time.
  int sequence = 0;
  int position = 0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> samples;

  std::vector<const Sample*> select(Split split, const std::string& partition = "") const;
  /// Sequences of the split (optionally one partition) in frame order.
  std::vector<std::vector<const Sample*>> sequences(Split split, const std::string& partition = "") const;
  std::vector<std::string> partitions() const;
};

Dataset generate_dataset(const DatasetConfig& cfg);

/// Writes images/<split>/<sequence>_<position>.ppm, manifest.jsonl and
/// config.json below `dir`.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

std::string config_to_json(const DatasetConfig& cfg);
DatasetConfig config_from_json(const std::string& text);

}  // namespace oodkit::data
