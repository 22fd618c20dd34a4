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

#include <map>
#include <string>
#include <vector>

#include "oodkit/dataset.hpp"
#include "oodkit/detector.hpp"
#include "oodkit/gasearch.hpp"
#include "oodkit/pipeline.hpp"

namespace oodkit::exp {

struct Requirements {
  double min_auroc = 0.85;
  double max_response_ms = 50.0;
  double min_throughput_fps = 20.0;

  bool operator==(const Requirements&) const = default;
};

/// One experiment: dataset, model and training overrides, GA, post-processing
/// with its decay grid, precisions, executors and bench parameters.
struct ExperimentConfig {
  ga::Family family = ga::Family::kBvae;
  Requirements requirements;
  data::DatasetConfig dataset;
  detector::TrainSettings train;
  /// Genome trained by the `train` step when no GA winner is given.
  std::string genome;
  ga::GAConfig ga;
  int width_step = 8;
  std::vector<double> delta_grid{0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0};
  pipe::BenchConfig bench;

  void validate() const;
};

ExperimentConfig default_config(ga::Family family);
/// Missing keys take the family defaults.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

struct EvalRecord {
  std::string precision;
  std::string genome;
  double fitness = 0.0;
  std::vector<std::string> partitions;
  std::vector<double> aurocs;
};

std::string eval_to_json(const EvalRecord& e);
EvalRecord eval_from_json(const std::string& text);

/// Inverse of BenchReport::to_csv (failed cells keep their status text).
pipe::BenchReport bench_from_csv(const std::string& text);

struct Verdict {
  Requirements requirements;
  std::map<std::string, double> fitness;
  std::map<std::string, bool> functional;
  /// "genome/precision/executor" cells meeting both timing requirements.
  std::vector<std::string> timing_cells;
  /// Cells whose precision also passes the functional requirement.
  std::vector<std::string> passing_cells;
  bool functional_pass = false;
  bool nonfunctional_pass = false;
  std::vector<std::string> gaps;
  /// "pass", "fail" or "incomplete".
  std::string verdict;

  /// 0 for pass, 1 otherwise.
  int exit_code() const { return verdict == "pass" ? 0 : 1; }
  bool operator==(const Verdict&) const = default;
};

/// Functional: fitness >= min_auroc per precision. Nonfunctional: a bench
/// cell with mean response <= max_response_ms that sustains some measured
/// rate >= min_throughput_fps. Pass needs one cell meeting both; any missing
/// evaluation or cell makes the verdict incomplete.
Verdict judge(const Requirements& req, const std::vector<EvalRecord>& evals, const pipe::BenchReport& bench,
              const std::vector<std::string>& precisions, const std::vector<std::string>& executors);

std::string verdict_to_json(const Verdict& v);
Verdict verdict_from_json(const std::string& text);

}  // namespace oodkit::exp
