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

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oodkit/detector.hpp"
#include "oodkit/genome.hpp"
#include "oodkit/random.hpp"

namespace oodkit::ga {

struct GAConfig {
  int population = 5;
  double mutation_rate = 0.2;
  int generations = 16;
  int elitism = 1;
  int tournament_k = 2;
  std::uint64_t seed = 0;

  /// 16 generations for BVAE, 100 for optical flow.
  static GAConfig defaults(Family family);
  void validate() const;
};

struct FitnessResult {
  double fitness = 0.0;
  std::vector<std::string> factors;
  std::vector<double> aurocs;
  bool failed = false;
  std::string error;
};

using FitnessFn = std::function<FitnessResult(const Genome&)>;

/// Uniform over the bucket's allele space.
Genome random_genome(Family family, const BucketAlleles& alleles, Rng& rng);
/// Each gene is independently redrawn from its allele list with probability `rate`.
Genome mutate(const Genome& g, const BucketAlleles& alleles, double rate, Rng& rng);
/// Uniform per-gene choice between the parents.
Genome crossover(const Genome& a, const Genome& b, Rng& rng);

/// True when `a` ranks above `b`: higher fitness, then smaller area, then
/// lexicographically smaller key.
bool ranks_above(const Genome& a, double fa, const Genome& b, double fb);

struct Scored {
  Genome genome;
  double fitness = 0.0;
};

/// Tournament of `k` uniform draws (with replacement); the best-ranked wins.
Genome select(const std::vector<Scored>& population, int k, Rng& rng);

/// Memo table over genome keys. Each distinct genome is evaluated once; a
/// throwing evaluation is logged and scores 0.
class FitnessCache {
 public:
  explicit FitnessCache(FitnessFn fn);

  /// Evaluates the uncached genomes (up to `workers` concurrently) and returns
  /// one (result, cache_hit) pair per input, in input order. A genome repeated
  /// within the batch is a hit after its first occurrence.
  std::vector<std::pair<FitnessResult, bool>> evaluate(const std::vector<Genome>& genomes, int workers = 1);
  std::pair<FitnessResult, bool> evaluate(const Genome& g);

  std::size_t evaluations() const { return evaluations_; }
  const std::map<std::string, FitnessResult>& entries() const { return memo_; }
  void restore(std::map<std::string, FitnessResult> entries);

 private:
  FitnessFn fn_;
  std::map<std::string, FitnessResult> memo_;
  std::size_t evaluations_ = 0;
};

struct HistoryRow {
  int generation = 0;
  Genome genome;
  FitnessResult result;
  bool cache_hit = false;
};

struct GAHistory {
  std::vector<HistoryRow> rows;
  /// Best fitness seen up to and including each generation.
  std::vector<double> best_so_far;

  /// Columns: generation, genome key and fields, per-factor AUROCs, fitness,
  /// cache_hit. Cache-hit rows are left out unless `include_hits`.
  std::string to_csv(bool include_hits = false) const;
};

struct GAResult {
  Genome best;
  double best_fitness = 0.0;
  GAHistory history;
  bool complete = true;
};

struct RunOptions {
  int workers = 1;
  /// Written after every generation when nonempty; an existing file is resumed.
  std::string checkpoint_path;
  /// Stops after this generation (inclusive) and reports complete = false; -1 runs to the end.
  int stop_after = -1;
};

/// Generation 0 is random; every later generation keeps the elites and fills
/// up with mutate(crossover(select, select)). Deterministic given cfg.seed.
GAResult run_ga(Family family, const BucketAlleles& alleles, const GAConfig& cfg, FitnessCache& cache,
                const RunOptions& opts = {});

/// Full phase-2/3 fitness: build_detector then evaluate on the test split.
FitnessFn detector_fitness(const data::Dataset& ds, const detector::TrainSettings& settings);

}  // namespace oodkit::ga
