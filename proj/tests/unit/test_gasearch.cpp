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

#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "oodkit/error.hpp"
#include "oodkit/gasearch.hpp"

using namespace oodkit;
using namespace oodkit::ga;

namespace {

BucketAlleles twelve() {
  BucketAlleles a;
  a.sizes = {{8, 8}, {16, 16}};
  a.interpolations = {imaging::Interpolation::kNearest, imaging::Interpolation::kBilinear,
                      imaging::Interpolation::kBicubic};
  a.colors = {ColorSpace::kRgb, ColorSpace::kGray};
  a.flow_depths = {0};
  return a;
}

// Per-gene additive effects plus a small interaction term, drawn from `seed`.
std::map<std::string, double> landscape(std::uint64_t seed) {
  std::map<std::string, double> f;
  Rng rng = make_rng(seed, 99);
  double size_fx[2], interp_fx[3], color_fx[2];
  for (auto& x : size_fx) x = uniform01(rng);
  for (auto& x : interp_fx) x = uniform01(rng);
  for (auto& x : color_fx) x = uniform01(rng);
  for (const auto& g : enumerate(Family::kBvae, twelve())) {
    f[g.key()] = 0.5 + 0.1 * (size_fx[g.width == 16] + interp_fx[static_cast<int>(g.interpolation)] +
                              color_fx[g.color == ColorSpace::kGray]) +
                 0.02 * uniform01(rng);
  }
  return f;
}

FitnessFn plug_in(const std::map<std::string, double>& f, int* calls = nullptr) {
  return [f, calls](const Genome& g) {
    if (calls) ++*calls;
    FitnessResult r;
    r.fitness = f.at(g.key());
    r.factors = {"rain"};
    r.aurocs = {r.fitness};
    return r;
  };
}

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("random genomes stay inside their bucket") {
  Rng rng = make_rng(1);
  const auto small = default_alleles(Family::kBvae, Bucket::kSmall);
  const auto large = default_alleles(Family::kOptflow, Bucket::kLarge);
  for (int i = 0; i < 200; ++i) {
    const auto g = random_genome(Family::kBvae, small, rng);
    CHECK(g.width >= 3);
    CHECK(g.width <= 76);
    const auto h = random_genome(Family::kOptflow, large, rng);
    CHECK(((h.height == 120 && h.width == 160) || (h.height == 150 && h.width == 200)));
    CHECK(large.contains(h));
  }
  Rng a = make_rng(5), b = make_rng(5);
  CHECK(random_genome(Family::kBvae, small, a) == random_genome(Family::kBvae, small, b));
}

TEST_CASE("mutation and crossover edge cases") {
  Rng rng = make_rng(2);
  const auto al = twelve();
  const auto g = random_genome(Family::kBvae, al, rng);
  for (int i = 0; i < 50; ++i) {
    CHECK(mutate(g, al, 0.0, rng) == g);
    const auto m = mutate(g, al, 1.0, rng);
    CHECK(m.flow_depth == 0);
    CHECK(al.contains(m));
    CHECK(crossover(g, g, rng) == g);
  }
  auto outside = g;
  outside.width = outside.height = 12;
  CHECK_THROWS_AS(mutate(outside, al, 0.2, rng), ArgumentError);
  CHECK_THROWS_AS(crossover(g, Genome::parse("optflow:24x32:area:d2"), rng), ArgumentError);
  // Uniform crossover draws every gene from one of the parents.
  const auto a = Genome::parse("bvae:8x8:nearest:rgb");
  const auto b = Genome::parse("bvae:16x16:bicubic:gray");
  std::set<std::string> seen;
  for (int i = 0; i < 200; ++i) seen.insert(crossover(a, b, rng).key());
  CHECK(seen.size() == 8);
}

TEST_CASE("tournament ties go to the smaller area then the smaller key") {
  Rng rng = make_rng(3);
  const auto big = Genome::parse("bvae:16x16:nearest:gray");
  const auto small_rgb = Genome::parse("bvae:8x8:nearest:rgb");
  const auto small_gray = Genome::parse("bvae:8x8:nearest:gray");
  CHECK(ranks_above(small_rgb, 0.7, big, 0.7));
  CHECK(ranks_above(big, 0.8, small_rgb, 0.7));
  CHECK(ranks_above(small_gray, 0.7, small_rgb, 0.7));
  const std::vector<Scored> pop{{big, 0.7}, {small_rgb, 0.7}, {small_gray, 0.7}};
  std::map<std::string, int> wins;
  for (int i = 0; i < 3000; ++i) wins[select(pop, 2, rng).key()]++;
  // P(win) under k = 2 with a strict total order: 5/9, 3/9, 1/9.
  CHECK(wins[small_gray.key()] == doctest::Approx(3000 * 5.0 / 9).epsilon(0.08));
  CHECK(wins[small_rgb.key()] == doctest::Approx(3000 * 3.0 / 9).epsilon(0.1));
  CHECK(wins[big.key()] == doctest::Approx(3000 * 1.0 / 9).epsilon(0.2));
}

TEST_CASE("memoization evaluates each genome once") {
  int calls = 0;
  FitnessCache cache(plug_in(landscape(1), &calls));
  const auto g = Genome::parse("bvae:8x8:nearest:rgb");
  const auto first = cache.evaluate(g);
  const auto second = cache.evaluate(g);
  CHECK_FALSE(first.second);
  CHECK(second.second);
  CHECK(first.first.fitness == second.first.fitness);
  const auto batch = cache.evaluate({g, Genome::parse("bvae:16x16:nearest:rgb"), Genome::parse("bvae:16x16:nearest:rgb")}, 2);
  CHECK(batch[0].second);
  CHECK_FALSE(batch[1].second);
  CHECK(batch[2].second);
  CHECK(calls == 2);
  CHECK(cache.evaluations() == 2);
}

TEST_CASE("failed evaluations score zero") {
  FitnessCache cache([](const Genome&) -> FitnessResult { throw Error("diverged"); });
  const auto r = cache.evaluate(Genome::parse("bvae:8x8:nearest:rgb"));
  CHECK(r.first.failed);
  CHECK(r.first.fitness == 0.0);
  CHECK(r.first.error == "diverged");
}

TEST_CASE("GA finds the enumerated optimum on a twelve-genome space") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto f = landscape(seed);
    double opt = 0;
    for (const auto& [k, v] : f) opt = std::max(opt, v);
    GAConfig cfg;
    cfg.seed = seed;
    FitnessCache cache(plug_in(f));
    const auto res = run_ga(Family::kBvae, twelve(), cfg, cache);
    hits += res.best_fitness == opt;
    CHECK(cache.evaluations() <= 12);
    REQUIRE(res.history.best_so_far.size() == 17);
    for (std::size_t i = 1; i < res.history.best_so_far.size(); ++i)
      CHECK(res.history.best_so_far[i] >= res.history.best_so_far[i - 1]);
    CHECK(res.history.best_so_far.back() == res.best_fitness);
  }
  CHECK(hits >= 95);
}

TEST_CASE("GA bookkeeping") {
  const auto f = landscape(7);
  GAConfig cfg;
  cfg.seed = 4;
  cfg.generations = 0;
  FitnessCache c0(plug_in(f));
  const auto r0 = run_ga(Family::kBvae, twelve(), cfg, c0);
  double best0 = 0;
  for (const auto& r : r0.history.rows) best0 = std::max(best0, r.result.fitness);
  CHECK(r0.best_fitness == best0);
  CHECK(r0.history.rows.size() == 5);

  cfg.generations = 6;
  FitnessCache c1(plug_in(f)), c2(plug_in(f));
  const auto a = run_ga(Family::kBvae, twelve(), cfg, c1);
  const auto b = run_ga(Family::kBvae, twelve(), cfg, c2, {2, "", -1});
  CHECK(a.history.to_csv(true) == b.history.to_csv(true));
  std::size_t hits = 0;
  for (const auto& r : a.history.rows) hits += r.cache_hit;
  CHECK(line_count(a.history.to_csv()) - 1 == 5 * 7 - hits);
  CHECK(hits + c1.evaluations() == 5 * 7);
}

TEST_CASE("interrupted run resumes to the identical history") {
  const auto f = landscape(9);
  GAConfig cfg;
  cfg.seed = 21;
  cfg.generations = 8;
  FitnessCache full_cache(plug_in(f));
  const auto full = run_ga(Family::kBvae, twelve(), cfg, full_cache);

  const auto path = (std::filesystem::temp_directory_path() / "oodkit_ga_ckpt.json").string();
  std::filesystem::remove(path);
  FitnessCache c1(plug_in(f));
  const auto part = run_ga(Family::kBvae, twelve(), cfg, c1, {1, path, 3});
  CHECK_FALSE(part.complete);
  CHECK(part.history.best_so_far.size() == 4);
  int calls = 0;
  FitnessCache c2(plug_in(f, &calls));
  const auto resumed = run_ga(Family::kBvae, twelve(), cfg, c2, {1, path, -1});
  CHECK(resumed.complete);
  CHECK(resumed.history.to_csv(true) == full.history.to_csv(true));
  CHECK(resumed.best == full.best);
  CHECK(c1.evaluations() + std::size_t(calls) == full_cache.evaluations());

  auto other = cfg;
  other.seed = 22;
  FitnessCache c3(plug_in(f));
  CHECK_THROWS_AS(run_ga(Family::kBvae, twelve(), other, c3, {1, path, -1}), ArgumentError);
  std::filesystem::remove(path);
}

TEST_CASE("configuration validation") {
  GAConfig c;
  c.population = 1;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.elitism = 5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = {};
  c.mutation_rate = 1.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(GAConfig::defaults(Family::kOptflow).generations == 100);
  CHECK(GAConfig::defaults(Family::kBvae).generations == 16);
}
