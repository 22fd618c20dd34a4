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

#include "oodkit/gasearch.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "oodkit/error.hpp"

namespace oodkit::ga {

using nlohmann::json;

GAConfig GAConfig::defaults(Family family) {
  GAConfig c;
  c.generations = family == Family::kBvae ? 16 : 100;
  return c;
}

void GAConfig::validate() const {
  if (population < 2) throw ArgumentError("GA population must be >= 2");
  if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ArgumentError("mutation_rate must lie in [0, 1]");
  if (generations < 0) throw ArgumentError("generations must be >= 0");
  if (elitism < 0 || elitism >= population) throw ArgumentError("elitism must lie in [0, population)");
  if (tournament_k < 1) throw ArgumentError("tournament_k must be >= 1");
}

namespace {

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(v.size()) - 1))];
}

Genome assemble(Family family, std::pair<int, int> size, imaging::Interpolation interp, ColorSpace color, int depth) {
  Genome g;
  g.family = family;
  g.height = size.first;
  g.width = size.second;
  g.interpolation = interp;
  g.color = color;
  g.flow_depth = depth;
  return g;
}

}  // namespace

Genome random_genome(Family family, const BucketAlleles& a, Rng& rng) {
  if (a.space_size() == 0) throw ArgumentError("bucket has an empty allele list");
  const auto size = pick(a.sizes, rng);
  const auto interp = pick(a.interpolations, rng);
  const auto color = pick(a.colors, rng);
  const auto depth = pick(a.flow_depths, rng);
  return assemble(family, size, interp, color, depth);
}

Genome mutate(const Genome& g, const BucketAlleles& a, double rate, Rng& rng) {
  if (!a.contains(g)) throw ArgumentError("genome " + g.key() + " lies outside the bucket");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ArgumentError("mutation rate must lie in [0, 1]");
  Genome out = g;
  if (uniform01(rng) < rate) std::tie(out.height, out.width) = pick(a.sizes, rng);
  if (uniform01(rng) < rate) out.interpolation = pick(a.interpolations, rng);
  if (uniform01(rng) < rate) out.color = pick(a.colors, rng);
  if (uniform01(rng) < rate) out.flow_depth = pick(a.flow_depths, rng);
  return out;
}

Genome crossover(const Genome& a, const Genome& b, Rng& rng) {
  if (a.family != b.family) throw ArgumentError("crossover across detector families");
  Genome out = a;
  if (uniform01(rng) < 0.5) {
    out.height = b.height;
    out.width = b.width;
  }
  if (uniform01(rng) < 0.5) out.interpolation = b.interpolation;
  if (uniform01(rng) < 0.5) out.color = b.color;
  if (uniform01(rng) < 0.5) out.flow_depth = b.flow_depth;
  return out;
}

bool ranks_above(const Genome& a, double fa, const Genome& b, double fb) {
  if (fa != fb) return fa > fb;
  if (a.area() != b.area()) return a.area() < b.area();
  return a.key() < b.key();
}

Genome select(const std::vector<Scored>& pop, int k, Rng& rng) {
  if (pop.empty()) throw ArgumentError("cannot select from an empty population");
  if (k < 1) throw ArgumentError("tournament size must be >= 1");
  const Scored* best = &pick(pop, rng);
  for (int i = 1; i < k; ++i) {
    const Scored* c = &pick(pop, rng);
    if (ranks_above(c->genome, c->fitness, best->genome, best->fitness)) best = c;
  }
  return best->genome;
}

FitnessCache::FitnessCache(FitnessFn fn) : fn_(std::move(fn)) {
  if (!fn_) throw ArgumentError("fitness function is empty");
}

std::vector<std::pair<FitnessResult, bool>> FitnessCache::evaluate(const std::vector<Genome>& genomes, int workers) {
  std::vector<Genome> todo;
  for (const auto& g : genomes) {
    const auto k = g.key();
    if (memo_.count(k) == 0 &&
        std::none_of(todo.begin(), todo.end(), [&](const Genome& t) { return t.key() == k; }))
      todo.push_back(g);
  }
  std::vector<FitnessResult> fresh(todo.size());
  auto run_one = [&](std::size_t i) {
    try {
      fresh[i] = fn_(todo[i]);
    } catch (const std::exception& e) {
      fresh[i] = FitnessResult{};
      fresh[i].failed = true;
      fresh[i].error = e.what();
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), todo.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < todo.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) run_one(i);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (fresh[i].failed) std::cerr << "ga: evaluation of " << todo[i].key() << " failed: " << fresh[i].error << "\n";
    memo_[todo[i].key()] = std::move(fresh[i]);
    ++evaluations_;
  }
  std::vector<std::pair<FitnessResult, bool>> out;
  std::vector<std::string> first_seen;
  for (const auto& g : genomes) {
    const auto k = g.key();
    const bool is_new = std::any_of(todo.begin(), todo.end(), [&](const Genome& t) { return t.key() == k; }) &&
                        std::find(first_seen.begin(), first_seen.end(), k) == first_seen.end();
    if (is_new) first_seen.push_back(k);
    out.emplace_back(memo_.at(k), !is_new);
  }
  return out;
}

std::pair<FitnessResult, bool> FitnessCache::evaluate(const Genome& g) { return evaluate(std::vector<Genome>{g}).front(); }

void FitnessCache::restore(std::map<std::string, FitnessResult> entries) {
  for (auto& [k, v] : entries) memo_.insert_or_assign(k, std::move(v));
}

std::string GAHistory::to_csv(bool include_hits) const {
  std::vector<std::string> factors;
  for (const auto& r : rows)
    for (const auto& f : r.result.factors)
      if (std::find(factors.begin(), factors.end(), f) == factors.end()) factors.push_back(f);
  std::ostringstream os;
  os << "generation,genome,family,height,width,interpolation,color,flow_depth";
  for (const auto& f : factors) os << ",auroc_" << f;
  os << ",fitness,cache_hit\n";
  char buf[32];
  for (const auto& r : rows) {
    if (r.cache_hit && !include_hits) continue;
    const auto& g = r.genome;
    os << r.generation << ',' << g.key() << ',' << to_string(g.family) << ',' << g.height << ',' << g.width << ','
       << imaging::to_string(g.interpolation) << ',' << (g.family == Family::kBvae ? to_string(g.color) : "")
       << ',' << g.flow_depth;
    for (const auto& f : factors) {
      os << ',';
      const auto it = std::find(r.result.factors.begin(), r.result.factors.end(), f);
      if (it != r.result.factors.end()) {
        std::snprintf(buf, sizeof buf, "%.17g", r.result.aurocs[static_cast<std::size_t>(it - r.result.factors.begin())]);
        os << buf;
      }
    }
    std::snprintf(buf, sizeof buf, "%.17g", r.result.fitness);
    os << ',' << buf << ',' << (r.cache_hit ? 1 : 0) << '\n';
  }
  return os.str();
}

namespace {

json result_json(const FitnessResult& r) {
  return {{"fitness", r.fitness}, {"factors", r.factors}, {"aurocs", r.aurocs}, {"failed", r.failed}, {"error", r.error}};
}

FitnessResult result_from(const json& j) {
  FitnessResult r;
  r.fitness = j.at("fitness");
  r.factors = j.at("factors").get<std::vector<std::string>>();
  r.aurocs = j.at("aurocs").get<std::vector<double>>();
  r.failed = j.at("failed");
  r.error = j.at("error");
  return r;
}

json fingerprint(Family family, const BucketAlleles& a, const GAConfig& c) {
  std::vector<std::string> space;
  for (const auto& g : enumerate(family, a)) space.push_back(g.key());
  return {{"family", to_string(family)},  {"seed", c.seed},           {"population", c.population},
          {"mutation_rate", c.mutation_rate}, {"elitism", c.elitism}, {"tournament_k", c.tournament_k},
          {"space", space}};
}

struct Checkpoint {
  int generation = -1;
  std::vector<Scored> population;
  GAHistory history;
};

void write_checkpoint(const std::string& path, const json& fp, const Checkpoint& ck, const FitnessCache& cache) {
  json pop = json::array(), rows = json::array(), memo = json::object();
  for (const auto& s : ck.population) pop.push_back({{"genome", s.genome.key()}, {"fitness", s.fitness}});
  for (const auto& r : ck.history.rows)
    rows.push_back({{"generation", r.generation}, {"genome", r.genome.key()}, {"cache_hit", r.cache_hit}});
  for (const auto& [k, v] : cache.entries()) memo[k] = result_json(v);
  const json j{{"version", 1},       {"fingerprint", fp}, {"generation", ck.generation},
               {"population", pop},  {"history", rows},   {"best_so_far", ck.history.best_so_far},
               {"cache", memo}};
  const auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw Error("cannot write checkpoint " + tmp);
    f << j.dump(1) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path, const json& fp, FitnessCache& cache) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open checkpoint " + path);
  try {
    const json j = json::parse(f);
    if (j.at("version") != 1) throw FormatError(FormatErrc::kVersionMismatch, "unsupported checkpoint version");
    if (j.at("fingerprint") != fp) throw ArgumentError("checkpoint " + path + " belongs to a different GA configuration");
    std::map<std::string, FitnessResult> memo;
    for (const auto& [k, v] : j.at("cache").items()) memo[k] = result_from(v);
    cache.restore(memo);
    Checkpoint ck;
    ck.generation = j.at("generation");
    for (const auto& p : j.at("population")) ck.population.push_back({Genome::parse(p.at("genome")), p.at("fitness")});
    for (const auto& r : j.at("history")) {
      HistoryRow row;
      row.generation = r.at("generation");
      row.genome = Genome::parse(r.at("genome"));
      row.cache_hit = r.at("cache_hit");
      row.result = memo.at(row.genome.key());
      ck.history.rows.push_back(std::move(row));
    }
    ck.history.best_so_far = j.at("best_so_far").get<std::vector<double>>();
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadHeader, "bad checkpoint " + path + ": " + e.what());
  }
}

}  // namespace

GAResult run_ga(Family family, const BucketAlleles& alleles, const GAConfig& cfg, FitnessCache& cache,
                const RunOptions& opts) {
  cfg.validate();
  alleles.validate(family);
  const json fp = fingerprint(family, alleles, cfg);
  Checkpoint ck;
  if (!opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path))
    ck = read_checkpoint(opts.checkpoint_path, fp, cache);

  GAResult out;
  out.complete = true;
  for (int gen = ck.generation + 1; gen <= cfg.generations; ++gen) {
    Rng rng = make_rng(cfg.seed, 0x67610000ull + static_cast<std::uint64_t>(gen));
    std::vector<Genome> next;
    if (gen == 0) {
      for (int i = 0; i < cfg.population; ++i) next.push_back(random_genome(family, alleles, rng));
    } else {
      auto ranked = ck.population;
      std::stable_sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
        return ranks_above(a.genome, a.fitness, b.genome, b.fitness);
      });
      for (int i = 0; i < cfg.elitism; ++i) next.push_back(ranked[static_cast<std::size_t>(i)].genome);
      while (static_cast<int>(next.size()) < cfg.population) {
        const auto a = select(ck.population, cfg.tournament_k, rng);
        const auto b = select(ck.population, cfg.tournament_k, rng);
        next.push_back(mutate(crossover(a, b, rng), alleles, cfg.mutation_rate, rng));
      }
    }
    const auto results = cache.evaluate(next, opts.workers);
    ck.population.clear();
    double best = ck.history.best_so_far.empty() ? 0.0 : ck.history.best_so_far.back();
    for (std::size_t i = 0; i < next.size(); ++i) {
      ck.history.rows.push_back({gen, next[i], results[i].first, results[i].second});
      ck.population.push_back({next[i], results[i].first.fitness});
      best = std::max(best, results[i].first.fitness);
    }
    ck.history.best_so_far.push_back(best);
    ck.generation = gen;
    if (!opts.checkpoint_path.empty()) write_checkpoint(opts.checkpoint_path, fp, ck, cache);
    if (opts.stop_after >= 0 && gen >= opts.stop_after && gen < cfg.generations) {
      out.complete = false;
      break;
    }
  }
  out.history = ck.history;
  bool first = true;
  for (const auto& r : out.history.rows) {
    if (first || ranks_above(r.genome, r.result.fitness, out.best, out.best_fitness)) {
      out.best = r.genome;
      out.best_fitness = r.result.fitness;
      first = false;
    }
  }
  return out;
}

FitnessFn detector_fitness(const data::Dataset& ds, const detector::TrainSettings& settings) {
  return [&ds, settings](const Genome& g) {
    const auto bundle = detector::build_detector(g, ds, settings);
    const auto ev = detector::evaluate(bundle, ds);
    FitnessResult r;
    r.fitness = ev.fitness;
    r.factors = ev.partitions;
    r.aurocs = ev.aurocs;
    return r;
  };
}

}  // namespace oodkit::ga
