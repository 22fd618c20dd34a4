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

#include "oodkit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "oodkit/error.hpp"

namespace oodkit::exp {

using nlohmann::json;

ExperimentConfig default_config(ga::Family family) {
  ExperimentConfig c;
  c.family = family;
  if (family == ga::Family::kBvae) {
    c.dataset = data::bvae_dataset_config();
    c.genome = "bvae:16x16:nearest:gray";
  } else {
    c.dataset = data::optflow_dataset_config();
    c.genome = "optflow:48x64:area:d6";
  }
  c.ga = ga::GAConfig::defaults(family);
  return c;
}

void ExperimentConfig::validate() const {
  dataset.validate();
  train.post.validate();
  train.flow.farneback.validate();
  ga.validate();
  const auto g = ga::Genome::parse(genome);
  if (g.family != family) throw ArgumentError("genome " + genome + " does not belong to family " + ga::to_string(family));
  if (width_step < 1) throw ArgumentError("width_step must be >= 1");
  if (delta_grid.empty()) throw ArgumentError("delta_grid must be nonempty");
  for (double d : delta_grid)
    if (!(d >= 0.0)) throw ArgumentError("decay values must be non-negative");
  if (bench.precisions.empty() || bench.executors.empty()) throw ArgumentError("bench needs precisions and executors");
  for (const auto& e : bench.executors) e.validate();
  if (bench.frames <= bench.warmup) throw ArgumentError("bench frames must exceed the warmup");
  if (!(bench.rate_fps > 0.0)) throw ArgumentError("bench rate must be positive");
  if (train.kl_top_k < 0) throw ArgumentError("kl_top_k must be >= 0");
  if (train.train.epochs < 1 || train.train.batch < 1 || !(train.train.lr >= 0.0))
    throw ArgumentError("invalid training options");
  if (requirements.min_auroc < 0.0 || requirements.min_auroc > 1.0) throw ArgumentError("min_auroc must lie in [0, 1]");
}

namespace {

template <class T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string optimizer_name(net::Optimizer o) { return o == net::Optimizer::kAdam ? "adam" : "sgd"; }

net::Optimizer optimizer_from(const std::string& s) {
  if (s == "adam") return net::Optimizer::kAdam;
  if (s == "sgd") return net::Optimizer::kSgd;
  throw ArgumentError("unknown optimizer '" + s + "'");
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    c = default_config(ga::family_from_string(j.value("family", std::string("bvae"))));
    if (j.contains("seed")) {
      const auto seed = j.at("seed").get<std::uint64_t>();
      c.dataset.seed = seed;
      c.train.train.seed = seed;
      c.ga.seed = seed;
    }
    if (j.contains("requirements")) {
      const auto& r = j.at("requirements");
      get(r, "min_auroc", c.requirements.min_auroc);
      get(r, "max_response_ms", c.requirements.max_response_ms);
      get(r, "min_throughput_fps", c.requirements.min_throughput_fps);
    }
    if (j.contains("dataset")) {
      json d = j.at("dataset");
      if (!d.contains("factors")) d["factors"] = json::parse(data::config_to_json(c.dataset)).at("factors");
      if (!d.contains("seed")) d["seed"] = c.dataset.seed;
      c.dataset = data::config_from_json(d.dump());
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      get(m, "n_latent", c.train.n_latent);
      get(m, "beta", c.train.beta);
      if (m.contains("variance")) c.train.variance = net::variance_param_from_string(m.at("variance"));
      get(m, "of_n_latent", c.train.of_n_latent);
      get(m, "of_beta", c.train.of_beta);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      get(t, "epochs", c.train.train.epochs);
      get(t, "batch", c.train.train.batch);
      get(t, "lr", c.train.train.lr);
      get(t, "seed", c.train.train.seed);
      if (t.contains("optimizer")) c.train.train.optimizer = optimizer_from(t.at("optimizer"));
    }
    get(j, "genome", c.genome);
    if (j.contains("ga")) {
      const auto& g = j.at("ga");
      get(g, "population", c.ga.population);
      get(g, "mutation_rate", c.ga.mutation_rate);
      get(g, "generations", c.ga.generations);
      get(g, "elitism", c.ga.elitism);
      get(g, "tournament_k", c.ga.tournament_k);
      get(g, "seed", c.ga.seed);
      get(g, "width_step", c.width_step);
    }
    if (j.contains("postprocess")) {
      c.train.post = detector::post_config_from_json(j.at("postprocess").dump());
      get(j.at("postprocess"), "kl_top_k", c.train.kl_top_k);
    }
    get(j, "delta_grid", c.delta_grid);
    if (j.contains("flow")) {
      const auto& f = j.at("flow");
      auto& fb = c.train.flow.farneback;
      get(f, "flow_scale", c.train.flow.flow_scale);
      get(f, "crop_top", c.train.flow.crop_top);
      get(f, "window_size", fb.window_size);
      get(f, "iterations", fb.iterations);
      get(f, "pyramid_levels", fb.pyramid_levels);
      get(f, "pyramid_scale", fb.pyramid_scale);
      get(f, "poly_n", fb.poly_n);
      get(f, "poly_sigma", fb.poly_sigma);
    }
    if (j.contains("precisions")) {
      c.bench.precisions.clear();
      for (const auto& p : j.at("precisions")) c.bench.precisions.push_back(dtype_from_string(p.get<std::string>()));
    }
    int workers = 2;
    get(j, "workers", workers);
    if (j.contains("executors")) {
      c.bench.executors.clear();
      for (const auto& e : j.at("executors"))
        c.bench.executors.push_back({pipe::executor_kind_from_string(e.get<std::string>()), workers});
    } else {
      for (auto& e : c.bench.executors) e.workers = workers;
    }
    if (j.contains("bench")) {
      const auto& b = j.at("bench");
      get(b, "frames", c.bench.frames);
      get(b, "warmup", c.bench.warmup);
      get(b, "rate_fps", c.bench.rate_fps);
      get(b, "sweep_rates", c.bench.sweep_rates);
      get(b, "sweep_duration_s", c.bench.sweep_duration_s);
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  const auto& fb = c.train.flow.farneback;
  std::vector<std::string> precisions, executors;
  for (auto p : c.bench.precisions) precisions.emplace_back(to_string(p));
  for (const auto& e : c.bench.executors) executors.emplace_back(pipe::to_string(e.kind));
  const int workers = c.bench.executors.empty() ? 2 : c.bench.executors.front().workers;
  const json j{
      {"family", ga::to_string(c.family)},
      {"requirements",
       {{"min_auroc", c.requirements.min_auroc},
        {"max_response_ms", c.requirements.max_response_ms},
        {"min_throughput_fps", c.requirements.min_throughput_fps}}},
      {"dataset", json::parse(data::config_to_json(c.dataset))},
      {"model",
       {{"n_latent", c.train.n_latent},
        {"beta", c.train.beta},
        {"variance", net::to_string(c.train.variance)},
        {"of_n_latent", c.train.of_n_latent},
        {"of_beta", c.train.of_beta}}},
      {"train",
       {{"epochs", c.train.train.epochs},
        {"batch", c.train.train.batch},
        {"lr", c.train.train.lr},
        {"seed", c.train.train.seed},
        {"optimizer", optimizer_name(c.train.train.optimizer)}}},
      {"genome", c.genome},
      {"ga",
       {{"population", c.ga.population},
        {"mutation_rate", c.ga.mutation_rate},
        {"generations", c.ga.generations},
        {"elitism", c.ga.elitism},
        {"tournament_k", c.ga.tournament_k},
        {"seed", c.ga.seed},
        {"width_step", c.width_step}}},
      {"postprocess", [&] {
         auto p = json::parse(detector::post_config_to_json(c.train.post));
         p["kl_top_k"] = c.train.kl_top_k;
         return p;
       }()},
      {"delta_grid", c.delta_grid},
      {"flow",
       {{"flow_scale", c.train.flow.flow_scale},
        {"crop_top", c.train.flow.crop_top},
        {"window_size", fb.window_size},
        {"iterations", fb.iterations},
        {"pyramid_levels", fb.pyramid_levels},
        {"pyramid_scale", fb.pyramid_scale},
        {"poly_n", fb.poly_n},
        {"poly_sigma", fb.poly_sigma}}},
      {"precisions", precisions},
      {"executors", executors},
      {"workers", workers},
      {"bench",
       {{"frames", c.bench.frames},
        {"warmup", c.bench.warmup},
        {"rate_fps", c.bench.rate_fps},
        {"sweep_rates", c.bench.sweep_rates},
        {"sweep_duration_s", c.bench.sweep_duration_s}}}};
  return j.dump(2);
}

std::string eval_to_json(const EvalRecord& e) {
  return json{{"precision", e.precision},
              {"genome", e.genome},
              {"fitness", e.fitness},
              {"partitions", e.partitions},
              {"aurocs", e.aurocs}}
      .dump(2);
}

EvalRecord eval_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalRecord e;
    e.precision = j.at("precision");
    e.genome = j.value("genome", std::string());
    e.fitness = j.at("fitness");
    e.partitions = j.at("partitions").get<std::vector<std::string>>();
    e.aurocs = j.at("aurocs").get<std::vector<double>>();
    return e;
  } catch (const json::exception& ex) {
    throw ArgumentError(std::string("evaluation record: ") + ex.what());
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

pipe::BenchReport bench_from_csv(const std::string& text) {
  pipe::BenchReport rep;
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw ArgumentError("empty bench CSV");
  const auto header = split_csv(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ArgumentError("bench CSV lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::string prefix = "sustained_fps_at_";
  std::vector<std::size_t> rate_cols;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i].rfind(prefix, 0) == 0) {
      rep.sweep_rates.push_back(std::stod(header[i].substr(prefix.size())));
      rate_cols.push_back(i);
    }
  const auto c_status = col("status");
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw ArgumentError("bench CSV row has " + std::to_string(cells.size()) + " cells");
    pipe::BenchRow r;
    r.family = cells[col("family")];
    r.genome = cells[col("genome")];
    r.precision = cells[col("precision")];
    r.executor = cells[col("executor")];
    r.input_size = cells[col("input_size")];
    const auto& status = cells[c_status];
    if (status != "ok") {
      r.failed = true;
      r.error = status.rfind("failed: ", 0) == 0 ? status.substr(8) : status;
    } else {
      auto num = [&](const char* name) { return std::stod(cells[col(name)]); };
      r.timing = {num("mean_ms"), num("min"), num("q1"), num("median"), num("q3"), num("p95"), num("p99"), num("max")};
      r.auroc = num("auroc");
      r.auroc_delta = num("auroc_delta_vs_baseline");
      for (auto c : rate_cols) r.sustained_fps.push_back(std::stod(cells[c]));
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

Verdict judge(const Requirements& req, const std::vector<EvalRecord>& evals, const pipe::BenchReport& bench,
              const std::vector<std::string>& precisions, const std::vector<std::string>& executors) {
  Verdict v;
  v.requirements = req;
  for (const auto& e : evals) {
    v.fitness[e.precision] = e.fitness;
    v.functional[e.precision] = e.fitness >= req.min_auroc;
  }
  for (const auto& p : precisions)
    if (!v.fitness.count(p)) v.gaps.push_back("no evaluation for precision " + p);
  if (!v.fitness.count("f32")) v.gaps.push_back("no f32 baseline evaluation");
  for (const auto& [p, ok] : v.functional) v.functional_pass |= ok;

  if (bench.rows.empty()) v.gaps.push_back("no bench cells");
  if (!bench.rows.empty() && bench.sweep_rates.empty()) v.gaps.push_back("no throughput measurements in bench");
  for (const auto& p : precisions)
    for (const auto& e : executors) {
      const bool have = std::any_of(bench.rows.begin(), bench.rows.end(),
                                    [&](const pipe::BenchRow& r) { return r.precision == p && r.executor == e; });
      if (!have) v.gaps.push_back("missing bench cell " + p + "/" + e);
    }
  for (const auto& r : bench.rows) {
    const std::string cell = r.genome + "/" + r.precision + "/" + r.executor;
    if (r.failed) {
      v.gaps.push_back("bench cell " + cell + " failed: " + r.error);
      continue;
    }
    bool fast_enough = false;
    for (std::size_t i = 0; i < bench.sweep_rates.size() && i < r.sustained_fps.size(); ++i)
      fast_enough |= bench.sweep_rates[i] >= req.min_throughput_fps && r.sustained_fps[i] >= 0.95 * bench.sweep_rates[i];
    if (r.timing.mean > req.max_response_ms || !fast_enough) continue;
    v.timing_cells.push_back(cell);
    const auto f = v.functional.find(r.precision);
    if (f != v.functional.end() && f->second) v.passing_cells.push_back(cell);
  }
  v.nonfunctional_pass = !v.timing_cells.empty();
  if (!v.passing_cells.empty()) {
    v.verdict = v.gaps.empty() ? "pass" : "incomplete";
  } else {
    v.verdict = v.gaps.empty() ? "fail" : "incomplete";
  }
  return v;
}

std::string verdict_to_json(const Verdict& v) {
  const json j{{"requirements",
                {{"min_auroc", v.requirements.min_auroc},
                 {"max_response_ms", v.requirements.max_response_ms},
                 {"min_throughput_fps", v.requirements.min_throughput_fps}}},
               {"fitness", v.fitness},
               {"functional", v.functional},
               {"timing_cells", v.timing_cells},
               {"passing_cells", v.passing_cells},
               {"functional_pass", v.functional_pass},
               {"nonfunctional_pass", v.nonfunctional_pass},
               {"gaps", v.gaps},
               {"verdict", v.verdict}};
  return j.dump(2);
}

Verdict verdict_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    Verdict v;
    const auto& r = j.at("requirements");
    v.requirements = {r.at("min_auroc"), r.at("max_response_ms"), r.at("min_throughput_fps")};
    v.fitness = j.at("fitness").get<std::map<std::string, double>>();
    v.functional = j.at("functional").get<std::map<std::string, bool>>();
    v.timing_cells = j.at("timing_cells").get<std::vector<std::string>>();
    v.passing_cells = j.at("passing_cells").get<std::vector<std::string>>();
    v.functional_pass = j.at("functional_pass");
    v.nonfunctional_pass = j.at("nonfunctional_pass");
    v.gaps = j.at("gaps").get<std::vector<std::string>>();
    v.verdict = j.at("verdict");
    return v;
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("verdict JSON: ") + e.what());
  }
}

}  // namespace oodkit::exp
