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

// oodkit command-line driver: one subcommand per methodology step, all
// artifacts below a run directory.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/experiment.hpp"

namespace fs = std::filesystem;
using namespace oodkit;

namespace {

constexpr int kExitError = 2;

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  f << text;
  if (!f) throw Error("cannot write " + p.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Common {
  std::string run_dir = "run";
  std::string config;
  std::string family = "bvae";
  int workers = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

struct Ctx {
  fs::path run;
  exp::ExperimentConfig cfg;
  int workers = 1;

  fs::path dataset_dir() const { return run / "dataset"; }
  fs::path model_dir(const std::string& precision) const { return run / "models" / precision; }

  data::Dataset dataset() const {
    if (!fs::exists(dataset_dir() / "manifest.jsonl"))
      throw Error("no dataset in " + dataset_dir().string() + "; run `oodkit dataset-generate` first");
    return data::read_dataset(dataset_dir().string());
  }

  detector::DetectorBundle bundle(const std::string& precision) const {
    const auto dir = model_dir(precision);
    if (!fs::exists(dir / "bundle.json")) {
      throw Error("no " + precision + " detector in " + dir.string() + "; run `oodkit " +
                  (precision == "f32" ? std::string("train") : "quantize --precision " + precision) + "` first");
    }
    return detector::load_bundle(dir.string());
  }

  void save(const detector::DetectorBundle& b, const std::string& precision) const {
    detector::save_bundle(b, model_dir(precision).string());
    fs::create_directories(run / "calib" / precision);
    for (std::size_t i = 0; i < b.calibrations.size(); ++i)
      ood::write_calibration(b.calibrations[i],
                             (run / "calib" / precision / ("calib_" + std::to_string(i) + ".csv")).string());
  }
};

Ctx make_ctx(const Common& c) {
  Ctx ctx;
  ctx.run = c.run_dir;
  fs::create_directories(ctx.run);
  const auto stored = ctx.run / "config.json";
  if (!c.config.empty()) {
    ctx.cfg = exp::config_from_json(slurp(c.config));
  } else if (fs::exists(stored)) {
    ctx.cfg = exp::config_from_json(slurp(stored));
  } else {
    ctx.cfg = exp::default_config(ga::family_from_string(c.family));
  }
  if (c.seed_set) {
    ctx.cfg.dataset.seed = c.seed;
    ctx.cfg.train.train.seed = c.seed;
    ctx.cfg.ga.seed = c.seed;
  }
  if (c.workers < 1) throw ArgumentError("--workers must be >= 1");
  ctx.workers = c.workers;
  for (auto& e : ctx.cfg.bench.executors)
    if (e.kind == pipe::ExecutorKind::kMonoMt) e.workers = std::max(2, std::min(e.workers, std::max(2, c.workers)));
  ctx.cfg.validate();
  spit(stored, exp::config_to_json(ctx.cfg) + "\n");
  return ctx;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');) {
    try {
      out.push_back(std::stod(t));
    } catch (const std::exception&) {
      throw ArgumentError("not a number list: '" + s + "'");
    }
  }
  return out;
}

void print_eval(const detector::Evaluation& ev) {
  for (std::size_t i = 0; i < ev.partitions.size(); ++i)
    std::cout << "auroc[" << ev.partitions[i] << "] = " << fmt(ev.aurocs[i]) << "\n";
  std::cout << "fitness = " << fmt(ev.fitness) << "\n";
}

int cmd_dataset(const Ctx& ctx) {
  const auto ds = data::generate_dataset(ctx.cfg.dataset);
  fs::remove_all(ctx.dataset_dir());
  data::write_dataset(ds, ctx.dataset_dir().string());
  std::cout << "train " << ds.select(data::Split::kTrain).size() << ", calib " << ds.select(data::Split::kCalib).size()
            << ", test " << ds.select(data::Split::kTest).size() << " frames -> " << ctx.dataset_dir().string() << "\n";
  return 0;
}

int cmd_train(const Ctx& ctx, const std::string& genome) {
  const auto g = ga::Genome::parse(genome.empty() ? ctx.cfg.genome : genome);
  const auto ds = ctx.dataset();
  const auto b = detector::build_detector(g, ds, ctx.cfg.train);
  ctx.save(b, "f32");
  std::cout << "trained " << g.key() << " (" << b.models.size() << " encoder" << (b.models.size() > 1 ? "s" : "")
            << ") -> " << ctx.model_dir("f32").string() << "\n";
  return 0;
}

int cmd_calibrate(const Ctx& ctx, const std::string& precision) {
  const auto ds = ctx.dataset();
  detector::DetectorBundle b;
  if (fs::exists(ctx.model_dir(precision) / "bundle.json")) {
    b = ctx.bundle(precision);
    b.post = ctx.cfg.train.post;
    const auto in = detector::prepare_inputs(b.genome, b.flow, ds.sequences(data::Split::kCalib));
    for (std::size_t i = 0; i < b.models.size(); ++i)
      b.calibrations[i] = ood::build_calibration(b.models[i], in[i], b.post);
  } else {
    b = detector::convert_bundle(ctx.bundle("f32"), dtype_from_string(precision), ds);
  }
  ctx.save(b, precision);
  std::cout << "calibration (" << precision << "): " << b.calibrations.front().scores.size() << " rows per encoder\n";
  return 0;
}

int cmd_quantize(const Ctx& ctx, const std::string& precision) {
  const auto p = dtype_from_string(precision);
  if (p == DType::kF32) throw ArgumentError("quantize targets f16 or qint8");
  const auto b = detector::convert_bundle(ctx.bundle("f32"), p, ctx.dataset());
  ctx.save(b, precision);
  std::cout << "converted to " << precision << " -> " << ctx.model_dir(precision).string() << "\n";
  return 0;
}

int cmd_evaluate(const Ctx& ctx, const std::string& precision) {
  const auto b = ctx.bundle(precision);
  const auto ev = detector::evaluate(b, ctx.dataset());
  print_eval(ev);
  exp::EvalRecord rec{precision, b.genome.key(), ev.fitness, ev.partitions, ev.aurocs};
  spit(ctx.run / "eval" / (precision + ".json"), exp::eval_to_json(rec) + "\n");
  return 0;
}

int cmd_ga(const Ctx& ctx, const std::string& bucket_name, bool all_rows, int stop_after) {
  const auto bucket = ga::bucket_from_string(bucket_name);
  const std::string b = ga::to_string(bucket);
  const auto alleles = ga::default_alleles(ctx.cfg.family, bucket, ctx.cfg.width_step);
  const auto ds = ctx.dataset();
  ga::FitnessCache cache(ga::detector_fitness(ds, ctx.cfg.train));
  const auto dir = ctx.run / "ga" / b;
  fs::create_directories(dir);
  const auto res = ga::run_ga(ctx.cfg.family, alleles, ctx.cfg.ga, cache,
                              {ctx.workers, (dir / "checkpoint.json").string(), stop_after});
  spit(dir / "history.csv", res.history.to_csv(all_rows));
  nlohmann::json best{{"genome", res.best.key()}, {"fitness", res.best_fitness}, {"complete", res.complete},
                      {"trainings", cache.evaluations()}};
  spit(dir / "best.json", best.dump(2) + "\n");
  std::cout << "bucket " << b << ": best " << res.best.key() << " fitness " << fmt(res.best_fitness)
            << (res.complete ? "" : " (interrupted; rerun to resume)") << "\n";
  return 0;
}

int cmd_sweep(const Ctx& ctx, const std::string& precision, const std::string& grid) {
  auto b = ctx.bundle(precision);
  const auto values = grid.empty() ? ctx.cfg.delta_grid : parse_list(grid);
  const auto traces = detector::trace_pvalues(b, ctx.dataset());
  const auto sweep = detector::sweep_delta(traces, b.post, values);
  std::ostringstream csv;
  csv << "delta";
  for (const auto& p : sweep.results.front().partitions) csv << ",auroc_" << p;
  csv << ",fitness\n";
  for (std::size_t i = 0; i < sweep.deltas.size(); ++i) {
    csv << sweep.deltas[i];
    for (double a : sweep.results[i].aurocs) csv << ',' << a;
    csv << ',' << sweep.results[i].fitness << '\n';
    std::cout << "delta " << sweep.deltas[i] << ": fitness " << fmt(sweep.results[i].fitness) << "\n";
  }
  spit(ctx.run / "sweep" / ("delta_" + precision + ".csv"), csv.str());
  b.post.decay = sweep.best_delta;
  ctx.save(b, precision);
  std::cout << "best delta " << sweep.best_delta << " (fitness " << fmt(sweep.best_fitness) << ")\n";
  return 0;
}

int cmd_bench(const Ctx& ctx, const std::vector<std::string>& extra) {
  std::vector<detector::DetectorBundle> bundles{ctx.bundle("f32")};
  for (const auto& dir : extra) bundles.push_back(detector::load_bundle(dir));
  const auto rep = pipe::bench_matrix(bundles, ctx.dataset(), ctx.cfg.bench);
  spit(ctx.run / "bench" / "bench.csv", rep.to_csv());
  std::size_t failed = 0;
  for (const auto& r : rep.rows) {
    failed += r.failed;
    if (!r.failed)
      std::cout << r.genome << " " << r.precision << " " << r.executor << ": mean " << fmt(r.timing.mean)
                << " ms, auroc " << fmt(r.auroc) << "\n";
    else
      std::cout << r.genome << " " << r.precision << " " << r.executor << ": FAILED " << r.error << "\n";
  }
  std::cout << rep.rows.size() << " cells (" << failed << " failed) -> " << (ctx.run / "bench" / "bench.csv").string()
            << "\n";
  return 0;
}

int cmd_throughput(const Ctx& ctx, const std::string& precision, const std::string& executor,
                   const std::string& rates, double duration) {
  const auto b = ctx.bundle(precision);
  auto g = pipe::build_graph(b);
  pipe::ExecutorSpec ex{pipe::executor_kind_from_string(executor), std::max(2, ctx.workers)};
  const auto list = rates.empty() ? ctx.cfg.bench.sweep_rates : parse_list(rates);
  if (list.empty()) throw ArgumentError("no rates given (use --rates or bench.sweep_rates)");
  const auto rep = pipe::throughput_sweep(g, ex, pipe::dataset_frames(ctx.dataset()), list, duration);
  std::ostringstream csv;
  csv << "input_fps,sustained_fps,backlog_slope,drops,sustained\n";
  for (const auto& p : rep.points) {
    csv << p.input_fps << ',' << p.sustained_fps << ',' << p.backlog_slope << ',' << p.drops << ','
        << (p.sustained ? 1 : 0) << '\n';
    std::cout << "input " << p.input_fps << " fps: sustained " << fmt(p.sustained_fps) << " fps, backlog slope "
              << fmt(p.backlog_slope) << (p.sustained ? "" : "  (not sustained)") << "\n";
  }
  spit(ctx.run / "bench" / ("throughput_" + precision + "_" + pipe::to_string(ex.kind) + ".csv"), csv.str());
  std::cout << "cores: " << rep.cores << " (timings depend on machine load)\n";
  return 0;
}

int cmd_report(const Ctx& ctx) {
  std::vector<exp::EvalRecord> evals;
  if (fs::exists(ctx.run / "eval"))
    for (const auto& e : fs::directory_iterator(ctx.run / "eval"))
      if (e.path().extension() == ".json") evals.push_back(exp::eval_from_json(slurp(e.path())));
  std::sort(evals.begin(), evals.end(), [](const auto& a, const auto& b) { return a.precision < b.precision; });
  pipe::BenchReport bench;
  if (fs::exists(ctx.run / "bench" / "bench.csv")) bench = exp::bench_from_csv(slurp(ctx.run / "bench" / "bench.csv"));
  std::vector<std::string> precisions, executors;
  for (auto p : ctx.cfg.bench.precisions) precisions.emplace_back(to_string(p));
  for (const auto& e : ctx.cfg.bench.executors) executors.emplace_back(pipe::to_string(e.kind));
  const auto v = exp::judge(ctx.cfg.requirements, evals, bench, precisions, executors);
  spit(ctx.run / "report.json", exp::verdict_to_json(v) + "\n");
  for (const auto& [p, f] : v.fitness)
    std::cout << "functional " << p << ": fitness " << fmt(f) << (v.functional.at(p) ? " PASS" : " FAIL") << "\n";
  std::cout << "nonfunctional: " << v.timing_cells.size() << " cell(s) meet the timing requirements\n";
  for (const auto& gap : v.gaps) std::cout << "gap: " << gap << "\n";
  std::cout << "verdict: " << v.verdict << "\n";
  return v.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oodkit: design-space exploration for OOD detectors"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--run-dir", common.run_dir, "Run directory holding all artifacts")->capture_default_str();
  app.add_option("--config", common.config, "Experiment config JSON (stored in the run directory)");
  app.add_option("--family", common.family, "Detector family without a config: bvae or optflow")->capture_default_str();
  app.add_option("--workers", common.workers, "Cap on concurrent workers")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", common.seed, "Override every seed in the config");

  std::string genome, precision = "f32", bucket = "S", grid, executor = "MONO_ST", rates;
  bool all_rows = false;
  int stop_after = -1;
  double duration = 2.0;
  std::vector<std::string> extra_bundles;

  auto* gen = app.add_subcommand("dataset-generate", "Generate the synthetic dataset and manifest");
  auto* train = app.add_subcommand("train", "Train the f32 detector for one genome and calibrate it");
  train->add_option("--genome", genome, "Genome key, e.g. bvae:32x32:bilinear:gray");
  auto* calib = app.add_subcommand("calibrate", "Regenerate the calibration set for a precision");
  calib->add_option("--precision", precision)->capture_default_str();
  auto* eval = app.add_subcommand("evaluate", "Per-factor AUROC and harmonic fitness on the test split");
  eval->add_option("--precision", precision)->capture_default_str();
  auto* gas = app.add_subcommand("ga-search", "Genetic search over one bucket");
  gas->add_option("--bucket", bucket, "S, M or L")->capture_default_str();
  gas->add_flag("--all-rows", all_rows, "Keep cache-hit rows in history.csv");
  gas->add_option("--stop-after", stop_after, "Stop after this generation (resume by rerunning)");
  auto* sweep = app.add_subcommand("sweep-delta", "Sweep the CUSUM decay and keep the best");
  sweep->add_option("--precision", precision)->capture_default_str();
  sweep->add_option("--grid", grid, "Comma-separated decay values (default: config delta_grid)");
  auto* quant = app.add_subcommand("quantize", "Convert the f32 detector to f16 or qint8");
  precision = "f32";
  quant->add_option("--precision", precision, "f16 or qint8")->required();
  auto* bench = app.add_subcommand("bench", "Precision x executor response-time matrix");
  bench->add_option("--bundle", extra_bundles, "Additional f32 bundle directories");
  auto* tput = app.add_subcommand("throughput", "Sustained output rate per input rate");
  tput->add_option("--precision", precision)->capture_default_str();
  tput->add_option("--executor", executor)->capture_default_str();
  tput->add_option("--rates", rates, "Comma-separated input rates (fps)");
  tput->add_option("--duration", duration, "Seconds per rate")->capture_default_str();
  auto* report = app.add_subcommand("report", "Check requirements and write report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  try {
    common.seed_set = seed_opt->count() > 0;
    const Ctx ctx = make_ctx(common);
    if (gen->parsed()) return cmd_dataset(ctx);
    if (train->parsed()) return cmd_train(ctx, genome);
    if (calib->parsed()) return cmd_calibrate(ctx, precision);
    if (eval->parsed()) return cmd_evaluate(ctx, precision);
    if (gas->parsed()) return cmd_ga(ctx, bucket, all_rows, stop_after);
    if (sweep->parsed()) return cmd_sweep(ctx, precision, grid);
    if (quant->parsed()) return cmd_quantize(ctx, precision);
    if (bench->parsed()) return cmd_bench(ctx, extra_bundles);
    if (tput->parsed()) return cmd_throughput(ctx, precision, executor, rates, duration);
    if (report->parsed()) return cmd_report(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
