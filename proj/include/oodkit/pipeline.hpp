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

#include <any>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oodkit/dataset.hpp"
#include "oodkit/detector.hpp"

namespace oodkit::pipe {

enum class ExecutorKind { kChainMt, kMonoSt, kMonoMt };

const char* to_string(ExecutorKind k);
/// "CHAIN_MT", "MONO_ST", "MONO_MT" (case-insensitive, '-' accepted for '_').
ExecutorKind executor_kind_from_string(const std::string& s);

struct ExecutorSpec {
  ExecutorKind kind = ExecutorKind::kMonoSt;
  /// Pool size for MONO_MT (>= 2); ignored otherwise.
  int workers = 2;

  void validate() const;
};

using Payload = std::any;

/// A stage gets one payload per incoming edge (in edge order; the source
/// stage gets the frame) and returns its output. When any input is empty the
/// executor skips the call and forwards an empty payload.
struct Stage {
  std::string name;
  std::function<Payload(const std::vector<Payload>&)> fn;
  /// Stateful stages run mutually exclusive and in source order.
  bool stateful = false;
  std::function<void()> reset;
};

class CallbackGraph {
 public:
  int add_stage(Stage stage);
  /// Adds an edge; rejects unknown nodes, duplicates and cycles.
  void connect(int from, int to);

  std::size_t size() const { return stages_.size(); }
  const Stage& stage(int i) const { return stages_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& inputs(int i) const { return in_.at(static_cast<std::size_t>(i)); }
  const std::vector<int>& outputs(int i) const { return out_.at(static_cast<std::size_t>(i)); }
  int source() const;
  int sink() const;
  std::vector<int> topological_order() const;
  /// Nonempty, acyclic, exactly one source and one sink.
  void validate() const;
  void reset();

 private:
  std::vector<Stage> stages_;
  std::vector<std::vector<int>> in_, out_;
};

/// BVAE: preprocess -> encode -> postprocess. Optical flow: preprocess ->
/// {encode_u, encode_v} -> postprocess. The sink emits std::optional<double>.
CallbackGraph build_graph(const detector::DetectorBundle& bundle);

/// Stages that sleep for the given milliseconds; the sink emits the frame
/// number as an std::optional<double>. With `diamond` the middle stages run
/// as parallel branches between the first and last stage.
CallbackGraph synthetic_graph(const std::vector<double>& stage_ms, bool diamond = false);

struct Source {
  int n_frames = 200;
  double rate_fps = 30.0;
  std::function<Payload(int)> frame;
};

struct Summary {
  double mean = 0, min = 0, q1 = 0, median = 0, q3 = 0, p95 = 0, p99 = 0, max = 0;
};

/// Linear-interpolation quantiles.
Summary summarize(std::vector<double> values);

struct TimingReport {
  std::vector<double> response_ms;
  Summary summary;
  std::size_t count = 0;
  int warmup_discarded = 0;
  unsigned cores = 0;
};

struct RunResult {
  std::vector<std::optional<double>> scores;
  TimingReport timing;
  /// Sink emission times relative to the first ingress.
  std::vector<double> emit_s;
  double wall_s = 0.0;
};

/// Drives `source` through the graph on a monotonic clock. Frames are
/// released at their scheduled ingress times; response = sink emission minus
/// ingress. The first `warmup` frames are left out of the timing report.
RunResult run_stream(CallbackGraph& graph, const ExecutorSpec& exec, const Source& source, int warmup = 20);

struct RatePoint {
  double input_fps = 0.0;
  double sustained_fps = 0.0;
  /// Least-squares slope of the queued-work total over time (frames/s).
  double backlog_slope = 0.0;
  /// Unbounded queues never drop; kept for the report layout.
  std::size_t drops = 0;
  bool sustained = false;
};

struct ThroughputReport {
  std::vector<RatePoint> points;
  unsigned cores = 0;
};

/// For each rate: drive for `duration_s`, measure the output rate over the
/// trailing half of the window and the backlog slope. Sustained iff output
/// >= 0.95 input and the backlog grows by less than max(2 frames, 5% of the
/// frames fed) across that half window.
ThroughputReport throughput_sweep(CallbackGraph& graph, const ExecutorSpec& exec,
                                  const std::function<Payload(int)>& frame, const std::vector<double>& rates,
                                  double duration_s);

struct BenchConfig {
  std::vector<DType> precisions{DType::kF32, DType::kF16, DType::kQInt8};
  std::vector<ExecutorSpec> executors{{ExecutorKind::kChainMt, 2}, {ExecutorKind::kMonoSt, 2},
                                      {ExecutorKind::kMonoMt, 2}};
  int frames = 220;
  int warmup = 20;
  double rate_fps = 20.0;
  /// Optional throughput columns.
  std::vector<double> sweep_rates;
  double sweep_duration_s = 2.0;
};

struct BenchRow {
  std::string family, genome, precision, executor, input_size;
  Summary timing;
  double auroc = 0.0;
  double auroc_delta = 0.0;
  std::vector<double> sustained_fps;
  bool failed = false;
  std::string error;
};

struct BenchReport {
  std::vector<double> sweep_rates;
  std::vector<BenchRow> rows;
  std::string to_csv() const;
};

/// Every (bundle, precision, executor) cell. Bundles are f32; each precision
/// is derived with convert_bundle, scored on the test split (harmonic
/// fitness) and timed on the test frames. The f32 cell of a bundle is its
/// baseline. A failing cell is marked and the run continues.
BenchReport bench_matrix(const std::vector<detector::DetectorBundle>& bundles, const data::Dataset& ds,
                         const BenchConfig& cfg);

/// Test frames of the dataset in sequence order, cycled.
std::function<Payload(int)> dataset_frames(const data::Dataset& ds);

}  // namespace oodkit::pipe
