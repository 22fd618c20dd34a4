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

#include "oodkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "oodkit/error.hpp"

namespace oodkit::pipe {

using Clock = std::chrono::steady_clock;

const char* to_string(ExecutorKind k) {
  switch (k) {
    case ExecutorKind::kChainMt: return "CHAIN_MT";
    case ExecutorKind::kMonoSt: return "MONO_ST";
    case ExecutorKind::kMonoMt: return "MONO_MT";
  }
  return "?";
}

ExecutorKind executor_kind_from_string(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto k : {ExecutorKind::kChainMt, ExecutorKind::kMonoSt, ExecutorKind::kMonoMt})
    if (u == to_string(k)) return k;
  throw ArgumentError("unknown executor kind '" + s + "'");
}

void ExecutorSpec::validate() const {
  if (kind == ExecutorKind::kMonoMt && workers < 2) throw ArgumentError("MONO_MT needs at least 2 workers");
}

// ---------------------------------------------------------------- graph

int CallbackGraph::add_stage(Stage stage) {
  if (!stage.fn) throw ArgumentError("stage '" + stage.name + "' has no function");
  stages_.push_back(std::move(stage));
  in_.emplace_back();
  out_.emplace_back();
  return static_cast<int>(stages_.size()) - 1;
}

void CallbackGraph::connect(int from, int to) {
  const int n = static_cast<int>(stages_.size());
  if (from < 0 || from >= n || to < 0 || to >= n) throw ArgumentError("edge references an unknown stage");
  auto& outs = out_[static_cast<std::size_t>(from)];
  if (std::find(outs.begin(), outs.end(), to) != outs.end()) throw ArgumentError("duplicate edge");
  // Reject the edge if `from` is reachable from `to`.
  std::vector<int> stack{to};
  std::vector<bool> seen(stages_.size(), false);
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    if (v == from)
      throw ArgumentError("edge " + stages_[static_cast<std::size_t>(from)].name + " -> " +
                          stages_[static_cast<std::size_t>(to)].name + " would create a cycle");
    if (seen[static_cast<std::size_t>(v)]) continue;
    seen[static_cast<std::size_t>(v)] = true;
    for (int w : out_[static_cast<std::size_t>(v)]) stack.push_back(w);
  }
  outs.push_back(to);
  in_[static_cast<std::size_t>(to)].push_back(from);
}

int CallbackGraph::source() const {
  int found = -1;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (!in_[i].empty()) continue;
    if (found >= 0) throw ArgumentError("graph has more than one source");
    found = static_cast<int>(i);
  }
  if (found < 0) throw ArgumentError("graph has no source");
  return found;
}

int CallbackGraph::sink() const {
  int found = -1;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (!out_[i].empty()) continue;
    if (found >= 0) throw ArgumentError("graph has more than one sink");
    found = static_cast<int>(i);
  }
  if (found < 0) throw ArgumentError("graph has no sink");
  return found;
}

std::vector<int> CallbackGraph::topological_order() const {
  std::vector<int> indeg(stages_.size()), order;
  for (std::size_t i = 0; i < stages_.size(); ++i) indeg[i] = static_cast<int>(in_[i].size());
  std::deque<int> ready;
  for (std::size_t i = 0; i < stages_.size(); ++i)
    if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
  while (!ready.empty()) {
    const int v = ready.front();
    ready.pop_front();
    order.push_back(v);
    for (int w : out_[static_cast<std::size_t>(v)])
      if (--indeg[static_cast<std::size_t>(w)] == 0) ready.push_back(w);
  }
  if (order.size() != stages_.size()) throw ArgumentError("graph contains a cycle");
  return order;
}

void CallbackGraph::validate() const {
  if (stages_.empty()) throw ArgumentError("empty callback graph");
  topological_order();
  source();
  sink();
}

void CallbackGraph::reset() {
  for (auto& s : stages_)
    if (s.reset) s.reset();
}

CallbackGraph build_graph(const detector::DetectorBundle& bundle) {
  bundle.validate();
  auto pre = std::make_shared<detector::Preprocessor>(bundle);
  auto post = std::make_shared<detector::Postprocessor>(bundle);
  auto enc = std::make_shared<std::vector<net::Encoder>>();
  for (const auto& m : bundle.models) enc->emplace_back(m);
  const bool of = bundle.family() == ga::Family::kOptflow;

  CallbackGraph g;
  const int p = g.add_stage({"preprocess",
                             [pre](const std::vector<Payload>& in) -> Payload {
                               auto r = (*pre)(std::any_cast<const imaging::Image&>(in[0]));
                               if (!r) return {};
                               return std::move(*r);
                             },
                             of, [pre] { pre->reset(); }});
  auto encoder_stage = [enc](std::size_t i) {
    return [enc, i](const std::vector<Payload>& in) -> Payload {
      return (*enc)[i].encode(std::any_cast<const std::vector<Tensor>&>(in[0])[i]);
    };
  };
  auto post_fn = [post](const std::vector<Payload>& in) -> Payload {
    std::vector<net::LatentOutput> lat;
    for (const auto& x : in) lat.push_back(std::any_cast<const net::LatentOutput&>(x));
    return std::optional<double>((*post)(lat));
  };
  if (!of) {
    const int e = g.add_stage({"encode", encoder_stage(0), false, {}});
    const int s = g.add_stage({"postprocess", post_fn, true, [post] { post->reset(); }});
    g.connect(p, e);
    g.connect(e, s);
  } else {
    const int eu = g.add_stage({"encode_u", encoder_stage(0), false, {}});
    const int ev = g.add_stage({"encode_v", encoder_stage(1), false, {}});
    const int s = g.add_stage({"postprocess", post_fn, true, [post] { post->reset(); }});
    g.connect(p, eu);
    g.connect(p, ev);
    g.connect(eu, s);
    g.connect(ev, s);
  }
  g.validate();
  return g;
}

CallbackGraph synthetic_graph(const std::vector<double>& stage_ms, bool diamond) {
  if (stage_ms.empty()) throw ArgumentError("synthetic graph needs at least one stage");
  if (diamond && stage_ms.size() < 3) throw ArgumentError("a diamond needs at least three stages");
  for (double ms : stage_ms)
    if (!(ms >= 0.0)) throw ArgumentError("stage delay must be non-negative");
  CallbackGraph g;
  std::vector<int> ids;
  for (std::size_t i = 0; i < stage_ms.size(); ++i) {
    const auto delay = std::chrono::duration<double, std::milli>(stage_ms[i]);
    const bool last = i + 1 == stage_ms.size();
    ids.push_back(g.add_stage({"stage" + std::to_string(i),
                               [delay, last](const std::vector<Payload>& in) -> Payload {
                                 std::this_thread::sleep_for(delay);
                                 const int frame = std::any_cast<int>(in[0]);
                                 if (last) return std::optional<double>(frame);
                                 return frame;
                               },
                               i == 0 || last, {}}));
  }
  if (!diamond) {
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) g.connect(ids[i], ids[i + 1]);
  } else {
    for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
      g.connect(ids.front(), ids[i]);
      g.connect(ids[i], ids.back());
    }
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------- executor

Summary summarize(std::vector<double> v) {
  Summary s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / static_cast<double>(v.size());
  s.min = v.front();
  s.max = v.back();
  s.q1 = q(0.25);
  s.median = q(0.5);
  s.q3 = q(0.75);
  s.p95 = q(0.95);
  s.p99 = q(0.99);
  return s;
}

namespace {

struct Task {
  int node;
  int seq;
  std::vector<Payload> inputs;
};

struct EngineOutput {
  std::vector<std::optional<double>> scores;
  std::vector<double> ingress_s;
  std::vector<double> emit_s;  // NaN when the frame never reached the sink
  std::vector<std::pair<double, double>> backlog;  // (t, frames in flight)
  double wall_s = 0.0;
};

class Engine {
 public:
  Engine(CallbackGraph& g, const ExecutorSpec& exec) : g_(g), exec_(exec) {
    exec.validate();
    g.validate();
    source_ = g.source();
    sink_ = g.sink();
    const auto n = g.size();
    next_seq_.assign(n, 0);
    busy_.assign(n, false);
    joins_.resize(n);
    if (exec.kind == ExecutorKind::kChainMt) {
      queues_.resize(n);
      for (std::size_t i = 0; i < n; ++i) worker_queue_.push_back(static_cast<int>(i));
    } else {
      queues_.resize(1);
      const int w = exec.kind == ExecutorKind::kMonoSt ? 1 : exec.workers;
      worker_queue_.assign(static_cast<std::size_t>(w), 0);
    }
  }

  EngineOutput run(int n_frames, double rate, const std::function<Payload(int)>& frame, double stop_after_s,
                   bool sample_backlog) {
    if (!(rate > 0.0)) throw ArgumentError("source rate must be positive");
    if (n_frames < 0) throw ArgumentError("negative frame count");
    if (!frame) throw ArgumentError("source has no frame function");
    n_frames_ = n_frames;
    out_.scores.assign(static_cast<std::size_t>(n_frames), std::nullopt);
    out_.ingress_s.assign(static_cast<std::size_t>(n_frames), std::nan(""));
    out_.emit_s.assign(static_cast<std::size_t>(n_frames), std::nan(""));
    start_ = Clock::now();
    const auto deadline = stop_after_s > 0.0
                              ? start_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(stop_after_s))
                              : Clock::time_point::max();

    std::vector<std::thread> workers;
    for (int q : worker_queue_) workers.emplace_back([this, q] { work(q); });
    std::thread sampler;
    if (sample_backlog) {
      sampler = std::thread([this] {
        std::unique_lock lk(mu_);
        while (!finished()) {
          out_.backlog.emplace_back(now_s(), static_cast<double>(ingested_ - emitted_));
          cv_.wait_for(lk, std::chrono::milliseconds(10));
        }
      });
    }

    std::exception_ptr source_error;
    try {
      for (int i = 0; i < n_frames; ++i) {
        Payload f = frame(i);
        const auto due =
            start_ + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(i / rate));
        if (due >= deadline) break;
        std::this_thread::sleep_until(due);
        std::lock_guard lk(mu_);
        if (stop_) break;
        out_.ingress_s[static_cast<std::size_t>(i)] = now_s();
        ++ingested_;
        push(Task{source_, i, {std::move(f)}});
        cv_.notify_all();
      }
    } catch (...) {
      source_error = std::current_exception();
    }
    {
      std::unique_lock lk(mu_);
      source_done_ = true;
      if (source_error) stop_ = true;
      cv_.notify_all();
      if (deadline != Clock::time_point::max()) {
        cv_.wait_until(lk, deadline, [this] { return finished(); });
        stop_ = true;
      }
      cv_.notify_all();
    }
    for (auto& t : workers) t.join();
    if (sampler.joinable()) sampler.join();
    out_.wall_s = now_s();
    if (source_error) std::rethrow_exception(source_error);
    if (error_) std::rethrow_exception(error_);
    return std::move(out_);
  }

 private:
  double now_s() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }

  bool finished() const { return stop_ || (source_done_ && emitted_ == ingested_); }

  void push(Task t) {
    const auto q = exec_.kind == ExecutorKind::kChainMt ? static_cast<std::size_t>(t.node) : 0;
    queues_[q].push_back(std::move(t));
  }

  bool runnable(const Task& t) const {
    const auto n = static_cast<std::size_t>(t.node);
    if (!g_.stage(t.node).stateful) return true;
    return !busy_[n] && next_seq_[n] == t.seq;
  }

  void work(int q) {
    std::unique_lock lk(mu_);
    for (;;) {
      if (finished()) return;
      auto& dq = queues_[static_cast<std::size_t>(q)];
      // Oldest frame first; arrival order among callbacks of the same frame.
      auto it = dq.end();
      for (auto c = dq.begin(); c != dq.end(); ++c)
        if ((it == dq.end() || c->seq < it->seq) && runnable(*c)) it = c;
      if (it == dq.end()) {
        cv_.wait(lk);
        continue;
      }
      Task task = std::move(*it);
      dq.erase(it);
      const auto node = static_cast<std::size_t>(task.node);
      const Stage& st = g_.stage(task.node);
      if (st.stateful) busy_[node] = true;
      lk.unlock();

      Payload result;
      std::exception_ptr err;
      try {
        const bool skip = std::any_of(task.inputs.begin(), task.inputs.end(), [](const Payload& p) { return !p.has_value(); });
        if (!skip) result = st.fn(task.inputs);
      } catch (...) {
        err = std::current_exception();
      }

      lk.lock();
      if (st.stateful) {
        busy_[node] = false;
        ++next_seq_[node];
      }
      if (err) {
        if (!error_) error_ = err;
        stop_ = true;
        cv_.notify_all();
        return;
      }
      if (task.node == sink_) {
        const auto i = static_cast<std::size_t>(task.seq);
        if (result.has_value()) out_.scores[i] = std::any_cast<std::optional<double>>(result);
        out_.emit_s[i] = now_s();
        ++emitted_;
      } else {
        for (int succ : g_.outputs(task.node)) deliver(succ, task.seq, task.node, result);
      }
      cv_.notify_all();
    }
  }

  void deliver(int succ, int seq, int from, const Payload& value) {
    const auto& ins = g_.inputs(succ);
    if (ins.size() == 1) {
      push(Task{succ, seq, {value}});
      return;
    }
    auto& j = joins_[static_cast<std::size_t>(succ)][seq];
    if (j.inputs.empty()) j.inputs.resize(ins.size());
    j.inputs[static_cast<std::size_t>(std::find(ins.begin(), ins.end(), from) - ins.begin())] = value;
    if (++j.arrived == ins.size()) {
      push(Task{succ, seq, std::move(j.inputs)});
      joins_[static_cast<std::size_t>(succ)].erase(seq);
    }
  }

  struct Join {
    std::vector<Payload> inputs;
    std::size_t arrived = 0;
  };

  CallbackGraph& g_;
  ExecutorSpec exec_;
  int source_ = 0, sink_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::deque<Task>> queues_;
  std::vector<int> worker_queue_;
  std::vector<int> next_seq_;
  std::vector<bool> busy_;
  std::vector<std::map<int, Join>> joins_;
  int n_frames_ = 0;
  long ingested_ = 0, emitted_ = 0;
  bool source_done_ = false, stop_ = false;
  std::exception_ptr error_;
  Clock::time_point start_;
  EngineOutput out_;
};

}  // namespace

RunResult run_stream(CallbackGraph& graph, const ExecutorSpec& exec, const Source& source, int warmup) {
  if (warmup < 0) throw ArgumentError("warmup must be >= 0");
  graph.reset();
  Engine eng(graph, exec);
  auto o = eng.run(source.n_frames, source.rate_fps, source.frame, 0.0, false);
  graph.reset();
  RunResult r;
  r.scores = std::move(o.scores);
  r.emit_s = o.emit_s;
  r.wall_s = o.wall_s;
  r.timing.cores = std::thread::hardware_concurrency();
  r.timing.warmup_discarded = std::min(warmup, source.n_frames);
  for (int i = warmup; i < source.n_frames; ++i) {
    const auto k = static_cast<std::size_t>(i);
    r.timing.response_ms.push_back((o.emit_s[k] - o.ingress_s[k]) * 1000.0);
  }
  r.timing.count = r.timing.response_ms.size();
  r.timing.summary = summarize(r.timing.response_ms);
  return r;
}

ThroughputReport throughput_sweep(CallbackGraph& graph, const ExecutorSpec& exec,
                                  const std::function<Payload(int)>& frame, const std::vector<double>& rates,
                                  double duration_s) {
  if (rates.empty()) throw ArgumentError("empty rate list");
  if (!(duration_s > 0.0)) throw ArgumentError("duration must be positive");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] > 0.0)) throw ArgumentError("rates must be positive");
    if (i > 0 && rates[i] <= rates[i - 1]) throw ArgumentError("rates must be ascending");
  }
  ThroughputReport rep;
  rep.cores = std::thread::hardware_concurrency();
  for (double rate : rates) {
    graph.reset();
    Engine eng(graph, exec);
    const int n = static_cast<int>(std::ceil(rate * duration_s)) + 1;
    auto o = eng.run(n, rate, frame, duration_s, true);
    const double lo = duration_s / 2.0;
    std::size_t outputs = 0;
    for (double t : o.emit_s)
      if (t >= lo && t <= duration_s) ++outputs;
    RatePoint p;
    p.input_fps = rate;
    p.sustained_fps = static_cast<double>(outputs) / (duration_s - lo);
    double st = 0, sb = 0, stt = 0, stb = 0, m = 0;
    for (const auto& [t, b] : o.backlog) {
      if (t < lo || t > duration_s) continue;
      st += t;
      sb += b;
      stt += t * t;
      stb += t * b;
      m += 1;
    }
    const double den = m * stt - st * st;
    p.backlog_slope = m >= 2 && den > 0 ? (m * stb - st * sb) / den : 0.0;
    const double window = duration_s - lo;
    p.sustained = p.sustained_fps >= 0.95 * rate && p.backlog_slope * window < std::max(2.0, 0.05 * rate * window);
    rep.points.push_back(p);
  }
  graph.reset();
  return rep;
}

std::function<Payload(int)> dataset_frames(const data::Dataset& ds) {
  auto frames = std::make_shared<std::vector<imaging::Image>>();
  for (const auto& seq : ds.sequences(data::Split::kTest))
    for (const auto* s : seq) frames->push_back(s->image);
  if (frames->empty()) throw ArgumentError("dataset has no test frames");
  return [frames](int i) -> Payload { return (*frames)[static_cast<std::size_t>(i) % frames->size()]; };
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os << "family,genome,precision,executor,input_size,mean_ms,min,q1,median,q3,p95,p99,max,auroc,"
        "auroc_delta_vs_baseline";
  for (double r : sweep_rates) os << ",sustained_fps_at_" << r;
  os << ",status\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.family << ',' << r.genome << ',' << r.precision << ',' << r.executor << ',' << r.input_size;
    if (r.failed) {
      for (int i = 0; i < 10; ++i) os << ',';
      for (std::size_t i = 0; i < sweep_rates.size(); ++i) os << ',';
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << ",failed: " << msg << '\n';
      continue;
    }
    const auto& t = r.timing;
    for (double v : {t.mean, t.min, t.q1, t.median, t.q3, t.p95, t.p99, t.max, r.auroc, r.auroc_delta}) os << ',' << num(v);
    for (double v : r.sustained_fps) os << ',' << num(v);
    os << ",ok\n";
  }
  return os.str();
}

BenchReport bench_matrix(const std::vector<detector::DetectorBundle>& bundles, const data::Dataset& ds,
                         const BenchConfig& cfg) {
  BenchReport rep;
  rep.sweep_rates = cfg.sweep_rates;
  const auto frames = dataset_frames(ds);
  for (const auto& base : bundles) {
    const std::string size = std::to_string(base.genome.height) + "x" + std::to_string(base.genome.width);
    double baseline = std::nan("");
    for (DType prec : cfg.precisions) {
      std::optional<detector::DetectorBundle> pb;
      std::string prec_error;
      double fit = 0.0;
      try {
        pb = detector::convert_bundle(base, prec, ds);
        fit = detector::evaluate(*pb, ds).fitness;
        if (prec == DType::kF32) baseline = fit;
      } catch (const std::exception& e) {
        prec_error = e.what();
      }
      if (std::isnan(baseline) && prec_error.empty() && prec != DType::kF32) {
        try {
          baseline = detector::evaluate(base, ds).fitness;
        } catch (const std::exception& e) {
          prec_error = std::string("baseline: ") + e.what();
        }
      }
      for (const auto& ex : cfg.executors) {
        BenchRow row;
        row.family = ga::to_string(base.genome.family);
        row.genome = base.genome.key();
        row.precision = to_string(prec);
        row.executor = to_string(ex.kind);
        row.input_size = size;
        try {
          if (!pb) throw Error(prec_error);
          auto g = build_graph(*pb);
          const auto run = run_stream(g, ex, Source{cfg.frames, cfg.rate_fps, frames}, cfg.warmup);
          row.timing = run.timing.summary;
          row.auroc = fit;
          row.auroc_delta = fit - baseline;
          if (!cfg.sweep_rates.empty()) {
            const auto tp = throughput_sweep(g, ex, frames, cfg.sweep_rates, cfg.sweep_duration_s);
            for (const auto& p : tp.points) row.sustained_fps.push_back(p.sustained_fps);
          }
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
        rep.rows.push_back(std::move(row));
      }
    }
  }
  return rep;
}

}  // namespace oodkit::pipe
