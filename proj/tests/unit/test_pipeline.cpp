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

#include <chrono>
#include <mutex>
#include <thread>

#include "oodkit/error.hpp"
#include "oodkit/pipeline.hpp"
#include "oodkit/random.hpp"

using namespace oodkit;
using namespace oodkit::pipe;

namespace {

data::DatasetConfig tiny_data(data::DatasetConfig c) {
  c.scene.width = 32;
  c.scene.height = 24;
  c.scene.n_scenes = 2;
  c.runs = 2;
  c.frames_per_run = 24;
  c.chunk_len = 4;
  c.episode_len = 8;
  c.episodes_per_scene = 2;
  c.seed = 5;
  return c;
}

detector::TrainSettings quick() {
  detector::TrainSettings s;
  s.train.epochs = 1;
  s.train.batch = 8;
  s.n_latent = 4;
  s.of_n_latent = 4;
  s.post.window = 4;
  return s;
}

const std::vector<ExecutorSpec> kAll{{ExecutorKind::kChainMt, 2}, {ExecutorKind::kMonoSt, 2},
                                     {ExecutorKind::kMonoMt, 3}};

Stage noop(const std::string& name) {
  return {name, [](const std::vector<Payload>& in) { return in[0]; }, false, {}};
}

}  // namespace

TEST_CASE("graph structure checks") {
  CallbackGraph g;
  const int a = g.add_stage(noop("a")), b = g.add_stage(noop("b")), c = g.add_stage(noop("c"));
  g.connect(a, b);
  g.connect(b, c);
  CHECK_THROWS_AS(g.connect(c, a), ArgumentError);
  CHECK_THROWS_AS(g.connect(a, b), ArgumentError);
  CHECK_THROWS_AS(g.connect(a, 7), ArgumentError);
  CHECK(g.topological_order() == std::vector<int>{a, b, c});
  CHECK(g.source() == a);
  CHECK(g.sink() == c);
  CallbackGraph two;
  two.add_stage(noop("x"));
  two.add_stage(noop("y"));
  CHECK_THROWS_AS(two.validate(), ArgumentError);
  CHECK_THROWS_AS(ExecutorSpec({ExecutorKind::kMonoMt, 1}).validate(), ArgumentError);
  CHECK(executor_kind_from_string("chain-mt") == ExecutorKind::kChainMt);
}

TEST_CASE("summary quantiles interpolate linearly") {
  const auto s = summarize({4, 1, 3, 2, 5});
  CHECK(s.min == 1);
  CHECK(s.max == 5);
  CHECK(s.median == 3);
  CHECK(s.q1 == 2);
  CHECK(s.mean == 3);
  CHECK(s.p95 == doctest::Approx(4.8));
}

TEST_CASE("stateful stages see frames in source order under every executor") {
  for (const auto& ex : kAll) {
    std::vector<int> order;
    std::mutex m;
    CallbackGraph g;
    const int a = g.add_stage({"jitter",
                               [](const std::vector<Payload>& in) -> Payload {
                                 const int f = std::any_cast<int>(in[0]);
                                 std::this_thread::sleep_for(std::chrono::microseconds((f * 7919) % 1500));
                                 return f;
                               },
                               false, {}});
    const int b = g.add_stage({"record",
                               [&](const std::vector<Payload>& in) -> Payload {
                                 std::lock_guard lk(m);
                                 order.push_back(std::any_cast<int>(in[0]));
                                 return std::optional<double>(order.size());
                               },
                               true, {}});
    g.connect(a, b);
    const auto r = run_stream(g, ex, {60, 5000.0, [](int i) -> Payload { return i; }}, 0);
    REQUIRE(order.size() == 60);
    for (int i = 0; i < 60; ++i) CHECK(order[static_cast<std::size_t>(i)] == i);
    CHECK(r.scores.back() == 60.0);
  }
}

TEST_CASE("detector graphs give identical scores across executors") {
  for (auto cfg : {data::bvae_dataset_config(), data::optflow_dataset_config()}) {
    const bool of = cfg.factors[0].factor != data::Factor::kBrightness;
    const auto ds = data::generate_dataset(tiny_data(cfg));
    const auto g = ga::Genome::parse(of ? "optflow:24x32:bilinear:d2" : "bvae:8x8:bilinear:rgb");
    const auto bundle = detector::build_detector(g, ds, quick());
    auto graph = build_graph(bundle);
    CHECK(graph.size() == (of ? 4u : 3u));
    CHECK(graph.outputs(graph.source()).size() == (of ? 2u : 1u));
    CHECK(graph.stage(graph.source()).stateful == of);
    CHECK(graph.stage(graph.sink()).stateful);

    const auto frames = dataset_frames(ds);
    detector::StreamDetector ref(bundle);
    std::vector<std::optional<double>> expected;
    for (int i = 0; i < 200; ++i) expected.push_back(ref.process(std::any_cast<imaging::Image>(frames(i))));
    for (const auto& ex : kAll) {
      const auto r = run_stream(graph, ex, {200, 2000.0, frames});
      REQUIRE(r.scores.size() == 200);
      for (std::size_t i = 0; i < 200; ++i) {
        REQUIRE(r.scores[i].has_value() == expected[i].has_value());
        if (expected[i]) CHECK(*r.scores[i] == *expected[i]);
      }
      CHECK(r.timing.count == 180);
      CHECK(r.timing.summary.min > 0.0);
    }
  }
}

TEST_CASE("synthetic delays: serial latency and pipelined throughput") {
  auto g = synthetic_graph({5, 5, 5});
  auto ident = [](int i) -> Payload { return i; };
  const auto st = run_stream(g, {ExecutorKind::kMonoSt, 2}, {40, 20.0, ident}, 5);
  CHECK(st.timing.summary.mean == doctest::Approx(15.0).epsilon(0.2));
  CHECK(st.scores[7] == 7.0);

  const auto chain = throughput_sweep(g, {ExecutorKind::kChainMt, 2}, ident, {100.0, 400.0}, 1.0);
  CHECK(chain.points[0].sustained_fps == doctest::Approx(100.0).epsilon(0.1));
  CHECK(chain.points[0].sustained);
  CHECK(chain.points[1].sustained_fps == doctest::Approx(200.0).epsilon(0.2));
  CHECK_FALSE(chain.points[1].sustained);
  CHECK(chain.points[1].backlog_slope > 0.0);

  const auto mono = throughput_sweep(g, {ExecutorKind::kMonoSt, 2}, ident, {100.0}, 1.0);
  CHECK(mono.points[0].sustained_fps == doctest::Approx(1000.0 / 15).epsilon(0.2));
  CHECK_THROWS_AS(throughput_sweep(g, {ExecutorKind::kMonoSt, 2}, ident, {10.0, 5.0}, 1.0), ArgumentError);
}

TEST_CASE("diamond synthetic graph overlaps its branches under MONO_MT") {
  auto g = synthetic_graph({2, 10, 10, 2}, true);
  CHECK(g.outputs(g.source()).size() == 2);
  auto ident = [](int i) -> Payload { return i; };
  const auto mt = run_stream(g, {ExecutorKind::kMonoMt, 2}, {30, 20.0, ident}, 5);
  const auto st = run_stream(g, {ExecutorKind::kMonoSt, 2}, {30, 20.0, ident}, 5);
  CHECK(mt.timing.summary.mean < st.timing.summary.mean);
  CHECK(st.timing.summary.mean == doctest::Approx(24.0).epsilon(0.2));
  CHECK(mt.scores == st.scores);
}

TEST_CASE("stage errors surface from run_stream") {
  CallbackGraph g;
  g.add_stage({"boom", [](const std::vector<Payload>&) -> Payload { throw Error("stage failed"); }, false, {}});
  CHECK_THROWS_AS(run_stream(g, {ExecutorKind::kChainMt, 2}, {5, 100.0, [](int i) -> Payload { return i; }}), Error);
}

TEST_CASE("bench matrix covers every cell") {
  const auto ds = data::generate_dataset(tiny_data(data::bvae_dataset_config()));
  const auto b = detector::build_detector(ga::Genome::parse("bvae:8x8:bilinear:gray"), ds, quick());
  BenchConfig cfg;
  cfg.frames = 40;
  cfg.warmup = 5;
  cfg.rate_fps = 500;
  const auto rep = bench_matrix({b}, ds, cfg);
  CHECK(rep.rows.size() == 1 * 3 * 3);
  for (const auto& r : rep.rows) {
    CHECK_FALSE(r.failed);
    if (r.precision == "f32") CHECK(r.auroc_delta == 0.0);
  }
  const auto csv = rep.to_csv();
  CHECK(csv.rfind("family,genome,precision,executor,input_size,mean_ms", 0) == 0);
}
