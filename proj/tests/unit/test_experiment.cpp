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

#include "oodkit/error.hpp"
#include "oodkit/experiment.hpp"

using namespace oodkit;
using namespace oodkit::exp;

namespace {

pipe::BenchReport one_cell(double mean_ms, double fps_at_20) {
  pipe::BenchReport rep;
  rep.sweep_rates = {20.0};
  pipe::BenchRow r;
  r.family = "bvae";
  r.genome = "bvae:16x16:bilinear:gray";
  r.precision = "f32";
  r.executor = "MONO_ST";
  r.input_size = "16x16";
  r.timing.mean = mean_ms;
  r.auroc = 0.9;
  r.sustained_fps = {fps_at_20};
  rep.rows.push_back(r);
  return rep;
}

}  // namespace

TEST_CASE("experiment config round trips and fills defaults") {
  const auto c = config_from_json(R"({"family": "optflow", "seed": 9, "train": {"epochs": 2}})");
  CHECK(c.family == ga::Family::kOptflow);
  CHECK(c.genome == "optflow:48x64:area:d6");
  CHECK(c.ga.generations == 100);
  CHECK(c.dataset.seed == 9);
  CHECK(c.train.train.epochs == 2);
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("experiment config rejects overlaps and bad splits") {
  CHECK_THROWS_AS(config_from_json(R"({"dataset": {"factors": [
      {"factor": "rain", "id": [0, 0.005], "ood": [0.004, 0.01]}]}})"),
                  ArgumentError);
  CHECK_THROWS_AS(config_from_json(R"({"dataset": {"episodes_per_scene": 3}})"), ArgumentError);
  CHECK_THROWS_AS(config_from_json(R"({"genome": "optflow:48x64:area:d6"})"), ArgumentError);
  CHECK_THROWS_AS(config_from_json("{not json"), ArgumentError);
}

TEST_CASE("requirements flip the verdict") {
  const std::vector<EvalRecord> evals{{"f32", "g", 0.9, {"rain"}, {0.9}}};
  const std::vector<std::string> p{"f32"}, e{"MONO_ST"};
  Requirements req{0.85, 10.0, 20.0};
  auto v = judge(req, evals, one_cell(5.0, 20.0), p, e);
  CHECK(v.verdict == "pass");
  CHECK(v.exit_code() == 0);
  req.min_auroc = 0.95;
  v = judge(req, evals, one_cell(5.0, 20.0), p, e);
  CHECK(v.verdict == "fail");
  CHECK(v.exit_code() == 1);
  req.min_auroc = 0.85;
  req.max_response_ms = 4.0;
  CHECK(judge(req, evals, one_cell(5.0, 20.0), p, e).verdict == "fail");
  req.max_response_ms = 10.0;
  CHECK(judge(req, evals, one_cell(5.0, 15.0), p, e).verdict == "fail");
  req.min_throughput_fps = 25.0;
  CHECK(judge(req, evals, one_cell(5.0, 20.0), p, e).verdict == "fail");
}

TEST_CASE("missing evaluations and cells give an incomplete verdict") {
  const std::vector<EvalRecord> evals{{"f32", "g", 0.9, {"rain"}, {0.9}}};
  const auto v = judge({}, evals, one_cell(5.0, 20.0), {"f32", "qint8"}, {"MONO_ST", "CHAIN_MT"});
  CHECK(v.verdict == "incomplete");
  CHECK(v.gaps.size() == 4);
  CHECK(judge({}, {}, {}, {"f32"}, {"MONO_ST"}).verdict == "incomplete");
}

TEST_CASE("verdict, evaluation and bench CSV round trip") {
  const std::vector<EvalRecord> evals{{"f32", "g", 0.9, {"rain", "snow"}, {0.9, 0.92}}};
  const auto v = judge({}, evals, one_cell(5.0, 20.0), {"f32"}, {"MONO_ST"});
  CHECK(verdict_from_json(verdict_to_json(v)) == v);
  const auto e = eval_from_json(eval_to_json(evals[0]));
  CHECK(e.aurocs == evals[0].aurocs);
  CHECK(e.partitions == evals[0].partitions);
  auto rep = one_cell(5.0, 20.0);
  pipe::BenchRow bad = rep.rows[0];
  bad.failed = true;
  bad.error = "conversion failed";
  rep.rows.push_back(bad);
  const auto back = bench_from_csv(rep.to_csv());
  REQUIRE(back.rows.size() == 2);
  CHECK(back.sweep_rates == rep.sweep_rates);
  CHECK(back.rows[0].timing.mean == 5.0);
  CHECK(back.rows[0].sustained_fps == std::vector<double>{20.0});
  CHECK(back.rows[1].failed);
  CHECK(back.rows[1].error == "conversion failed");
}
