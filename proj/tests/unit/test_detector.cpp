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

#include "oodkit/detector.hpp"
#include "oodkit/error.hpp"

using namespace oodkit;
using namespace oodkit::detector;

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

TrainSettings quick() {
  TrainSettings s;
  s.train.epochs = 2;
  s.train.batch = 8;
  s.n_latent = 4;
  s.of_n_latent = 4;
  s.post.window = 4;
  return s;
}

}  // namespace

TEST_CASE("BVAE preprocessing resizes and converts color") {
  imaging::Image img(40, 30, 3, 200);
  auto g = ga::Genome::parse("bvae:16x16:nearest:gray");
  auto out = preprocess_frame(img, g, {});
  CHECK(out.width() == 16);
  CHECK(out.channels() == 1);
  auto t = image_to_tensor(out);
  CHECK(t.shape() == Shape{1, 16, 16});
  CHECK(t.f32_data()[0] == doctest::Approx(out.at(0, 0) / 255.0));
  g.color = ga::ColorSpace::kRgb;
  CHECK(image_to_tensor(preprocess_frame(img, g, {})).shape() == Shape{3, 16, 16});
}

TEST_CASE("flow history warms up for depth frames") {
  OptflowSettings st;
  FlowHistory h(3, st);
  imaging::SceneParams sp;
  sp.width = 32;
  sp.height = 24;
  int produced = 0;
  for (int f = 0; f < 6; ++f) {
    auto r = h.push(imaging::to_grayscale(imaging::synth_scene(0, f, sp)));
    CHECK(r.has_value() == (f >= 3));
    if (r) {
      CHECK(r->first.shape() == Shape{3, 24, 32});
      ++produced;
    }
  }
  CHECK(produced == 3);
  h.reset();
  CHECK_FALSE(h.push(imaging::to_grayscale(imaging::synth_scene(0, 0, sp))).has_value());
}

TEST_CASE("BVAE bundle trains, evaluates and persists") {
  const auto ds = data::generate_dataset(tiny_data(data::bvae_dataset_config()));
  const auto g = ga::Genome::parse("bvae:8x8:bilinear:gray");
  const auto b = build_detector(g, ds, quick());
  REQUIRE(b.models.size() == 1);
  CHECK(b.calibrations[0].scores.size() == ds.select(data::Split::kCalib).size());

  const auto traces = trace_pvalues(b, ds);
  REQUIRE(traces.size() == 2);
  CHECK(traces[0].episodes.size() == 4);
  for (const auto& ep : traces[0].episodes) {
    CHECK(ep.pvalues.size() == 8);
    for (const auto& p : ep.pvalues) {
      CHECK(p[0] > 0.0);
      CHECK(p[0] <= 1.0);
    }
  }
  const auto ev = score_traces(traces, b.post);
  CHECK(ev.aurocs.size() == 2);
  for (double a : ev.aurocs) CHECK((a >= 0.0 && a <= 1.0));

  // The streaming path must reproduce the cached-trace scores.
  StreamDetector det(b);
  Postprocessor post(b);
  const auto seqs = ds.sequences(data::Split::kTest, "rain");
  for (std::size_t e = 0; e < seqs.size(); ++e) {
    det.reset();
    post.reset();
    for (std::size_t f = 0; f < seqs[e].size(); ++f) {
      const auto s = det.process(seqs[e][f]->image);
      REQUIRE(s.has_value());
      CHECK(*s == doctest::Approx(post.score_pvalues(traces[1].episodes[e].pvalues[f])).epsilon(1e-12));
    }
  }

  const auto sweep = sweep_delta(traces, b.post, {0.5, 0.0, 2.0});
  CHECK(sweep.deltas == std::vector<double>{0.0, 0.5, 2.0});
  for (const auto& r : sweep.results) CHECK(r.fitness <= sweep.best_fitness);

  const auto dir = std::filesystem::temp_directory_path() / "oodkit_bundle_rt";
  std::filesystem::remove_all(dir);
  save_bundle(b, dir.string());
  const auto back = load_bundle(dir.string());
  CHECK(back.models[0] == b.models[0]);
  CHECK(back.calibrations[0].scores == b.calibrations[0].scores);
  CHECK(back.genome == b.genome);
  CHECK(back.post.window == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("precision conversion recalibrates and mismatches are caught") {
  const auto ds = data::generate_dataset(tiny_data(data::bvae_dataset_config()));
  const auto b = build_detector(ga::Genome::parse("bvae:8x8:nearest:rgb"), ds, quick());
  const auto q = convert_bundle(b, DType::kQInt8, ds);
  CHECK(q.precision() == DType::kQInt8);
  CHECK(q.calibrations[0].precision == DType::kQInt8);
  const auto h = convert_bundle(b, DType::kF16, ds);
  CHECK(h.calibrations[0].precision == DType::kF16);
  auto bad = q;
  bad.calibrations = b.calibrations;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  CHECK_THROWS_AS(convert_bundle(q, DType::kF16, ds), ArgumentError);
}

TEST_CASE("optical-flow bundle has u and v encoders") {
  const auto ds = data::generate_dataset(tiny_data(data::optflow_dataset_config()));
  const auto g = ga::Genome::parse("optflow:24x32:bilinear:d2");
  const auto b = build_detector(g, ds, quick());
  REQUIRE(b.models.size() == 2);
  CHECK(b.models[0].spec.input == net::Geometry{2, 24, 32});
  CHECK(b.models[1].metadata.at("component") == "v");
  // Each calib chunk of 4 frames yields 4 - depth flow stacks.
  CHECK(b.calibrations[0].scores.size() == ds.sequences(data::Split::kCalib).size() * 2);
  const auto traces = trace_pvalues(b, ds);
  for (const auto& pt : traces)
    for (const auto& ep : pt.episodes) {
      CHECK(ep.pvalues.size() == 8 - 2);
      CHECK(ep.pvalues[0].size() == 2);
    }
  StreamDetector det(b);
  const auto seq = ds.sequences(data::Split::kTest, "snow").front();
  CHECK_FALSE(det.process(seq[0]->image).has_value());
  CHECK_FALSE(det.process(seq[1]->image).has_value());
  CHECK(det.process(seq[2]->image).has_value());
}

TEST_CASE("top-k KL dims are selected and calibrated on") {
  const auto ds = data::generate_dataset(tiny_data(data::bvae_dataset_config()));
  auto st = quick();
  st.kl_top_k = 2;
  const auto b = build_detector(ga::Genome::parse("bvae:8x8:bilinear:gray"), ds, st);
  REQUIRE(b.post.kl_dims.size() == 2);
  CHECK(b.post.kl_dims[0] < b.post.kl_dims[1]);
  CHECK(b.post.kl_dims[1] < 4);
  const auto plain = build_detector(ga::Genome::parse("bvae:8x8:bilinear:gray"), ds, quick());
  CHECK(plain.post.kl_dims.empty());
  CHECK(plain.models[0] == b.models[0]);
  CHECK(plain.calibrations[0].scores != b.calibrations[0].scores);
  const auto ev = evaluate(b, ds);
  CHECK(ev.fitness >= 0.0);
}
