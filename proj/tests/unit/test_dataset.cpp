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

#include "oodkit/dataset.hpp"
#include "oodkit/error.hpp"
#include "oodkit/genome.hpp"

using namespace oodkit;
using namespace oodkit::data;

namespace {

DatasetConfig small_config() {
  auto c = bvae_dataset_config();
  c.scene.width = 32;
  c.scene.height = 24;
  c.scene.n_scenes = 2;
  c.runs = 3;
  c.frames_per_run = 36;
  c.chunk_len = 6;
  c.episode_len = 8;
  c.episodes_per_scene = 4;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("train and calib frames split exactly two to one") {
  const auto ds = generate_dataset(small_config());
  const auto train = ds.select(Split::kTrain).size();
  const auto calib = ds.select(Split::kCalib).size();
  CHECK(train == 2 * calib);
  CHECK(train + calib == 2u * 2 * 36);
}

TEST_CASE("test partitions are half ID and half OOD") {
  const auto ds = generate_dataset(small_config());
  CHECK(ds.partitions() == std::vector<std::string>{"brightness", "rain"});
  for (const auto& part : ds.partitions()) {
    std::size_t n_ood = 0, n_id = 0;
    for (const auto* s : ds.select(Split::kTest, part)) (s->ood ? n_ood : n_id)++;
    CHECK(n_ood == n_id);
    CHECK(n_ood == 2u * 2 * 8);
  }
}

TEST_CASE("factor values stay inside their ranges") {
  const auto cfg = small_config();
  const auto ds = generate_dataset(cfg);
  const auto& bright = cfg.factors[0];
  const auto& rain = cfg.factors[1];
  for (const auto& s : ds.samples) {
    const bool ood_rain = s.ood && s.partition == "rain";
    const bool ood_bright = s.ood && s.partition == "brightness";
    if (ood_rain) {
      CHECK(s.factors.rain_strength >= 0.004);
      CHECK(s.factors.rain_strength <= 0.01);
    } else {
      CHECK(rain.id.contains(s.factors.rain_strength));
    }
    if (ood_bright) {
      CHECK(bright.in_ood(s.factors.brightness));
    } else {
      CHECK(bright.id.contains(s.factors.brightness));
    }
    CHECK(s.factors.snow_strength == 0.0);
  }
}

TEST_CASE("test episodes hold factors constant and are contiguous") {
  const auto ds = generate_dataset(small_config());
  for (const auto& seq : ds.sequences(Split::kTest)) {
    REQUIRE(seq.size() == 8);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      CHECK(seq[i]->position == int(i));
      CHECK(seq[i]->frame_index == seq[0]->frame_index + std::int64_t(i));
      CHECK(seq[i]->factors.rain_strength == seq[0]->factors.rain_strength);
      CHECK(seq[i]->factors.brightness == seq[0]->factors.brightness);
      CHECK(seq[i]->ood == seq[0]->ood);
    }
  }
}

TEST_CASE("both signs of OOD brightness occur") {
  auto cfg = small_config();
  cfg.episodes_per_scene = 4;
  cfg.scene.n_scenes = 5;
  const auto ds = generate_dataset(cfg);
  std::set<int> signs;
  for (const auto* s : ds.select(Split::kTest, "brightness"))
    if (s->ood) signs.insert(s->factors.brightness > 0 ? 1 : -1);
  CHECK(signs.size() == 2);
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_dataset(small_config());
  const auto b = generate_dataset(small_config());
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].image == b.samples[i].image);
  auto cfg = small_config();
  cfg.seed = 12;
  const auto c = generate_dataset(cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) differs |= !(a.samples[i].image == c.samples[i].image);
  CHECK(differs);
}

TEST_CASE("invalid configurations are rejected") {
  auto c = small_config();
  c.frames_per_run = 40;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = small_config();
  c.episodes_per_scene = 3;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = small_config();
  c.factors[1].ood = {0.002, 0.01};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = small_config();
  c.factors[0].ood = {0.4, 0.9};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = small_config();
  c.factors[1].ood = {0.004, 0.02};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK_NOTHROW(optflow_dataset_config().validate());
}

TEST_CASE("dataset round trips through disk") {
  auto cfg = small_config();
  cfg.runs = 2;
  const auto ds = generate_dataset(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "oodkit_ds_rt";
  std::filesystem::remove_all(dir);
  write_dataset(ds, dir.string());
  const auto back = read_dataset(dir.string());
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(config_to_json(back.config) == config_to_json(ds.config));
  std::map<std::pair<int, int>, const Sample*> idx;
  for (const auto& s : back.samples) idx[{s.sequence, s.position}] = &s;
  for (const auto& s : ds.samples) {
    const auto* t = idx.at({s.sequence, s.position});
    CHECK(t->image == s.image);
    CHECK(t->split == s.split);
    CHECK(t->ood == s.ood);
    CHECK(t->partition == s.partition);
    CHECK(t->factors.rain_strength == s.factors.rain_strength);
    CHECK(t->factors.brightness == s.factors.brightness);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("genome keys round trip") {
  using namespace oodkit::ga;
  for (auto fam : {Family::kBvae, Family::kOptflow})
    for (auto b : {Bucket::kSmall, Bucket::kMedium, Bucket::kLarge}) {
      const auto a = default_alleles(fam, b);
      const auto all = enumerate(fam, a);
      CHECK(all.size() == a.space_size());
      for (std::size_t i = 0; i < all.size(); i += 7) {
        CHECK(Genome::parse(all[i].key()) == all[i]);
        CHECK(a.contains(all[i]));
      }
    }
  CHECK(default_alleles(Family::kBvae, Bucket::kSmall).space_size() == 74u * 3 * 2);
  CHECK(default_alleles(Family::kOptflow, Bucket::kSmall).space_size() == 2u * 4 * 5);
  CHECK(Genome::parse("optflow:48x64:area:d6").width == 64);
  CHECK_THROWS_AS(Genome::parse("bvae:32x30:bilinear:gray"), ArgumentError);
  CHECK_THROWS_AS(Genome::parse("bvae:32x32:area:gray"), ArgumentError);
  CHECK_THROWS_AS(Genome::parse("optflow:48x64:area:d7"), ArgumentError);
  CHECK_THROWS_AS(Genome::parse("bvae:32:bilinear"), ArgumentError);
  CHECK(bucket_from_string("M") == Bucket::kMedium);
}
