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

#include "oodkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "oodkit/error.hpp"
#include "oodkit/random.hpp"

namespace oodkit::data {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kCalib: return "calib";
    case Split::kTest: return "test";
  }
  return "?";
}

const char* to_string(Factor f) {
  switch (f) {
    case Factor::kRain: return "rain";
    case Factor::kSnow: return "snow";
    case Factor::kBrightness: return "brightness";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  for (auto v : {Split::kTrain, Split::kCalib, Split::kTest}) {
    if (s == to_string(v)) return v;
  }
  throw ArgumentError("unknown split '" + s + "'");
}

Factor factor_from_string(const std::string& s) {
  for (auto v : {Factor::kRain, Factor::kSnow, Factor::kBrightness}) {
    if (s == to_string(v)) return v;
  }
  throw ArgumentError("unknown factor '" + s + "'");
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& m) { throw ArgumentError("dataset config: " + m); };
  if (scene.width < 8 || scene.height < 8 || scene.n_scenes < 1) fail("scene geometry too small");
  if (runs < 2) fail("need at least one training run and one test run");
  if (chunk_len < 1 || frames_per_run % (3 * chunk_len) != 0) {
    fail("frames_per_run must be a multiple of 3 * chunk_len for an exact 2/1 train/calib split");
  }
  if (episode_len < 1) fail("episode_len must be positive");
  if (episodes_per_scene < 2 || episodes_per_scene % 2 != 0) {
    fail("episodes_per_scene must be even for a 1/1 ID/OOD test split");
  }
  if (static_cast<long>(episodes_per_scene) * episode_len > frames_per_run) fail("test episodes exceed the test run");
  if (factors.empty()) fail("at least one OOD factor is required");
  std::set<Factor> seen;
  for (const auto& f : factors) {
    const std::string name = to_string(f.factor);
    if (!seen.insert(f.factor).second) fail("factor '" + name + "' listed twice");
    if (f.id.lo > f.id.hi || f.ood.lo > f.ood.hi) fail("inverted range for '" + name + "'");
    const double dom_lo = f.factor == Factor::kBrightness ? -1.0 : 0.0;
    const double dom_hi = f.factor == Factor::kBrightness ? 1.0 : 0.01;
    const Range ood_span = f.symmetric ? Range{-f.ood.hi, f.ood.hi} : f.ood;
    if (f.id.lo < dom_lo || f.id.hi > dom_hi || ood_span.lo < dom_lo || ood_span.hi > dom_hi) {
      fail("range of '" + name + "' outside its domain");
    }
    if (f.symmetric) {
      if (f.ood.lo < 0.0) fail("symmetric OOD range of '" + name + "' must be a magnitude");
      if (f.ood.lo <= std::max(std::abs(f.id.lo), std::abs(f.id.hi))) {
        fail("ID and OOD ranges of '" + name + "' overlap");
      }
    } else if (f.id.overlaps(f.ood)) {
      fail("ID and OOD ranges of '" + name + "' overlap");
    }
  }
}

DatasetConfig bvae_dataset_config() {
  DatasetConfig c;
  c.factors = {{Factor::kBrightness, {-0.5, 0.5}, {0.6, 0.9}, true}, {Factor::kRain, {0.0, 0.003}, {0.004, 0.01}, false}};
  return c;
}

DatasetConfig optflow_dataset_config() {
  DatasetConfig c;
  c.frames_per_run = 72;
  c.episode_len = 24;
  c.factors = {{Factor::kRain, {0.0, 0.0}, {0.003, 0.003}, false}, {Factor::kSnow, {0.0, 0.0}, {0.003, 0.003}, false}};
  return c;
}

namespace {

constexpr std::int64_t kRunStride = 100000;

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }

void set_factor(imaging::AugmentationParams& p, Factor f, double v) {
  switch (f) {
    case Factor::kRain: p.rain_strength = v; break;
    case Factor::kSnow: p.snow_strength = v; break;
    case Factor::kBrightness: p.brightness = v; break;
  }
}

imaging::AugmentationParams draw_id(Rng& rng, const DatasetConfig& cfg) {
  imaging::AugmentationParams p;
  for (const auto& f : cfg.factors) set_factor(p, f.factor, draw(rng, f.id));
  return p;
}

std::uint64_t frame_seed(std::uint64_t seed, int sequence, int position, std::uint64_t salt) {
  return stream_seed(seed, (static_cast<std::uint64_t>(sequence) << 20) ^ static_cast<std::uint64_t>(position) ^
                               (salt << 48));
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  int seq = 0;
  Rng train_rng = make_rng(cfg.seed, 0x7472);
  const int chunks = cfg.frames_per_run / cfg.chunk_len;
  for (int s = 0; s < cfg.scene.n_scenes; ++s) {
    for (int r = 0; r + 1 < cfg.runs; ++r) {
      for (int c = 0; c < chunks; ++c, ++seq) {
        const Split split = c % 3 == 2 ? Split::kCalib : Split::kTrain;
        for (int k = 0; k < cfg.chunk_len; ++k) {
          Sample smp;
          smp.scene = s;
          smp.run = r;
          smp.frame_index = r * kRunStride + c * cfg.chunk_len + k;
          smp.split = split;
          smp.factors = draw_id(train_rng, cfg);
          smp.factors.seed = frame_seed(cfg.seed, seq, k, 1);
          smp.sequence = seq;
          smp.position = k;
          smp.image = imaging::apply_augmentation(imaging::synth_scene(s, smp.frame_index, cfg.scene), smp.factors);
          ds.samples.push_back(std::move(smp));
        }
      }
    }
  }
  const int test_run = cfg.runs - 1;
  for (std::size_t p = 0; p < cfg.factors.size(); ++p) {
    const FactorSpec& fs = cfg.factors[p];
    Rng rng = make_rng(cfg.seed, 0x7465000 + p);
    for (int s = 0; s < cfg.scene.n_scenes; ++s) {
      std::vector<bool> ood_flags(static_cast<std::size_t>(cfg.episodes_per_scene), false);
      std::fill(ood_flags.begin() + cfg.episodes_per_scene / 2, ood_flags.end(), true);
      for (std::size_t i = ood_flags.size(); i > 1; --i) {
        std::swap(ood_flags[i - 1], ood_flags[static_cast<std::size_t>(uniform_int(rng, 0, std::int64_t(i) - 1))]);
      }
      for (int e = 0; e < cfg.episodes_per_scene; ++e, ++seq) {
        auto params = draw_id(rng, cfg);
        if (ood_flags[e]) {
          double v = draw(rng, fs.ood);
          if (fs.symmetric && uniform01(rng) < 0.5) v = -v;
          set_factor(params, fs.factor, v);
        }
        for (int k = 0; k < cfg.episode_len; ++k) {
          Sample smp;
          smp.scene = s;
          smp.run = test_run;
          smp.frame_index = test_run * kRunStride + e * cfg.episode_len + k;
          smp.split = Split::kTest;
          smp.factors = params;
          smp.factors.seed = frame_seed(cfg.seed, seq, k, 2);
          smp.ood = ood_flags[e];
          smp.partition = to_string(fs.factor);
          smp.sequence = seq;
          smp.position = k;
          smp.image = imaging::apply_augmentation(imaging::synth_scene(s, smp.frame_index, cfg.scene), smp.factors);
          ds.samples.push_back(std::move(smp));
        }
      }
    }
  }
  return ds;
}

std::vector<const Sample*> Dataset::select(Split split, const std::string& partition) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.split == split && (partition.empty() || s.partition == partition)) out.push_back(&s);
  }
  return out;
}

std::vector<std::vector<const Sample*>> Dataset::sequences(Split split, const std::string& partition) const {
  std::map<int, std::vector<const Sample*>> by_seq;
  for (const Sample* s : select(split, partition)) by_seq[s->sequence].push_back(s);
  std::vector<std::vector<const Sample*>> out;
  for (auto& [id, v] : by_seq) {
    std::sort(v.begin(), v.end(), [](const Sample* a, const Sample* b) { return a->position < b->position; });
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::string> Dataset::partitions() const {
  std::vector<std::string> out;
  for (const auto& f : config.factors) out.emplace_back(to_string(f.factor));
  return out;
}

std::string config_to_json(const DatasetConfig& cfg) {
  json factors = json::array();
  for (const auto& f : cfg.factors) {
    factors.push_back({{"factor", to_string(f.factor)},
                       {"id", {f.id.lo, f.id.hi}},
                       {"ood", {f.ood.lo, f.ood.hi}},
                       {"symmetric", f.symmetric}});
  }
  const json j{{"scene",
                {{"width", cfg.scene.width},
                 {"height", cfg.scene.height},
                 {"n_scenes", cfg.scene.n_scenes},
                 {"shift_px", cfg.scene.shift_px}}},
               {"runs", cfg.runs},
               {"frames_per_run", cfg.frames_per_run},
               {"chunk_len", cfg.chunk_len},
               {"episode_len", cfg.episode_len},
               {"episodes_per_scene", cfg.episodes_per_scene},
               {"factors", factors},
               {"seed", cfg.seed}};
  return j.dump(2);
}

DatasetConfig config_from_json(const std::string& text) {
  DatasetConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("scene")) {
      const json& s = j["scene"];
      c.scene.width = s.value("width", c.scene.width);
      c.scene.height = s.value("height", c.scene.height);
      c.scene.n_scenes = s.value("n_scenes", c.scene.n_scenes);
      c.scene.shift_px = s.value("shift_px", c.scene.shift_px);
    }
    c.runs = j.value("runs", c.runs);
    c.frames_per_run = j.value("frames_per_run", c.frames_per_run);
    c.chunk_len = j.value("chunk_len", c.chunk_len);
    c.episode_len = j.value("episode_len", c.episode_len);
    c.episodes_per_scene = j.value("episodes_per_scene", c.episodes_per_scene);
    c.seed = j.value("seed", c.seed);
    for (const auto& f : j.at("factors")) {
      FactorSpec fs;
      fs.factor = factor_from_string(f.at("factor"));
      fs.id = {f.at("id").at(0), f.at("id").at(1)};
      fs.ood = {f.at("ood").at(0), f.at("ood").at(1)};
      fs.symmetric = f.value("symmetric", false);
      c.factors.push_back(fs);
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("dataset config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::string image_rel_path(const Sample& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/%s/%05d_%03d.ppm", to_string(s.split), s.sequence, s.position);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  for (auto sp : {Split::kTrain, Split::kCalib, Split::kTest}) fs::create_directories(root / "images" / to_string(sp));
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw Error("cannot write manifest in '" + dir + "'");
  for (const auto& s : ds.samples) {
    const std::string rel = image_rel_path(s);
    imaging::write_pnm(s.image, (root / rel).string());
    const json line{{"path", rel},
                    {"scene_id", s.scene},
                    {"run", s.run},
                    {"frame_index", s.frame_index},
                    {"split", to_string(s.split)},
                    {"rain", s.factors.rain_strength},
                    {"snow", s.factors.snow_strength},
                    {"brightness", s.factors.brightness},
                    {"seed", s.factors.seed},
                    {"is_ood", s.ood},
                    {"partition", s.partition},
                    {"sequence", s.sequence},
                    {"position", s.position}};
    manifest << line.dump() << '\n';
  }
  std::ofstream cfg(root / "config.json");
  cfg << config_to_json(ds.config) << '\n';
  if (!manifest || !cfg) throw Error("failed writing dataset to '" + dir + "'");
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream cfg(root / "config.json");
  if (!cfg) throw Error("no dataset at '" + dir + "' (config.json missing; run dataset-generate first)");
  std::stringstream cs;
  cs << cfg.rdbuf();
  Dataset ds;
  ds.config = config_from_json(cs.str());
  std::ifstream manifest(root / "manifest.jsonl");
  if (!manifest) throw Error("dataset at '" + dir + "' has no manifest.jsonl");
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Sample s;
      s.scene = j.at("scene_id");
      s.run = j.at("run");
      s.frame_index = j.at("frame_index");
      s.split = split_from_string(j.at("split"));
      s.factors.rain_strength = j.at("rain");
      s.factors.snow_strength = j.at("snow");
      s.factors.brightness = j.at("brightness");
      s.factors.seed = j.at("seed");
      s.ood = j.at("is_ood");
      s.partition = j.at("partition");
      s.sequence = j.at("sequence");
      s.position = j.at("position");
      s.image = imaging::read_pnm((root / j.at("path").get<std::string>()).string());
      ds.samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace oodkit::data
