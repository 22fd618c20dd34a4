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

#include "oodkit/detector.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "oodkit/error.hpp"

namespace oodkit::detector {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::size_t expected_models(ga::Family f) { return f == ga::Family::kBvae ? 1 : 2; }

Tensor scaled(const Tensor& t, double k) {
  auto v = t.to_f32();
  for (auto& x : v) x = static_cast<float>(x * k);
  return Tensor::f32(t.shape(), std::move(v));
}

double combine(const std::vector<double>& s, ood::ScoreCombine how) {
  if (s.empty()) throw ArgumentError("no encoder scores to combine");
  if (how == ood::ScoreCombine::kMax) return *std::max_element(s.begin(), s.end());
  double acc = 0.0;
  for (double x : s) acc += x;
  return acc / static_cast<double>(s.size());
}

net::Geometry input_geometry(const ga::Genome& g, const OptflowSettings& flow) {
  if (g.family == ga::Family::kBvae) return {g.channels(), g.height, g.width};
  return {g.flow_depth, g.height - flow.crop_top, g.width};
}

std::vector<Tensor> take(const std::vector<Tensor>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

}  // namespace

DType DetectorBundle::precision() const {
  if (models.empty()) throw ArgumentError("detector bundle has no models");
  return models.front().precision;
}

void DetectorBundle::validate() const {
  genome.validate();
  post.validate();
  flow.farneback.validate();
  if (flow.flow_scale <= 0.0) throw ArgumentError("flow_scale must be positive");
  if (flow.crop_top < 0 || flow.crop_top >= genome.height) throw ArgumentError("crop_top out of range");
  const auto n = expected_models(genome.family);
  if (models.size() != n || calibrations.size() != n)
    throw ArgumentError("detector bundle for " + std::string(ga::to_string(genome.family)) + " needs " +
                        std::to_string(n) + " models and calibration sets");
  const auto geom = input_geometry(genome, flow);
  for (std::size_t i = 0; i < n; ++i) {
    if (models[i].precision != models.front().precision) throw ArgumentError("mixed model precisions in bundle");
    if (calibrations[i].precision != models[i].precision)
      throw ArgumentError(std::string("calibration ") + std::to_string(i) + " built under " +
                          to_string(calibrations[i].precision) + ", model is " + to_string(models[i].precision));
    if (!(models[i].spec.input == geom))
      throw ShapeError("model input " + net::to_string(models[i].spec.input) + " does not match genome " +
                       genome.key());
  }
}

Tensor image_to_tensor(const imaging::Image& img) {
  const int c = img.channels(), h = img.height(), w = img.width();
  std::vector<float> out(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<std::size_t>(ch) * h + y) * w + x] = static_cast<float>(img.at(x, y, ch)) / 255.0f;
  return Tensor::f32({c, h, w}, std::move(out));
}

imaging::Image preprocess_frame(const imaging::Image& frame, const ga::Genome& g, const OptflowSettings& flow) {
  if (frame.empty()) throw ArgumentError("empty frame");
  if (g.family == ga::Family::kBvae) {
    if (g.color == ga::ColorSpace::kRgb) {
      if (frame.channels() != 3) throw ArgumentError("RGB genome needs a 3-channel frame");
      return imaging::resize(frame, g.width, g.height, g.interpolation);
    }
    const auto gray = frame.channels() == 1 ? frame : imaging::to_grayscale(frame);
    return imaging::resize(gray, g.width, g.height, g.interpolation);
  }
  auto img = frame.channels() == 1 ? frame : imaging::to_grayscale(frame);
  img = imaging::sharpen(imaging::resize(img, g.width, g.height, g.interpolation));
  if (flow.crop_top > 0) img = imaging::crop(img, 0, flow.crop_top, g.width, g.height - flow.crop_top);
  return img;
}

FlowHistory::FlowHistory(int depth, const OptflowSettings& settings) : depth_(depth), settings_(settings) {
  if (depth < 1) throw ArgumentError("flow depth must be >= 1");
}

std::optional<std::pair<Tensor, Tensor>> FlowHistory::push(const imaging::Image& frame) {
  auto cur = optflow::to_float_gray(frame);
  if (prev_) {
    if (prev_->width != cur.width || prev_->height != cur.height) throw ShapeError("flow frame size changed");
    flows_.push_back(optflow::farneback_flow(*prev_, cur, settings_.farneback));
    if (static_cast<int>(flows_.size()) > depth_) flows_.pop_front();
  }
  prev_ = std::move(cur);
  if (static_cast<int>(flows_.size()) < depth_) return std::nullopt;
  const std::vector<optflow::FlowField> window(flows_.begin(), flows_.end());
  auto st = optflow::stack_flows(window, depth_);
  if (!st) return std::nullopt;
  return std::pair{scaled(st->u, settings_.flow_scale), scaled(st->v, settings_.flow_scale)};
}

void FlowHistory::reset() {
  prev_.reset();
  flows_.clear();
}

Preprocessor::Preprocessor(const DetectorBundle& b) : genome_(b.genome), flow_(b.flow) {
  if (genome_.family == ga::Family::kOptflow) history_.emplace(genome_.flow_depth, flow_);
}

std::optional<std::vector<Tensor>> Preprocessor::operator()(const imaging::Image& frame) {
  auto img = preprocess_frame(frame, genome_, flow_);
  if (!history_) return std::vector<Tensor>{image_to_tensor(img)};
  auto uv = history_->push(img);
  if (!uv) return std::nullopt;
  return std::vector<Tensor>{std::move(uv->first), std::move(uv->second)};
}

void Preprocessor::reset() {
  if (history_) history_->reset();
}

Postprocessor::Postprocessor(const DetectorBundle& b)
    : calib_(b.calibrations), post_(b.post), states_(b.calibrations.size()) {}

double Postprocessor::operator()(const std::vector<net::LatentOutput>& latents) {
  if (latents.size() != states_.size()) throw ArgumentError("latent count does not match calibration count");
  std::vector<double> s(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) s[i] = ood::score_frame(states_[i], latents[i], calib_[i], post_);
  return combine(s, post_.combine);
}

double Postprocessor::score_pvalues(const std::vector<double>& p) {
  if (p.size() != states_.size()) throw ArgumentError("p-value count does not match calibration count");
  std::vector<double> s(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) s[i] = ood::score_pvalue(states_[i], p[i], post_);
  return combine(s, post_.combine);
}

void Postprocessor::reset() {
  for (auto& st : states_) st = {};
}

StreamDetector::StreamDetector(const DetectorBundle& b) : pre_(b), post_(b) {
  b.validate();
  for (const auto& m : b.models) encoders_.emplace_back(m);
}

std::optional<double> StreamDetector::process(const imaging::Image& frame) {
  auto xs = pre_(frame);
  if (!xs) return std::nullopt;
  std::vector<net::LatentOutput> lat;
  lat.reserve(xs->size());
  for (std::size_t i = 0; i < xs->size(); ++i) lat.push_back(encoders_[i].encode((*xs)[i]));
  return post_(lat);
}

void StreamDetector::reset() {
  pre_.reset();
  post_.reset();
}

std::vector<std::vector<Tensor>> prepare_inputs(const ga::Genome& g, const OptflowSettings& flow,
                                                const std::vector<std::vector<const data::Sample*>>& seqs) {
  std::vector<std::vector<Tensor>> out(expected_models(g.family));
  for (const auto& seq : seqs) {
    std::optional<FlowHistory> hist;
    if (g.family == ga::Family::kOptflow) hist.emplace(g.flow_depth, flow);
    for (const auto* s : seq) {
      auto img = preprocess_frame(s->image, g, flow);
      if (!hist) {
        out[0].push_back(image_to_tensor(img));
      } else if (auto uv = hist->push(img)) {
        out[0].push_back(std::move(uv->first));
        out[1].push_back(std::move(uv->second));
      }
    }
  }
  return out;
}

namespace {

std::vector<int> select_kl_dims(const DetectorBundle& b, const data::Dataset& ds,
                                const std::vector<std::vector<Tensor>>& calib_in, int k) {
  std::vector<data::Sample> shifted;
  std::vector<std::vector<const data::Sample*>> seqs;
  const auto calib = ds.sequences(data::Split::kCalib);
  for (const auto& seq : calib)
    for (const auto* s : seq) shifted.push_back(*s);
  int flip = 0;
  for (auto& s : shifted) {
    auto f = s.factors;
    for (const auto& fs : ds.config.factors) {
      double v = 0.5 * (fs.ood.lo + fs.ood.hi);
      if (fs.symmetric && (flip++ % 2)) v = -v;
      switch (fs.factor) {
        case data::Factor::kRain: f.rain_strength = v; break;
        case data::Factor::kSnow: f.snow_strength = v; break;
        case data::Factor::kBrightness: f.brightness = v; break;
      }
    }
    s.image = imaging::apply_augmentation(imaging::synth_scene(s.scene, s.frame_index, ds.config.scene), f);
  }
  std::size_t at = 0;
  for (const auto& seq : calib) {
    seqs.emplace_back();
    for (std::size_t j = 0; j < seq.size(); ++j) seqs.back().push_back(&shifted[at++]);
  }
  const auto pert_in = prepare_inputs(b.genome, b.flow, seqs);
  std::vector<double> gaps;
  for (std::size_t i = 0; i < b.models.size(); ++i) {
    const auto g = ood::kl_dim_gaps(net::Encoder(b.models[i]), calib_in[i], pert_in[i]);
    if (gaps.empty()) gaps.assign(g.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) gaps[j] += g[j];
  }
  return ood::top_k_dims(gaps, k);
}

}  // namespace

DetectorBundle build_detector(const ga::Genome& genome, const data::Dataset& ds, const TrainSettings& st) {
  genome.validate();
  DetectorBundle b;
  b.genome = genome;
  b.post = st.post;
  b.flow = st.flow;
  const auto train_in = prepare_inputs(genome, st.flow, ds.sequences(data::Split::kTrain));
  const auto calib_in = prepare_inputs(genome, st.flow, ds.sequences(data::Split::kCalib));
  const auto geom = input_geometry(genome, st.flow);
  const auto spec = genome.family == ga::Family::kBvae ? net::bvae_spec(geom, st.n_latent, st.beta, st.variance)
                                                       : net::optflow_spec(geom, st.of_n_latent, st.of_beta);
  for (std::size_t i = 0; i < train_in.size(); ++i) {
    if (train_in[i].empty() || calib_in[i].empty())
      throw ArgumentError("genome " + genome.key() + " yields no train or calib inputs");
    auto opts = st.train;
    opts.seed += i;
    auto model = net::train(spec, train_in[i], opts).model;
    model.metadata["genome"] = genome.key();
    if (train_in.size() == 2) model.metadata["component"] = i == 0 ? "u" : "v";
    b.models.push_back(std::move(model));
  }
  if (st.kl_top_k > 0) b.post.kl_dims = select_kl_dims(b, ds, calib_in, st.kl_top_k);
  for (std::size_t i = 0; i < b.models.size(); ++i)
    b.calibrations.push_back(ood::build_calibration(b.models[i], calib_in[i], b.post));
  b.validate();
  return b;
}

DetectorBundle convert_bundle(const DetectorBundle& f32, DType precision, const data::Dataset& ds) {
  if (f32.precision() != DType::kF32) throw ArgumentError("convert_bundle expects an f32 bundle");
  DetectorBundle out = f32;
  if (precision == DType::kF32) return out;
  const auto calib_in = prepare_inputs(f32.genome, f32.flow, ds.sequences(data::Split::kCalib));
  out.models.clear();
  out.calibrations.clear();
  for (std::size_t i = 0; i < f32.models.size(); ++i) {
    auto m = precision == DType::kQInt8 ? net::quantize_model(f32.models[i], take(calib_in[i], 256))
                                        : net::cast_model_f16(f32.models[i]);
    out.calibrations.push_back(ood::build_calibration(m, calib_in[i], f32.post));
    out.models.push_back(std::move(m));
  }
  out.validate();
  return out;
}

std::vector<PartitionTrace> trace_pvalues(const DetectorBundle& b, const data::Dataset& ds) {
  b.validate();
  std::vector<net::Encoder> enc;
  for (const auto& m : b.models) enc.emplace_back(m);
  std::vector<PartitionTrace> out;
  for (const auto& part : ds.partitions()) {
    PartitionTrace pt{part, {}};
    for (const auto& seq : ds.sequences(data::Split::kTest, part)) {
      if (seq.empty()) continue;
      Preprocessor pre(b);
      EpisodeTrace ep;
      ep.ood = seq.front()->ood;
      for (const auto* s : seq) {
        auto xs = pre(s->image);
        if (!xs) continue;
        std::vector<double> p(xs->size());
        for (std::size_t i = 0; i < xs->size(); ++i) {
          const auto lat = enc[i].encode((*xs)[i]);
          p[i] = ood::icp_pvalue(ood::kl_nonconformity(lat, b.post.kl_dims), b.calibrations[i]);
        }
        ep.pvalues.push_back(std::move(p));
      }
      pt.episodes.push_back(std::move(ep));
    }
    out.push_back(std::move(pt));
  }
  return out;
}

Evaluation score_traces(const std::vector<PartitionTrace>& traces, const ood::PostprocessConfig& post) {
  post.validate();
  Evaluation ev;
  for (const auto& pt : traces) {
    std::vector<double> id, od;
    for (const auto& ep : pt.episodes) {
      if (ep.pvalues.empty()) continue;
      std::vector<ood::DetectorState> states(ep.pvalues.front().size());
      for (const auto& frame : ep.pvalues) {
        std::vector<double> s(frame.size());
        for (std::size_t i = 0; i < frame.size(); ++i) s[i] = ood::score_pvalue(states[i], frame[i], post);
        (ep.ood ? od : id).push_back(combine(s, post.combine));
      }
    }
    ev.partitions.push_back(pt.name);
    ev.aurocs.push_back(ood::auroc(id, od));
  }
  ev.fitness = ood::harmonic_fitness(ev.aurocs);
  return ev;
}

Evaluation evaluate(const DetectorBundle& b, const data::Dataset& ds) {
  return score_traces(trace_pvalues(b, ds), b.post);
}

DeltaSweep sweep_delta(const std::vector<PartitionTrace>& traces, const ood::PostprocessConfig& base,
                       const std::vector<double>& grid) {
  if (grid.empty()) throw ArgumentError("empty decay grid");
  DeltaSweep out;
  auto sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  bool first = true;
  for (double d : sorted) {
    auto post = base;
    post.decay = d;
    auto ev = score_traces(traces, post);
    if (first || ev.fitness > out.best_fitness) {
      out.best_fitness = ev.fitness;
      out.best_delta = d;
      first = false;
    }
    out.deltas.push_back(d);
    out.results.push_back(std::move(ev));
  }
  return out;
}

namespace {

json post_json(const ood::PostprocessConfig& p) {
  return {{"window", p.window},
          {"decay", p.decay},
          {"epsilon_grid", p.epsilon_grid},
          {"kl_dims", p.kl_dims},
          {"martingale", ood::to_string(p.martingale)},
          {"power_epsilon", p.power_epsilon},
          {"combine", ood::to_string(p.combine)}};
}

ood::PostprocessConfig post_from(const json& j) {
  ood::PostprocessConfig p;
  p.window = j.value("window", p.window);
  p.decay = j.value("decay", p.decay);
  p.epsilon_grid = j.value("epsilon_grid", p.epsilon_grid);
  p.kl_dims = j.value("kl_dims", p.kl_dims);
  if (j.contains("martingale")) p.martingale = ood::martingale_kind_from_string(j.at("martingale"));
  p.power_epsilon = j.value("power_epsilon", p.power_epsilon);
  if (j.contains("combine")) p.combine = ood::score_combine_from_string(j.at("combine"));
  p.validate();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::string post_config_to_json(const ood::PostprocessConfig& post) { return post_json(post).dump(2); }

ood::PostprocessConfig post_config_from_json(const std::string& text) {
  try {
    return post_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad post-processing config: ") + e.what());
  }
}

void save_bundle(const DetectorBundle& b, const std::string& dir) {
  b.validate();
  fs::create_directories(dir);
  const auto& fb = b.flow.farneback;
  const json j{{"genome", b.genome.key()},
               {"precision", to_string(b.precision())},
               {"post", post_json(b.post)},
               {"flow",
                {{"flow_scale", b.flow.flow_scale},
                 {"crop_top", b.flow.crop_top},
                 {"window_size", fb.window_size},
                 {"iterations", fb.iterations},
                 {"pyramid_levels", fb.pyramid_levels},
                 {"pyramid_scale", fb.pyramid_scale},
                 {"poly_n", fb.poly_n},
                 {"poly_sigma", fb.poly_sigma}}},
               {"models", b.models.size()}};
  std::ofstream(fs::path(dir) / "bundle.json") << j.dump(2) << "\n";
  for (std::size_t i = 0; i < b.models.size(); ++i) {
    net::save_model_file(b.models[i], (fs::path(dir) / ("model_" + std::to_string(i) + ".oodm")).string());
    ood::write_calibration(b.calibrations[i], (fs::path(dir) / ("calib_" + std::to_string(i) + ".csv")).string());
  }
}

DetectorBundle load_bundle(const std::string& dir) {
  DetectorBundle b;
  json j;
  try {
    j = json::parse(slurp(fs::path(dir) / "bundle.json"));
    b.genome = ga::Genome::parse(j.at("genome").get<std::string>());
    b.post = post_from(j.at("post"));
    const auto& f = j.at("flow");
    b.flow.flow_scale = f.at("flow_scale");
    b.flow.crop_top = f.at("crop_top");
    auto& fb = b.flow.farneback;
    fb.window_size = f.at("window_size");
    fb.iterations = f.at("iterations");
    fb.pyramid_levels = f.at("pyramid_levels");
    fb.pyramid_scale = f.at("pyramid_scale");
    fb.poly_n = f.at("poly_n");
    fb.poly_sigma = f.at("poly_sigma");
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadHeader, std::string("bad bundle.json: ") + e.what());
  }
  const auto n = j.at("models").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    b.models.push_back(net::load_model_file((fs::path(dir) / ("model_" + std::to_string(i) + ".oodm")).string()));
    b.calibrations.push_back(ood::read_calibration((fs::path(dir) / ("calib_" + std::to_string(i) + ".csv")).string()));
  }
  b.validate();
  return b;
}

}  // namespace oodkit::detector
