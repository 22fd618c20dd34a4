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

// Python bindings. Images are uint8 numpy arrays shaped (H, W, C); tensors
// are float32 arrays in CHW order.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "oodkit/error.hpp"
#include "oodkit/experiment.hpp"
#include "oodkit/gasearch.hpp"
#include "oodkit/oodcore.hpp"
#include "oodkit/optflow.hpp"
#include "oodkit/pipeline.hpp"

namespace py = pybind11;
using namespace oodkit;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

imaging::Image to_image(const U8Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("image array must be (H, W) or (H, W, C)");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  return imaging::Image(w, h, c, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

U8Array from_image(const imaging::Image& img) {
  U8Array out({img.height(), img.width(), img.channels()});
  const auto px = img.pixels();
  std::copy(px.begin(), px.end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const F32Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor::f32(std::move(s), std::vector<float>(a.data(), a.data() + a.size()));
}

F32Array from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  F32Array out(shape);
  const auto v = t.to_f32();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

F32Array plane(const std::vector<float>& v, int h, int w) {
  F32Array out({h, w});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<F32Array>& xs) {
  std::vector<Tensor> out;
  for (const auto& x : xs) out.push_back(to_tensor(x));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "oodkit: OOD detector design-space exploration";

  static py::exception<Error> base(m, "OodkitError");
  static py::exception<ArgumentError> arg_err(m, "ArgumentError", PyExc_ValueError);
  static py::exception<ShapeError> shape_err(m, "ShapeError", base.ptr());
  static py::exception<FormatError> fmt_err(m, "FormatError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ArgumentError& e) {
      py::set_error(arg_err, e.what());
    } catch (const ShapeError& e) {
      py::set_error(shape_err, e.what());
    } catch (const FormatError& e) {
      py::set_error(fmt_err, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  // --- oodcore
  m.def("kl_nonconformity",
        [](std::vector<float> mu, std::vector<float> var, std::vector<int> dims) {
          return ood::kl_nonconformity({std::move(mu), std::move(var), DType::kF32}, dims);
        },
        py::arg("mu"), py::arg("var"), py::arg("dims") = std::vector<int>{});
  m.def("icp_pvalue",
        [](double score, std::vector<double> calib) {
          ood::CalibrationSet c;
          c.scores = std::move(calib);
          c.normalize();
          return ood::icp_pvalue(score, c);
        },
        py::arg("score"), py::arg("calibration_scores"));
  m.def("mixture_martingale", [](const std::vector<double>& p, int grid) { return ood::mixture_martingale(p, grid); },
        py::arg("p_window"), py::arg("grid") = 101);
  m.def("log_mixture_martingale",
        [](const std::vector<double>& p, int grid) { return ood::log_mixture_martingale(p, grid); },
        py::arg("p_window"), py::arg("grid") = 101);
  m.def("log_power_martingale",
        [](const std::vector<double>& p, double eps) { return ood::log_power_martingale(p, eps); });
  m.def("cusum_update", &ood::cusum_update, py::arg("s"), py::arg("m"), py::arg("decay"));
  m.def("auroc", [](const std::vector<double>& id, const std::vector<double>& od) { return ood::auroc(id, od); },
        py::arg("id_scores"), py::arg("ood_scores"));
  m.def("harmonic_fitness", [](const std::vector<double>& a) { return ood::harmonic_fitness(a); });

  // --- tensor / quantization
  m.def("f32_to_f16", &f32_to_f16);
  m.def("f16_to_f32", &f16_to_f32);
  m.def("quant_params",
        [](const F32Array& x, bool symmetric) {
          const std::vector<Tensor> t{to_tensor(x)};
          const auto qp = calibrate_quant_params(t, symmetric ? CalibrationMode::kSymmetric : CalibrationMode::kAsymmetric);
          return py::make_tuple(qp.scale, qp.zero_point);
        },
        py::arg("x"), py::arg("symmetric") = false, "(scale, zero_point) covering the range of x");
  m.def("quantize",
        [](const F32Array& x, float scale, int zero_point) {
          const auto q = quantize_affine(to_tensor(x), {scale, zero_point});
          py::array_t<std::int8_t> out(std::vector<py::ssize_t>(q.shape().begin(), q.shape().end()));
          const auto codes = q.qint8_data();
          std::copy(codes.begin(), codes.end(), out.mutable_data());
          return out;
        });
  m.def("dequantize", [](const py::array_t<std::int8_t, py::array::c_style | py::array::forcecast>& q, float scale,
                         int zero_point) {
    F32Array out(std::vector<py::ssize_t>(q.shape(), q.shape() + q.ndim()));
    for (py::ssize_t i = 0; i < q.size(); ++i) out.mutable_data()[i] = dequantize_value(q.data()[i], {scale, zero_point});
    return out;
  });

  // --- imaging
  m.def("synth_scene",
        [](int scene, std::int64_t frame, int width, int height, int shift_px) {
          imaging::SceneParams p;
          p.width = width;
          p.height = height;
          p.shift_px = shift_px;
          return from_image(imaging::synth_scene(scene, frame, p));
        },
        py::arg("scene"), py::arg("frame"), py::arg("width") = 96, py::arg("height") = 72, py::arg("shift_px") = 2);
  m.def("resize",
        [](const U8Array& img, int w, int h, const std::string& method) {
          return from_image(imaging::resize(to_image(img), w, h, imaging::interpolation_from_string(method)));
        },
        py::arg("image"), py::arg("width"), py::arg("height"), py::arg("method") = "bilinear");
  m.def("to_grayscale", [](const U8Array& img) { return from_image(imaging::to_grayscale(to_image(img))); });
  m.def("sharpen", [](const U8Array& img) { return from_image(imaging::sharpen(to_image(img))); });
  m.def("augment",
        [](const U8Array& img, double rain, double snow, double brightness, std::uint64_t seed) {
          imaging::AugmentationParams p{rain, snow, brightness, seed};
          return from_image(imaging::apply_augmentation(to_image(img), p));
        },
        py::arg("image"), py::arg("rain") = 0.0, py::arg("snow") = 0.0, py::arg("brightness") = 0.0,
        py::arg("seed") = 0);
  m.def("read_pnm", [](const std::string& path) { return from_image(imaging::read_pnm(path)); });
  m.def("write_pnm", [](const U8Array& img, const std::string& path) { imaging::write_pnm(to_image(img), path); });

  // --- optical flow
  m.def("farneback_flow",
        [](const U8Array& prev, const U8Array& next) {
          const auto f = optflow::farneback_flow(to_image(prev), to_image(next));
          return py::make_tuple(plane(f.u, f.height, f.width), plane(f.v, f.height, f.width));
        },
        py::arg("prev"), py::arg("next"), "Dense flow from prev to next as (u, v) arrays.");

  // --- models
  py::class_<net::DetectorModel>(m, "DetectorModel")
      .def_property_readonly("precision", [](const net::DetectorModel& mdl) { return std::string(to_string(mdl.precision)); })
      .def_property_readonly("n_latent", [](const net::DetectorModel& mdl) { return mdl.spec.n_latent; })
      .def_property_readonly("input_shape", [](const net::DetectorModel& mdl) {
        return py::make_tuple(mdl.spec.input.c, mdl.spec.input.h, mdl.spec.input.w);
      })
      .def("checksum", [](const net::DetectorModel& mdl) { return net::model_checksum(mdl); })
      .def("encode",
           [](const net::DetectorModel& mdl, const F32Array& x) {
             const auto lat = net::encode(mdl, to_tensor(x));
             return py::make_tuple(lat.mu, lat.var);
           },
           "(mu, var) of one CHW input")
      .def("decode", [](const net::DetectorModel& mdl, const std::vector<float>& z) { return from_tensor(net::decode(mdl, z)); })
      .def("save", [](const net::DetectorModel& mdl, const std::string& path) { net::save_model_file(mdl, path); })
      .def(py::self == py::self);
  m.def("load_model", &net::load_model_file);
  m.def("bvae_model",
        [](int c, int h, int w, int n_latent, double beta, const std::string& variance, std::uint64_t seed) {
          return net::init_model(net::bvae_spec({c, h, w}, n_latent, beta, net::variance_param_from_string(variance)), seed);
        },
        py::arg("channels"), py::arg("height"), py::arg("width"), py::arg("n_latent") = 8, py::arg("beta") = 2.32,
        py::arg("variance") = "var", py::arg("seed") = 0);
  m.def("train_model",
        [](const net::DetectorModel& init, const std::vector<F32Array>& data, int epochs, int batch, double lr,
           std::uint64_t seed) {
          net::TrainOptions o;
          o.epochs = epochs;
          o.batch = batch;
          o.lr = lr;
          o.seed = seed;
          const auto xs = to_tensors(data);
          py::gil_scoped_release nogil;
          auto r = net::train(init, xs, o);
          return py::make_tuple(std::move(r.model), r.loss_history);
        },
        py::arg("model"), py::arg("data"), py::arg("epochs") = 30, py::arg("batch") = 32, py::arg("lr") = 1e-3,
        py::arg("seed") = 0, "Returns (trained model, per-epoch mean loss).");
  m.def("quantize_model",
        [](const net::DetectorModel& mdl, const std::vector<F32Array>& calib) {
          return net::quantize_model(mdl, to_tensors(calib));
        });
  m.def("cast_model_f16", &net::cast_model_f16);
  m.def("mig_score",
        [](const std::vector<std::vector<float>>& means, const std::vector<std::vector<int>>& labels, int bins) {
          return net::mig_score(means, labels, bins);
        },
        py::arg("latent_means"), py::arg("factor_labels"), py::arg("n_bins") = 20);

  // --- dataset and detector
  py::class_<data::Dataset>(m, "Dataset")
      .def("count",
           [](const data::Dataset& ds, const std::string& split, const std::string& partition) {
             return ds.select(data::split_from_string(split), partition).size();
           },
           py::arg("split"), py::arg("partition") = "")
      .def("partitions", &data::Dataset::partitions)
      .def("save", [](const data::Dataset& ds, const std::string& dir) { data::write_dataset(ds, dir); })
      .def("config_json", [](const data::Dataset& ds) { return data::config_to_json(ds.config); });
  m.def("generate_dataset", [](const std::string& config_json) {
    return data::generate_dataset(data::config_from_json(config_json));
  });
  m.def("load_dataset", &data::read_dataset);
  m.def("default_dataset_config", [](const std::string& family) {
    return data::config_to_json(ga::family_from_string(family) == ga::Family::kBvae ? data::bvae_dataset_config()
                                                                                    : data::optflow_dataset_config());
  });

  py::class_<detector::DetectorBundle>(m, "DetectorBundle")
      .def_property_readonly("genome", [](const detector::DetectorBundle& b) { return b.genome.key(); })
      .def_property_readonly("precision", [](const detector::DetectorBundle& b) { return std::string(to_string(b.precision())); })
      .def_property_readonly("models", [](const detector::DetectorBundle& b) { return b.models; })
      .def_property("decay", [](const detector::DetectorBundle& b) { return b.post.decay; },
                    [](detector::DetectorBundle& b, double d) { b.post.decay = d; })
      .def("save", [](const detector::DetectorBundle& b, const std::string& dir) { detector::save_bundle(b, dir); });
  m.def("load_bundle", &detector::load_bundle);
  m.def("build_detector",
        [](const std::string& genome, const data::Dataset& ds, const std::string& experiment_json) {
          const auto cfg = exp::config_from_json(experiment_json.empty() ? "{}" : experiment_json);
          py::gil_scoped_release nogil;
          return detector::build_detector(ga::Genome::parse(genome), ds, cfg.train);
        },
        py::arg("genome"), py::arg("dataset"), py::arg("experiment_json") = "",
        "Train and calibrate one genome; training options come from an experiment config.");
  m.def("convert_bundle", [](const detector::DetectorBundle& b, const std::string& precision, const data::Dataset& ds) {
    return detector::convert_bundle(b, dtype_from_string(precision), ds);
  });
  m.def("evaluate",
        [](const detector::DetectorBundle& b, const data::Dataset& ds) {
          const auto ev = detector::evaluate(b, ds);
          py::dict aurocs;
          for (std::size_t i = 0; i < ev.partitions.size(); ++i) aurocs[py::str(ev.partitions[i])] = ev.aurocs[i];
          return py::make_tuple(ev.fitness, aurocs);
        },
        "(harmonic fitness, {partition: auroc})");
  m.def("sweep_delta",
        [](const detector::DetectorBundle& b, const data::Dataset& ds, const std::vector<double>& grid) {
          const auto sw = detector::sweep_delta(detector::trace_pvalues(b, ds), b.post, grid);
          std::vector<double> fit;
          for (const auto& r : sw.results) fit.push_back(r.fitness);
          return py::make_tuple(sw.best_delta, sw.deltas, fit);
        },
        "(best decay, decays, fitness per decay)");

  // --- genetic search
  m.def("genome_space",
        [](const std::string& family, const std::string& bucket, int width_step) {
          std::vector<std::string> keys;
          const auto f = ga::family_from_string(family);
          for (const auto& g : ga::enumerate(f, ga::default_alleles(f, ga::bucket_from_string(bucket), width_step)))
            keys.push_back(g.key());
          return keys;
        },
        py::arg("family"), py::arg("bucket"), py::arg("width_step") = 1);
  m.def("run_ga",
        [](const std::string& family, const std::vector<std::string>& space, const std::function<double(std::string)>& fitness,
           int population, double mutation_rate, int generations, std::uint64_t seed) {
          const auto f = ga::family_from_string(family);
          ga::BucketAlleles a;
          for (const auto& k : space) {
            const auto g = ga::Genome::parse(k);
            auto add = [](auto& v, const auto& x) {
              if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
            };
            add(a.sizes, std::make_pair(g.height, g.width));
            add(a.interpolations, g.interpolation);
            add(a.colors, g.color);
            add(a.flow_depths, g.flow_depth);
          }
          ga::GAConfig cfg;
          cfg.population = population;
          cfg.mutation_rate = mutation_rate;
          cfg.generations = generations;
          cfg.seed = seed;
          ga::FitnessCache cache([&](const ga::Genome& g) {
            ga::FitnessResult r;
            r.fitness = fitness(g.key());
            return r;
          });
          const auto res = ga::run_ga(f, a, cfg, cache);
          return py::make_tuple(res.best.key(), res.best_fitness, res.history.best_so_far, res.history.to_csv(true));
        },
        py::arg("family"), py::arg("space"), py::arg("fitness"), py::arg("population") = 5,
        py::arg("mutation_rate") = 0.2, py::arg("generations") = 16, py::arg("seed") = 0,
        "GA over the cartesian allele space spanned by the given genome keys. Returns (best genome, best fitness, "
        "best-so-far per generation, history CSV).");

  // --- pipeline
  m.def("run_synthetic_stream",
        [](const std::vector<double>& stage_ms, bool diamond, const std::string& executor, int workers, int frames,
           double rate_fps, int warmup) {
          auto g = pipe::synthetic_graph(stage_ms, diamond);
          py::gil_scoped_release nogil;
          const auto r = pipe::run_stream(g, {pipe::executor_kind_from_string(executor), workers},
                                          {frames, rate_fps, [](int i) -> pipe::Payload { return i; }}, warmup);
          const auto& s = r.timing.summary;
          py::gil_scoped_acquire gil;
          py::dict d;
          d["mean_ms"] = s.mean;
          d["median_ms"] = s.median;
          d["p95_ms"] = s.p95;
          d["max_ms"] = s.max;
          d["count"] = r.timing.count;
          return d;
        },
        py::arg("stage_ms"), py::arg("diamond") = false, py::arg("executor") = "MONO_ST", py::arg("workers") = 2,
        py::arg("frames") = 60, py::arg("rate_fps") = 20.0, py::arg("warmup") = 20);
  m.def("stream_scores",
        [](const detector::DetectorBundle& b, const data::Dataset& ds, const std::string& executor, int workers,
           int frames, double rate_fps) {
          auto g = pipe::build_graph(b);
          py::gil_scoped_release nogil;
          return pipe::run_stream(g, {pipe::executor_kind_from_string(executor), workers},
                                  {frames, rate_fps, pipe::dataset_frames(ds)}, 0)
              .scores;
        },
        py::arg("bundle"), py::arg("dataset"), py::arg("executor") = "MONO_ST", py::arg("workers") = 2,
        py::arg("frames") = 100, py::arg("rate_fps") = 1000.0, "Per-frame scores (None during flow warm-up).");

  // --- experiment
  m.def("experiment_config", [](const std::string& text) { return exp::config_to_json(exp::config_from_json(text)); },
        "Validates an experiment config and returns it with defaults filled in.");
}
