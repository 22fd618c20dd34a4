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

#include <cmath>
#include <numeric>

#include "oodkit/error.hpp"
#include "oodkit/oodcore.hpp"
#include "oodkit/random.hpp"

using namespace oodkit;
using namespace oodkit::ood;

namespace {

// Composite midpoint rule with a million panels on the raw integrand.
double integrate_martingale(const std::vector<double>& p) {
  const int n = 1000000;
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const double e = (i + 0.5) / n;
    double prod = 1;
    for (double v : p) prod *= e * std::pow(v, e - 1);
    acc += prod;
  }
  return acc / n;
}

double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0;
  for (double o : ood)
    for (double i : id) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return wins / (double(id.size()) * ood.size());
}

CalibrationSet one_to_nine() {
  CalibrationSet c;
  for (int i = 1; i <= 9; ++i) c.scores.push_back(i);
  return c;
}

}  // namespace

TEST_CASE("KL nonconformity examples") {
  CHECK(kl_nonconformity({{0, 0, 0}, {1, 1, 1}}) == 0.0);
  CHECK(kl_nonconformity({{1}, {1}}) == doctest::Approx(0.5).epsilon(1e-12));
  const double expect = 0.5 * (0.25 - std::log(0.25) - 1.0);
  CHECK(std::abs(kl_nonconformity({{0}, {0.25f}}) - expect) < 1e-9);
  CHECK(expect == doctest::Approx(0.3181).epsilon(1e-4));
  const std::vector<int> dims{1};
  CHECK(kl_nonconformity({{5, 1}, {1, 1}}, dims) == doctest::Approx(0.5));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(kl_nonconformity({{0}, {1}}, bad), ArgumentError);
}

TEST_CASE("ICP p-values") {
  const auto c = one_to_nine();
  CHECK(icp_pvalue(10, c) == 0.1);
  CHECK(icp_pvalue(0, c) == 1.0);
  CHECK(icp_pvalue(5, c) == 0.6);
  CHECK(icp_pvalue(1e300, c) == 0.1);
  double prev = 1.0;
  for (double s = -2; s < 12; s += 0.25) {
    const double p = icp_pvalue(s, c);
    CHECK(p <= prev);
    CHECK(p > 0.0);
    prev = p;
  }
}

TEST_CASE("mixture martingale") {
  for (int n = 1; n <= 20; ++n) {
    const std::vector<double> ones(n, 1.0);
    CHECK(std::abs(mixture_martingale(ones) - 1.0 / (n + 1)) < 1e-6);
  }
  const double a = std::log(2.0);
  const double closed = 2 * (1 - std::exp(-a) * (1 + a)) / (a * a);
  const double numeric = integrate_martingale({0.5});
  CHECK(std::abs(numeric - closed) < 1e-9);
  CHECK(std::abs(mixture_martingale(std::vector<double>{0.5}) - numeric) < 1e-4);
  CHECK(mixture_martingale(std::vector<double>{0.5}) == doctest::Approx(0.6387).epsilon(1e-4));

  const std::vector<double> small(20, 0.01);
  const double m = mixture_martingale(small);
  CHECK(m > 1e6);
  // Upper bound: the integrand never exceeds its maximum over eps.
  double peak = -1e300;
  for (int k = 1; k <= 10000; ++k) {
    const double e = k / 10000.0;
    peak = std::max(peak, 20 * std::log(e) + (e - 1) * 20 * std::log(0.01));
  }
  CHECK(std::log(m) <= peak + 1e-9);
  CHECK(std::abs(std::log(m) - std::log(integrate_martingale(small))) < 1e-4);
  CHECK_THROWS_AS(mixture_martingale(std::vector<double>{0.0}), ArgumentError);
  CHECK_THROWS_AS(mixture_martingale(std::vector<double>{}), ArgumentError);
}

TEST_CASE("CUSUM update") {
  CHECK(cusum_update(0, std::exp(-3.0), 0.5) == 0.0);
  CHECK(cusum_update(1, std::exp(2.0), 0.5) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(cusum_update(1.75, 1.0, 0.0) == 1.75);
}

TEST_CASE("frame scoring") {
  PostprocessConfig cfg;
  cfg.decay = 0.0;
  DetectorState st;
  CHECK(score_pvalue(st, 1.0, cfg) == 0.0);
  CHECK(st.p_window.size() == 1);
  for (double d : {0.0, 0.1, 1.0}) {
    cfg.decay = d;
    DetectorState s;
    for (int i = 0; i < 60; ++i) CHECK(score_pvalue(s, 1.0, cfg) == 0.0);
    CHECK(s.p_window.size() == 20);
    CHECK(s.frames_seen == 60);
  }
  cfg.decay = 0.1;
  DetectorState s;
  double prev = -1;
  int crossed = -1;
  for (int i = 0; i < 60; ++i) {
    const double v = score_pvalue(s, 0.01, cfg);
    if (i >= cfg.window) CHECK(v > prev);
    if (crossed < 0 && v > 50.0) crossed = i;
    prev = v;
  }
  CHECK(crossed >= 0);
  CHECK(crossed <= cfg.window + 5);

  const auto calib = one_to_nine();
  DetectorState t;
  net::LatentOutput lat{{0}, {1}, DType::kF32};
  CHECK(score_frame(t, lat, calib, cfg) == 0.0);
  lat.precision = DType::kQInt8;
  CHECK_THROWS_AS(score_frame(t, lat, calib, cfg), Error);
}

TEST_CASE("AUROC examples and brute-force agreement") {
  CHECK(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.3, 0.4}) == 1.0);
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.2}, std::vector<double>{0.2, 0.1, 0.2}) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.4}, std::vector<double>{0.2, 0.3}) == 0.5);
  Rng rng = make_rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = uniform_int(rng, 1, 50), m = uniform_int(rng, 1, 50);
    std::vector<double> a(n), b(m);
    for (auto& v : a) v = double(uniform_int(rng, 0, 12));
    for (auto& v : b) v = double(uniform_int(rng, 3, 15));
    const double got = auroc(a, b);
    CHECK(got == brute_auroc(a, b));
    CHECK(got + auroc(b, a) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> ta(a), tb(b);
    for (auto& v : ta) v = std::exp(0.3 * v) - 7;
    for (auto& v : tb) v = std::exp(0.3 * v) - 7;
    CHECK(auroc(ta, tb) == got);
  }
  CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<double>{1.0}), ArgumentError);
}

TEST_CASE("harmonic fitness") {
  CHECK(std::abs(harmonic_fitness(std::vector<double>{0.823, 0.5}) - 0.6221) < 1e-4);
  CHECK(harmonic_fitness(std::vector<double>{0.7, 0.7, 0.7}) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(harmonic_fitness(std::vector<double>{0.9, 0.0}) == 0.0);
  Rng rng = make_rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(uniform_int(rng, 1, 6));
    for (auto& v : a) v = uniform(rng, 0.05, 1.0);
    const double arith = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
    CHECK(harmonic_fitness(a) <= arith + 1e-15);
  }
  CHECK_THROWS_AS(harmonic_fitness(std::vector<double>{1.2}), ArgumentError);
}

TEST_CASE("calibration sets") {
  const net::Geometry g{1, 8, 8};
  const auto model = net::init_model(net::bvae_spec(g, 4), 3);
  Rng rng = make_rng(8);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 12; ++i) {
    std::vector<float> v(64);
    for (auto& x : v) x = float(uniform01(rng));
    imgs.push_back(Tensor::f32({1, 8, 8}, v));
  }
  PostprocessConfig cfg;
  const auto a = build_calibration(model, imgs, cfg);
  const auto b = build_calibration(model, imgs, cfg);
  CHECK(a.scores == b.scores);
  CHECK(std::is_sorted(a.scores.begin(), a.scores.end()));
  CHECK(a.model_checksum == net::model_checksum(model));
  const auto q = build_calibration(net::quantize_model(model, imgs), imgs, cfg);
  CHECK(q.precision == DType::kQInt8);

  const auto text = calibration_to_csv(q);
  const auto back = calibration_from_csv(text);
  CHECK(back.scores == q.scores);
  CHECK(back.precision == q.precision);
  CHECK(back.model_checksum == q.model_checksum);
  CHECK_THROWS_AS(calibration_from_csv("# precision=f32\nscore\n"), FormatError);
  CHECK_THROWS_AS(calibration_from_csv("# precision=f32\nscore\nabc\n"), FormatError);
  CHECK_THROWS_AS(calibration_from_csv("score\n1\n"), FormatError);
}

TEST_CASE("KL dim gaps and top-k selection") {
  const double gaps[] = {0.1, 2.0, -1.0, 2.0, 0.5};
  CHECK(top_k_dims(gaps, 1) == std::vector<int>{1});
  CHECK(top_k_dims(gaps, 2) == std::vector<int>{1, 3});
  CHECK(top_k_dims(gaps, 3) == std::vector<int>{1, 3, 4});
  CHECK_THROWS_AS(top_k_dims(gaps, 0), ArgumentError);
  CHECK_THROWS_AS(top_k_dims(gaps, 6), ArgumentError);

  const net::Geometry g{1, 8, 8};
  const net::Encoder enc(net::init_model(net::bvae_spec(g, 4), 3));
  std::vector<Tensor> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(Tensor::f32({1, 8, 8}, std::vector<float>(64, 0.1f * i)));
    b.push_back(Tensor::f32({1, 8, 8}, std::vector<float>(64, 0.5f + 0.1f * i)));
  }
  const auto same = kl_dim_gaps(enc, a, a);
  REQUIRE(same.size() == 4);
  for (double v : same) CHECK(v == 0.0);
  const auto ab = kl_dim_gaps(enc, a, b), ba = kl_dim_gaps(enc, b, a);
  for (std::size_t j = 0; j < 4; ++j) CHECK(ab[j] == doctest::Approx(-ba[j]).epsilon(1e-12));
  CHECK_THROWS_AS(kl_dim_gaps(enc, a, std::vector<Tensor>{}), ArgumentError);
}
