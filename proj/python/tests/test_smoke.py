# Copyright 2026 The oodkit Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json

import numpy as np
import pytest

import oodkit


def test_icp_pvalue_counts_ties():
    calib = [0.1, 0.2, 0.3, 0.4]
    assert oodkit.icp_pvalue(0.25, calib) == pytest.approx(3 / 5)
    assert oodkit.icp_pvalue(10.0, calib) == pytest.approx(1 / 5)


def test_auroc_and_fitness():
    assert oodkit.auroc([0.0, 0.1], [0.9, 1.0]) == 1.0
    assert oodkit.auroc([1.0], [1.0]) == 0.5
    assert oodkit.harmonic_fitness([0.5, 1.0]) == pytest.approx(2 / 3)


def test_mixture_martingale_closed_form():
    assert oodkit.mixture_martingale([1.0] * 4) == pytest.approx(1 / 5, rel=1e-3)
    assert oodkit.mixture_martingale([0.01] * 10) > 100


def test_cusum_clamps_at_zero():
    assert oodkit.cusum_update(0.0, 0.5, 1.0) == 0.0


def test_f16_round_trip():
    assert oodkit.f16_to_f32(oodkit.f32_to_f16(1.5)) == 1.5


def test_quantize_round_trip_within_half_step():
    x = np.linspace(-1, 2, 50, dtype=np.float32)
    scale, zp = oodkit.quant_params(x)
    back = oodkit.dequantize(oodkit.quantize(x, scale, zp), scale, zp)
    assert np.max(np.abs(back - x)) <= scale / 2 + 1e-6


def test_imaging_ops():
    img = oodkit.synth_scene(0, 0)
    assert img.shape == (72, 96, 3) and img.dtype == np.uint8
    gray = oodkit.to_grayscale(img)
    assert gray.shape == (72, 96, 1)
    small = oodkit.resize(img, 32, 24, "area")
    assert small.shape == (24, 32, 3)
    assert np.array_equal(oodkit.augment(img), img)
    with pytest.raises(ValueError):
        oodkit.resize(img, 32, 24, "lanczos")


def test_farneback_recovers_scene_shift():
    a = oodkit.to_grayscale(oodkit.synth_scene(1, 0))
    b = oodkit.to_grayscale(oodkit.synth_scene(1, 1))
    u, v = oodkit.farneback_flow(a, b)
    assert u.shape == (72, 96)
    assert abs(float(np.median(u[8:-8, 8:-8])) - 2.0) < 0.5
    assert abs(float(np.median(v[8:-8, 8:-8]))) < 0.5


def test_model_encode_and_serialize(tmp_path):
    m = oodkit.bvae_model(1, 16, 16, seed=3)
    x = np.random.default_rng(0).random((1, 16, 16), dtype=np.float32)
    mu, var = m.encode(x)
    assert len(mu) == 8 and min(var) > 0
    path = str(tmp_path / "m.oodm")
    m.save(path)
    assert oodkit.load_model(path) == m
    with pytest.raises(oodkit.ShapeError):
        m.encode(np.zeros((1, 8, 8), dtype=np.float32))
    with open(path, "r+b") as f:
        f.write(b"XXXX")
    with pytest.raises(oodkit.FormatError):
        oodkit.load_model(path)


def test_genome_space_and_ga():
    space = oodkit.genome_space("optflow", "S")
    assert len(space) == 2 * 4 * 5
    target = "optflow:48x64:area:d6"
    score = lambda k: 1.0 if k == target else 0.5 * (k.split(":")[1] == "48x64")
    best, fit, curve, csv = oodkit.run_ga("optflow", space, score, generations=30, seed=1)
    assert fit == max(curve)
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    assert csv.startswith("generation,genome")


def test_synthetic_stream_timing():
    t = oodkit.run_synthetic_stream([2.0, 2.0], frames=40, warmup=10)
    assert t["count"] == 30
    assert t["mean_ms"] >= 4.0


def test_experiment_config_defaults():
    cfg = json.loads(oodkit.experiment_config('{"family": "bvae"}'))
    assert cfg["requirements"]["min_auroc"] == 0.85
    with pytest.raises(ValueError):
        oodkit.experiment_config('{"family": "nope"}')


def test_tiny_detector_end_to_end():
    ds_cfg = json.loads(oodkit.default_dataset_config("bvae"))
    ds_cfg["scene"]["n_scenes"] = 1
    ds_cfg["runs"] = 2
    ds = oodkit.generate_dataset(json.dumps(ds_cfg))
    assert ds.count("train") > 0 and ds.partitions()
    exp = json.dumps({"family": "bvae", "train": {"epochs": 1}})
    b = oodkit.build_detector("bvae:8x8:bilinear:gray", ds, exp)
    assert b.genome == "bvae:8x8:bilinear:gray" and b.precision == "f32"
    fit, aurocs = oodkit.evaluate(b, ds)
    assert 0.0 <= fit <= 1.0 and set(aurocs) == set(ds.partitions())
    q = oodkit.convert_bundle(b, "qint8", ds)
    assert q.precision == "qint8"
    scores = oodkit.stream_scores(b, ds, frames=10)
    assert len(scores) == 10 and all(s is not None for s in scores)
