import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ncp import datasets as ds
from ncp import evalbench as eb
from ncp import inference as inf
from ncp.inference import CdfGrid, FeatureOperator
from ncp.postprocess import whiten
from ncp.trainer import TrainConfig, TrainingDiverged

SMALL = TrainConfig(epochs=3, batch_size=64, patience=3, d=4, hidden_widths=(8, 8))


class TestKs:
    def test_examples(self):
        t = np.linspace(0, 1, 10_001)
        g = CdfGrid(t, t)
        assert eb.ks_distance(g, g) == 0.0
        jump = CdfGrid(t, (t >= 0.5).astype(float))
        assert eb.ks_distance(CdfGrid(t, np.zeros_like(t)), jump) == 1.0
        assert eb.ks_distance(g, CdfGrid(t, t**2)) == pytest.approx(0.25, abs=1e-8)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            eb.ks_distance(CdfGrid([0.0, 1.0], [0.0, 1.0]), CdfGrid([0.0, 2.0], [0.0, 1.0]))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (3, 20), elements=st.floats(0, 1)))
    def test_metric_axioms(self, F):
        t = np.arange(20.0)
        a, b, c = (CdfGrid(t, row) for row in F)
        assert eb.ks_distance(a, b) == eb.ks_distance(b, a)
        assert eb.ks_distance(a, c) <= eb.ks_distance(a, b) + eb.ks_distance(b, c) + 1e-15
        assert 0.0 <= eb.ks_distance(a, b) <= 1.0


class TestConditioningPoints:
    def test_scalar(self):
        x = np.arange(101.0)
        pts = eb.conditioning_points(x)
        assert pts.shape == (19, 1)
        np.testing.assert_allclose(pts[[0, -1], 0], [5.0, 95.0])
        assert np.allclose(np.diff(pts[:, 0]), 5.0)

    def test_vector(self):
        x = np.random.default_rng(0).normal(size=(500, 3))
        pts = eb.conditioning_points(x)
        assert pts.shape == (19, 3)
        np.testing.assert_allclose(pts[0], np.percentile(x, 5, axis=0))


class TestReports:
    def test_empty_seeds(self):
        with pytest.raises(ValueError):
            eb.BenchmarkReport("LinearGaussian", [])

    def test_aggregates_and_serialization(self, tmp_path):
        r = eb.BenchmarkReport("LG", [0, 1, 2], ks={0: np.array([0.1, 0.3]), 2: np.array([0.2, 0.2])}, failed=[1])
        assert r.mean == pytest.approx(0.2) and r.std == pytest.approx(0.0)
        lines = r.to_csv(tmp_path / "ks.csv").splitlines()
        assert lines[0] == "dataset,seed,x_index,ks" and len(lines) == 5
        s = json.loads(r.to_json())["LG"]
        assert set(s) == {"mean", "std", "n_seeds", "n_failed", "failed_seeds"}
        assert s["failed_seeds"] == [1]

    def test_coverage_report(self):
        r = eb.CoverageReport("L", 0.1, np.array([True, False]), np.array([1.0, 3.0]),
                              np.zeros(2), np.ones(2), np.zeros(2), np.zeros(2))
        s = r.summary()
        assert s["coverage"] == 0.5 and s["mean_width"] == 2.0 and s["nominal"] == pytest.approx(0.9)
        assert len(r.to_csv().splitlines()) == 3

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            eb.run_cde_benchmark(ds.GeneratorSpec("LinearGaussian"), profile="huge", seeds=[0])


class TestRuns:
    def test_bitwise_reproducible(self):
        spec = ds.GeneratorSpec("LinearGaussian")
        a = eb.run_cde_benchmark(spec, SMALL, n=512, seeds=[0, 1])
        b = eb.run_cde_benchmark(spec, SMALL, n=512, seeds=[0, 1])
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
        assert all(np.all((k >= 0) & (k <= 1)) for k in a.ks.values())

    def test_failed_seed_recorded(self, monkeypatch):
        real = eb.train

        def flaky(data, val, config, callback=None):
            if config.seed == 1:
                raise TrainingDiverged(0)
            return real(data, val, config)

        monkeypatch.setattr(eb, "train", flaky)
        r = eb.run_cde_benchmark(ds.GeneratorSpec("LinearGaussian"), SMALL, n=512, seeds=[0, 1])
        assert r.failed == [1] and list(r.ks) == [0]
        assert np.isfinite(r.mean)

    def test_coverage_run_small(self):
        r = eb.run_coverage_benchmark(ds.GeneratorSpec("LaplaceModel"), 0.1, n_train=512, n_test=30, profile=SMALL)
        assert 0.0 <= r.coverage <= 1.0 and r.inside.size == 30
        assert np.all(r.upper > r.lower)


class TestIntervals:
    def test_zero_sigma_gives_marginal_interval(self):
        rng = np.random.default_rng(0)
        y = rng.laplace(size=(400, 1))
        op = FeatureOperator(lambda x: np.ones((x.shape[0], 3)), rng.normal(size=(400, 3)), y, np.zeros(3))
        grid = inf.default_grid(y, 1000)
        lo, hi = eb.intervals_for_model(op, np.zeros((5, 1)), 0.1, grid)
        marginal = CdfGrid(grid, inf.sanitize_cdf((y[:, 0][None, :] <= grid[:, None]).mean(1)))
        ci = inf.interval_search(marginal, 0.1)
        np.testing.assert_array_equal(lo, ci.lower)
        np.testing.assert_array_equal(hi, ci.upper)
        inside = ((y[:, 0] > ci.lower) & (y[:, 0] <= ci.upper)).mean()
        assert inside >= 0.9 - 1e-12

    def test_width_monotone_in_alpha(self, tiny_fit, lg_data):
        op = whiten(tiny_fit)
        x = lg_data[1].x[:40]
        widths = []
        for alpha in (0.05, 0.1, 0.3, 0.5):
            lo, hi = eb.intervals_for_model(op, x, alpha)
            widths.append(hi - lo)
        widths = np.array(widths)
        assert np.all(np.diff(widths, axis=0) <= 1e-12)
        assert np.mean(widths[3]) < np.mean(widths[1])
