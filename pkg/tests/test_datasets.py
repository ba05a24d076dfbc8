import numpy as np
import pytest
from scipy import integrate, stats as sps

from ncp import datasets as ds
from ncp.datasets import DataError, GeneratorSpec

MEAN_FAMILIES = [f for f in ds.FAMILIES if f != "CauchyModel"]


class TestGenerate:
    def test_linear_gaussian_moments(self):
        s = ds.generate(GeneratorSpec("LinearGaussian", n=100_000, seed=0))
        r = (s.y - s.x)[:, 0]
        assert abs(r.mean()) <= 0.01
        assert abs(r.var() - 0.1) <= 0.01

    def test_econ_density_nonnegative_x(self):
        s = ds.generate(GeneratorSpec("EconDensity", n=5000, seed=1))
        assert np.all(s.x >= 0)

    def test_sphere_discrete_band(self):
        spec = GeneratorSpec("SphereHD", n=20_000, seed=2, params={"law": "discrete"})
        s = ds.generate(spec)
        theta = ds.sphere_angle(spec, s.x)
        band = (theta >= np.pi) & (theta < 1.5 * np.pi)
        assert band.sum() > 1000
        assert np.all(s.y[band, 0] == 3.0)

    @pytest.mark.parametrize("dim", [100, 500])
    def test_sphere_unit_norm(self, dim):
        s = ds.generate(GeneratorSpec("SphereHD", n=500, seed=0, params={"dim": dim}))
        np.testing.assert_allclose(np.linalg.norm(s.x, axis=1), 1.0, atol=1e-12)

    def test_dimensions(self):
        assert ds.generate(GeneratorSpec("LGGMD", n=10)).dx == 20
        assert ds.generate(GeneratorSpec("GaussianMixture", n=10)).dy == 1

    @pytest.mark.parametrize("family", ds.FAMILIES)
    def test_deterministic(self, family):
        a = ds.generate(GeneratorSpec(family, n=200, seed=5))
        b = ds.generate(GeneratorSpec(family, n=200, seed=5))
        c = ds.generate(GeneratorSpec(family, n=200, seed=6))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)

    @pytest.mark.parametrize(
        "family,params",
        [
            ("Nope", {}),
            ("LinearGaussian", {"noise_var": 0.0}),
            ("ArmaJump", {"jump_prob": 1.5}),
            ("SkewNormal", {"scale": (0.5, 1.0)}),
            ("SphereHD", {"law": "uniform"}),
        ],
    )
    def test_invalid(self, family, params):
        with pytest.raises(DataError):
            GeneratorSpec(family, params=params)

    def test_invalid_n(self):
        with pytest.raises(DataError):
            GeneratorSpec("LinearGaussian", n=0)

    def test_sample_set_checks(self):
        with pytest.raises(DataError):
            ds.SampleSet(np.ones(3), np.ones(4))
        with pytest.raises(DataError):
            ds.SampleSet([1.0, np.nan], [1.0, 2.0])


@pytest.mark.parametrize("family", MEAN_FAMILIES)
def test_slab_residual_mean(family):
    # E[Y - m(X) | X in slab] = 0 for the analytic conditional mean m
    spec = GeneratorSpec(family, n=100_000, seed=11)
    s = ds.generate(spec)
    x0 = s.x[:, 0]
    lo, hi = np.quantile(x0, [0.45, 0.55])
    slab = (x0 >= lo) & (x0 <= hi)
    r = s.y[slab, 0] - ds.true_cond_mean(spec, s.x[slab])
    se = r.std() / np.sqrt(r.size)
    assert abs(r.mean()) <= 5 * se + 1e-12


class TestTrueCdf:
    def test_examples(self):
        assert ds.true_cdf(GeneratorSpec("LinearGaussian"), 0.0, 0.0)[0] == pytest.approx(0.5)
        assert ds.true_cdf(GeneratorSpec("LaplaceModel"), 1.0, 1.0)[0] == pytest.approx(0.5)
        assert ds.true_cdf(GeneratorSpec("CauchyModel"), 0.0, 1.0)[0] == pytest.approx(0.75)

    @pytest.mark.parametrize("family", ds.FAMILIES)
    def test_valid_cdf(self, family):
        spec = GeneratorSpec(family, n=50, seed=0)
        s = ds.generate(spec)
        t = np.linspace(-20, 40, 2001)
        for x in s.x[:5]:
            F = ds.true_cdf(spec, x, t)
            assert np.all((F >= 0) & (F <= 1)) and np.all(np.diff(F) >= -1e-15)

    def test_matches_samples(self):
        # empirical CDF near a fixed x against the closed form
        for family in ("EconDensity", "ArmaJump", "SkewNormal", "GaussianMixture", "LaplaceModel"):
            spec = GeneratorSpec(family, n=200_000, seed=3)
            s = ds.generate(spec)
            x0 = np.median(s.x[:, 0])
            near = np.abs(s.x[:, 0] - x0) < 0.01 * s.x[:, 0].std()
            y = np.sort(s.y[near, 0])
            F = ds.true_cdf(spec, [x0], y)
            ks = np.max(np.abs(np.arange(1, y.size + 1) / y.size - F))
            assert ks < 2.0 / np.sqrt(y.size) + 0.02, family

    def test_skew_normal_integrates_density(self):
        spec = GeneratorSpec("SkewNormal")
        loc, scale, shape = 0.3, 1.15, 1.2  # affine defaults at x = 0.3
        val, _ = integrate.quad(lambda z: sps.skewnorm.pdf(z, shape, loc, scale), -np.inf, 0.9)
        assert ds.true_cdf(spec, 0.3, 0.9)[0] == pytest.approx(val, abs=1e-8)

    def test_unsupported(self):
        spec = GeneratorSpec("CauchyModel")
        with pytest.raises(DataError):
            ds.true_cond_mean(spec, [[1.0]])

    def test_sample_set_handle(self):
        s = ds.generate(GeneratorSpec("LinearGaussian", n=5))
        assert s.true_cdf(0.0, 0.0)[0] == pytest.approx(0.5)
        with pytest.raises(DataError):
            ds.SampleSet(s.x, s.y).true_cdf(0.0, 0.0)


class TestLoadCsv:
    def write(self, path, n=10):
        rows = ["a,b,c"] + [f"{i},{2 * i},{i % 3}" for i in range(n)]
        path.write_text("\n".join(rows) + "\n")
        return path

    def test_split_sizes(self, tmp_path):
        tr, va, te = ds.load_csv(self.write(tmp_path / "d.csv"), ["a"], ["b"])
        assert (len(tr), len(va), len(te)) == (8, 1, 1)
        assert sorted(np.concatenate([tr.x, va.x, te.x]).ravel()) == list(range(10))

    def test_seeded(self, tmp_path):
        p = self.write(tmp_path / "d.csv")
        a = ds.load_csv(p, ["a"], ["b"], seed=4)
        b = ds.load_csv(p, ["a"], ["b"], seed=4)
        c = ds.load_csv(p, ["a"], ["b"], seed=5)
        assert np.array_equal(a[0].x, b[0].x)
        assert not np.array_equal(a[0].x, c[0].x)

    def test_missing_column(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            ds.load_csv(self.write(tmp_path / "d.csv"), ["a"], ["z"])

    def test_bad_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n3,x\n")
        with pytest.raises(DataError, match="row 3"):
            ds.load_csv(p, ["a"], ["b"])

    def test_zscore_uses_train_stats(self, tmp_path):
        tr, va, _ = ds.load_csv(self.write(tmp_path / "d.csv", 50), ["a"], ["b"], scaling="zscore")
        assert tr.x.mean() == pytest.approx(0.0, abs=1e-12)
        assert tr.x.std() == pytest.approx(1.0)

    def test_roundtrip(self, tmp_path):
        s = ds.generate(GeneratorSpec("LinearGaussian", n=20))
        s.to_csv(tmp_path / "s.csv")
        tr, va, te = ds.load_csv(tmp_path / "s.csv", ["x0"], ["y0"], fractions=(1.0, 0.0, 0.0))
        assert np.array_equal(np.sort(tr.y.ravel()), np.sort(s.y.ravel()))
