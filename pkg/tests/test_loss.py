import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ncp import embeddings as emb
from ncp import loss as L
from ncp import oracle
from ncp.checks import population_loss


def cov(U, V, s):
    return float(L.loss_cov_form(U, V, s).value)


def reg(U, V):
    return float(L.reg_cov_form(U, V).value)


class TestCovarianceForm:
    def test_constant_features(self):
        assert cov(np.ones((5, 2)), 3 * np.ones((5, 2)), np.ones(2)) == 0.0

    def test_aligned(self):
        u = np.array([[1.0], [-1.0]])
        assert cov(u, u, [1.0]) == pytest.approx(-1.0)

    def test_anti_aligned(self):
        u = np.array([[1.0], [-1.0]])
        assert cov(u, -u, [1.0]) == pytest.approx(3.0)

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            L.loss_cov_form(np.ones((1, 2)), np.ones((1, 2)), np.ones(2))

    def test_matches_trace_formula(self):
        rng = np.random.default_rng(0)
        U, V = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        s = rng.uniform(size=3)
        Su = (U - U.mean(0)) * np.sqrt(s)
        Sv = (V - V.mean(0)) * np.sqrt(s)
        n = 30
        ref = np.trace((Su.T @ Su / n) @ (Sv.T @ Sv / n)) - 2 * np.trace(Su.T @ Sv / n)
        assert cov(U, V, s) == pytest.approx(ref, abs=1e-12)


class TestPairwise:
    def test_zeros(self):
        z = np.zeros(3)
        assert L.loss_pairwise(z, z, z, z, np.ones(3)) == 0.0

    def test_ones(self):
        one = np.ones(1)
        assert L.loss_pairwise(one, one, one, one, one) == pytest.approx(-1.0)

    def test_signs(self):
        assert L.loss_pairwise([1.0], [-1.0], [1.0], [-1.0], [1.0]) == pytest.approx(-1.0)

    def test_reg_examples(self):
        z = np.zeros(1)
        assert L.reg_pairwise(z, z, z, z) == pytest.approx(2.0)
        assert L.reg_pairwise([1.0], [-1.0], [1.0], [-1.0]) == pytest.approx(-4.0)
        e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert L.reg_pairwise(e1, e1, e2, e2) == pytest.approx(6.0)


class TestRegCovForm:
    def test_alternating(self):
        u = np.array([[1.0], [-1.0]] * 3)
        assert reg(u, u) == pytest.approx(0.0)

    def test_constant(self):
        u = np.ones((4, 1))
        assert reg(u, u) == pytest.approx(4.0)

    def test_signed_basis(self):
        # rows +-e_i each once: E[uu^T] = I/d, mean 0
        d = 3
        U = np.vstack([np.eye(d), -np.eye(d)])
        assert reg(U, U) == pytest.approx(2 * d * (1.0 / d - 1.0) ** 2)

    def test_orthonormal_centered_features_give_zero(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(rng.normal(size=(40, 3)) - 0)
        Z = np.hstack([np.ones((40, 1)), rng.normal(size=(40, 3))])
        Q, _ = np.linalg.qr(Z)
        U = Q[:, 1:] * np.sqrt(40)  # orthogonal to the constant, unit second moment
        assert reg(U, U) == pytest.approx(0.0, abs=1e-10)


feature_sets = st.integers(2, 12).flatmap(
    lambda n: st.integers(1, 4).flatmap(
        lambda d: st.tuples(
            arrays(np.float64, (n, d), elements=st.floats(-3, 3)),
            arrays(np.float64, (n, d), elements=st.floats(-3, 3)),
            arrays(np.float64, (d,), elements=st.floats(0, 1)),
        )
    )
)


@settings(max_examples=60, deadline=None)
@given(feature_sets)
def test_all_pairs_identity(data):
    U, V, s = data
    assert L.pairwise_loss_all_pairs(U, V, s) == pytest.approx(cov(U, V, s), abs=1e-10)
    assert L.pairwise_reg_all_pairs(U, V) == pytest.approx(reg(U, V), abs=1e-10)


class TestEstimators:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.U1, self.U2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        self.V1, self.V2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        self.s = rng.uniform(size=3)

    def test_covariance_form_uses_pooled_batch(self):
        l, r = L.loss_terms(self.U1, self.U2, self.V1, self.V2, self.s, "covariance_form")
        U = np.vstack([self.U1, self.U2])
        V = np.vstack([self.V1, self.V2])
        assert float(l.value) == pytest.approx(cov(U, V, self.s), abs=1e-12)
        assert float(r.value) == pytest.approx(reg(U, V), abs=1e-12)

    def test_ustat_is_cross_pair_average(self):
        l, r = L.loss_terms(self.U1, self.U2, self.V1, self.V2, self.s, "pairwise_ustat")
        m = np.vstack([self.U1, self.U2]).mean(0), np.vstack([self.V1, self.V2]).mean(0)
        vals, regs = [], []
        for i in range(6):
            for j in range(6):
                vals.append(L.loss_pairwise(self.U1[i] - m[0], self.U2[j] - m[0], self.V1[i] - m[1], self.V2[j] - m[1], self.s))
                regs.append(L.reg_pairwise(self.U1[i], self.U2[j], self.V1[i], self.V2[j]))
        assert float(l.value) == pytest.approx(np.mean(vals), abs=1e-12)
        assert float(r.value) == pytest.approx(np.mean(regs), abs=1e-12)

    def test_batch_mean_is_aligned_average(self):
        l, r = L.loss_terms(self.U1, self.U2, self.V1, self.V2, self.s, "pairwise_batch_mean")
        m = np.vstack([self.U1, self.U2]).mean(0), np.vstack([self.V1, self.V2]).mean(0)
        vals = [
            L.loss_pairwise(self.U1[i] - m[0], self.U2[i] - m[0], self.V1[i] - m[1], self.V2[i] - m[1], self.s)
            for i in range(6)
        ]
        regs = [L.reg_pairwise(self.U1[i], self.U2[i], self.V1[i], self.V2[i]) for i in range(6)]
        assert float(l.value) == pytest.approx(np.mean(vals), abs=1e-12)
        assert float(r.value) == pytest.approx(np.mean(regs), abs=1e-12)

    def test_all_pairs_ustat_matches_covariance_form(self):
        # ustat on (B, B) averages over all n^2 ordered pairs of one pooled batch
        U = np.vstack([self.U1, self.U2])
        V = np.vstack([self.V1, self.V2])
        l, _ = L.loss_terms(U, U, V, V, self.s, "pairwise_ustat")
        assert float(l.value) == pytest.approx(cov(U, V, self.s), abs=1e-10)


class TestTotalLoss:
    def setup_method(self):
        self.model = emb.init(emb.MlpSpec(1, (4,), 2), emb.MlpSpec(1, (4,), 2), 2, 0)
        rng = np.random.default_rng(0)
        self.b1 = (rng.normal(size=(5, 1)), rng.normal(size=(5, 1)))
        self.b2 = (rng.normal(size=(5, 1)), rng.normal(size=(5, 1)))

    def test_gamma_adds_reg(self):
        total, l, r = L.total_loss(self.b1, self.b2, self.model, L.LossConfig(1.0))
        assert float(total.value) == pytest.approx(float(l.value) + float(r.value), abs=1e-12)

    def test_constant_features_zero(self):
        for p in self.model.u.parameters() + self.model.v.parameters():
            p.value = np.zeros_like(p.value)
        total, _, _ = L.total_loss(self.b1, self.b2, self.model, L.LossConfig(0.0))
        assert float(total.value) == 0.0

    def test_batch_mismatch(self):
        with pytest.raises(ValueError):
            L.total_loss(self.b1, (self.b2[0][:4], self.b2[1][:4]), self.model, L.LossConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            L.LossConfig(gamma=-1.0)
        with pytest.raises(ValueError):
            L.LossConfig(estimator="nope")


def test_exact_features_reach_chi2_optimum():
    joint = oracle.separated_joint(8, 4, 0.05, seed=0)
    truth = oracle.build_truth(joint)
    # sample-free check: features with the exact weights reproduce -sum sigma^2
    for d in range(1, 5):
        val = population_loss(joint, truth.u[:, :d], truth.v[:, :d], truth.singular_values[:d])
        assert val == pytest.approx(oracle.chi2_optimum(truth, d), abs=1e-8)
    # the empirical covariance form on a table replicated by exact counts agrees
    P = np.array([[0.4, 0.1], [0.1, 0.4]])
    j2 = oracle.DiscreteJoint(P)
    t2 = oracle.build_truth(j2)
    counts = (P * 10).astype(int)
    xi, yj = np.nonzero(counts)
    xs, ys = np.repeat(xi, counts[xi, yj]), np.repeat(yj, counts[xi, yj])
    val = cov(t2.u[xs, :1], t2.v[ys, :1], t2.singular_values[:1])
    assert val == pytest.approx(-0.36, abs=1e-8)
