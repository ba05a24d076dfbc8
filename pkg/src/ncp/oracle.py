"""Exact references on finite joint distributions.

For a joint pmf ``P`` on ``X x Y`` with marginals ``mu`` and ``nu``, the
deflated conditional expectation operator is represented in Euclidean
coordinates by ``K = D_mu^{-1/2} P D_nu^{-1/2} - sqrt(mu) sqrt(nu)^T``.
Its SVD, mapped back through ``D_mu^{-1/2}`` and ``D_nu^{-1/2}``, gives the
true singular triplets against which learned models are checked.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .inference import FeatureOperator

__all__ = [
    "DiscreteJoint",
    "OperatorTruth",
    "build_truth",
    "chi2_optimum",
    "exact_cond_stats",
    "truncated_model_prob",
    "lemma1_check",
    "finite_diff_gradient",
    "random_joint",
    "separated_joint",
    "sample_joint",
    "one_hot",
    "exact_operator",
    "principal_angles",
]


@dataclass
class DiscreteJoint:
    pmf: np.ndarray
    y_labels: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.pmf, dtype=np.float64)
        if P.ndim != 2:
            raise ValueError("pmf must be a matrix")
        if np.any(P < 0):
            raise ValueError("pmf entries must be nonnegative")
        if abs(P.sum() - 1.0) > 1e-12:
            raise ValueError(f"pmf must sum to 1 (got {P.sum():.15g})")
        if np.any(P.sum(axis=1) <= 0) or np.any(P.sum(axis=0) <= 0):
            raise ValueError("every marginal state needs positive mass")
        self.pmf = P
        if self.y_labels is None:
            self.y_labels = np.arange(1.0, P.shape[1] + 1.0)
        self.y_labels = np.asarray(self.y_labels, dtype=np.float64)

    @property
    def mu(self):
        return self.pmf.sum(axis=1)

    @property
    def nu(self):
        return self.pmf.sum(axis=0)

    @property
    def shape(self):
        return self.pmf.shape

    @classmethod
    def from_csv(cls, path, normalize=False):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        try:
            P = np.array([[float(v) for v in r] for r in rows])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric cell ({exc})") from None
        if normalize:
            P = P / P.sum()
        return cls(P)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in self.pmf])


@dataclass
class OperatorTruth:
    singular_values: np.ndarray
    u: np.ndarray  # (|X|, r), columns are u*_i over states
    v: np.ndarray  # (|Y|, r)
    u_tilde: np.ndarray
    v_tilde: np.ndarray
    K: np.ndarray

    @property
    def rank_tol(self):
        return int(np.sum(self.singular_values > 1e-12))

    def sigma_at(self, i):
        """``sigma*_i`` with 1-based index; zero past the end of the spectrum."""
        s = self.singular_values
        return float(s[i - 1]) if 1 <= i <= s.size else 0.0

    def has_ties(self, d, tol=1e-9):
        s = self.singular_values
        return bool(np.any(np.abs(np.diff(s[: d + 1])) < tol))


def exact_operator(joint):
    mu, nu = joint.mu, joint.nu
    return joint.pmf / np.sqrt(mu)[:, None] / np.sqrt(nu)[None, :] - np.outer(np.sqrt(mu), np.sqrt(nu))


def build_truth(joint):
    """SVD of the deflated conditional expectation operator of ``joint``."""
    mu, nu = joint.mu, joint.nu
    if np.any(mu <= 0) or np.any(nu <= 0):
        raise ValueError("zero marginal mass")
    K = exact_operator(joint)
    Ut, s, Vt = np.linalg.svd(K, full_matrices=False)
    u = Ut / np.sqrt(mu)[:, None]
    v = Vt.T / np.sqrt(nu)[:, None]
    return OperatorTruth(s, u, v, Ut, Vt.T, K)


def chi2_optimum(truth, d):
    """Minimum of the NCP loss with ``d`` components: ``-sum_{i<=d} sigma_i^2``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return -float(np.sum(truth.singular_values[:d] ** 2))


def _mask(states, size):
    m = np.zeros(size, dtype=bool)
    m[np.asarray(list(states), dtype=int)] = True
    return m


def exact_cond_stats(joint, A, B):
    """Brute-force ``P[B | A]``, ``P[B]``, ``P[A]`` and moments of Y given A."""
    P = joint.pmf
    a = _mask(A, P.shape[0])
    b = _mask(B, P.shape[1])
    pa = P[a].sum()
    if pa <= 0:
        raise ValueError("conditioning set A has zero mass")
    cond = P[a].sum(axis=0) / pa
    labels = joint.y_labels
    mean = float(cond @ labels)
    var = float(cond @ labels**2 - mean**2)
    return {
        "p_b_given_a": float(cond[b].sum()),
        "p_b": float(P[:, b].sum()),
        "p_a": float(pa),
        "mean": mean,
        "cov": np.array([[var]]),
    }


def truncated_model_prob(truth, d, joint, A, B):
    """Rank-``d`` approximation of ``P[B | A]`` built from the exact triplets."""
    mu, nu = joint.mu, joint.nu
    a = _mask(A, mu.size)
    b = _mask(B, nu.size)
    pa = mu[a].sum()
    if pa <= 0:
        raise ValueError("conditioning set A has zero mass")
    pb = nu[b].sum()
    d = min(int(d), truth.singular_values.size)
    if d == 0:
        return float(pb)
    eu = (mu[a] @ truth.u[a, :d]) / pa
    ev = nu[b] @ truth.v[b, :d]
    return float(pb + np.sum(truth.singular_values[:d] * eu * ev))


def lemma1_check(truth, d, joint, A, B, tol=1e-10):
    """Check the rank-``d`` error against ``sigma*_{d+1} sqrt(P[B] / P[A])``.

    Returns ``(ok, slack)`` with ``slack = bound - error``.
    """
    stats = exact_cond_stats(joint, A, B)
    approx = truncated_model_prob(truth, d, joint, A, B)
    err = abs(stats["p_b_given_a"] - approx)
    bound = truth.sigma_at(d + 1) * np.sqrt(stats["p_b"] / stats["p_a"])
    slack = bound - err
    return bool(slack >= -tol), float(slack)


def finite_diff_gradient(fn, point, step=1e-5):
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h``."""
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(point, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(p)
        flat[i] = orig - step
        fm = fn(p)
        flat[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad.reshape(p.shape)


# --------------------------------------------------------------------------
# joint constructors and samplers
# --------------------------------------------------------------------------


def random_joint(nx, ny, seed, concentration=1.0):
    rng = np.random.default_rng(seed)
    P = rng.gamma(concentration, size=(nx, ny)) + 1e-3
    return DiscreteJoint(P / P.sum())


def separated_joint(size=8, d=4, gap=0.05, seed=0, max_tries=10_000):
    """Deterministic search for a joint whose top ``d + 1`` singular values
    are pairwise separated by at least ``gap``."""
    rng = np.random.default_rng(seed)
    idx = np.arange(size)
    for _ in range(max_tries):
        width = rng.uniform(0.8, 2.5)
        base = np.exp(-((idx[:, None] - idx[None, :]) ** 2) / (2 * width**2))
        P = base * rng.gamma(2.0, size=(size, size)) + 0.01
        P /= P.sum()
        joint = DiscreteJoint(P)
        s = build_truth(joint).singular_values
        if np.all(-np.diff(s[: d + 1]) >= gap) and s[d - 1] > 2 * gap:
            return joint
    raise RuntimeError("no separated joint found")


def sample_joint(joint, n, seed):
    """Draw ``n`` state pairs ``(i, j)`` from the pmf."""
    rng = np.random.default_rng(seed)
    nx, ny = joint.shape
    flat = rng.choice(nx * ny, size=n, p=joint.pmf.ravel())
    return flat // ny, flat % ny


def one_hot(states, size):
    out = np.zeros((states.size, size))
    out[np.arange(states.size), states] = 1.0
    return out


def exact_feature_operator(joint, d=None, counts=None):
    """A :class:`FeatureOperator` built from the exact singular functions.

    The retained outputs are the Y states replicated according to
    ``counts`` (or, by default, exactly ``nu`` when the pmf is rational with
    small denominators) so empirical averages coincide with ``nu``.
    Inputs are one-hot state vectors.
    """
    truth = build_truth(joint)
    r = truth.singular_values.size if d is None else min(d, truth.singular_values.size)
    P = joint.pmf
    if counts is None:
        counts = _integer_counts(P)
    xi, yj = np.nonzero(counts)
    reps = counts[xi, yj]
    xs = np.repeat(xi, reps)
    ys = np.repeat(yj, reps)
    nx, ny = P.shape

    def u_fn(x):
        states = np.argmax(np.asarray(x), axis=1)
        return truth.u[states, :r]

    return FeatureOperator(
        u_fn,
        truth.v[ys, :r],
        joint.y_labels[ys],
        truth.singular_values[:r],
        x_train=one_hot(xs, nx),
    ), truth


def _integer_counts(P, max_den=10_000):
    for den in range(1, max_den + 1):
        c = P * den
        if np.allclose(c, np.round(c), atol=1e-9):
            return np.round(c).astype(int)
    raise ValueError("pmf is not rational with a small denominator; pass counts")


def principal_angles(A, B):
    """Principal angles (radians) between the column spans of ``A`` and ``B``."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))
