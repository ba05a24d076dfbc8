"""Self-check suites shared by ``ncp oracle-check`` and the test suite.

Each suite returns a list of :class:`CheckResult`; a suite passes when all
its results do.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import embeddings as emb
from . import oracle
from .loss import (
    ESTIMATORS,
    LossConfig,
    loss_cov_form,
    pairwise_loss_all_pairs,
    pairwise_reg_all_pairs,
    reg_cov_form,
    total_loss,
)
from .numerics import backward

__all__ = [
    "CheckResult",
    "truth_suite",
    "chi2_suite",
    "lemma1_suite",
    "loss_identity_suite",
    "gradient_suite",
    "population_loss",
    "gradient_rel_error",
    "GRAD_FLOOR",
    "run_all",
]

# relative errors are taken against max(|analytic|, |numeric|, GRAD_FLOOR * max(1, |f|));
# the floor only matters at coordinates whose exact gradient is zero (e.g. output
# biases under a centered loss), where central differences return roundoff
GRAD_FLOOR = 1e-4


@dataclass
class CheckResult:
    suite: str
    case: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.suite}[{self.case}] {self.detail}".rstrip()


def _truth(joint, perturb):
    truth = oracle.build_truth(joint)
    if perturb:
        truth.singular_values = truth.singular_values + perturb
    return truth


def truth_suite(sizes=(2, 3, 5, 8, 12), seeds=range(10), perturb=0.0):
    """Reconstruction, weighted orthonormality, ``sigma_1 <= 1``, full-rank recovery."""
    out = []
    for size in sizes:
        for seed in seeds:
            joint = oracle.random_joint(size, size, seed)
            truth = _truth(joint, perturb)
            s, Ut, Vt = truth.singular_values, truth.u_tilde, truth.v_tilde
            rec = np.linalg.norm(truth.K - (Ut * s) @ Vt.T)
            gu = (truth.u * joint.mu[:, None]).T @ truth.u
            gv = (truth.v * joint.nu[:, None]).T @ truth.v
            ortho = max(np.abs(gu - np.eye(s.size)).max(), np.abs(gv - np.eye(s.size)).max())
            A, B = [0], list(range(max(1, size // 2)))
            exact = oracle.exact_cond_stats(joint, A, B)["p_b_given_a"]
            full = oracle.truncated_model_prob(truth, s.size, joint, A, B)
            ok = rec < 1e-10 and ortho < 1e-10 and s[0] <= 1 + 1e-10 and abs(exact - full) < 1e-12
            out.append(CheckResult(
                "truth", f"size={size},seed={seed}", bool(ok),
                f"rec={rec:.1e} ortho={ortho:.1e} s1={s[0]:.6f} full_rank_err={abs(exact - full):.1e}",
            ))
    return out


def population_loss(joint, U, V, s):
    """Covariance-form loss under the exact joint, features tabulated on states."""
    mu, nu, P = joint.mu, joint.nu, joint.pmf
    Uc = U - mu @ U
    Vc = V - nu @ V
    Cu = (Uc * mu[:, None]).T @ Uc
    Cv = (Vc * nu[:, None]).T @ Vc
    Cuv = Uc.T @ P @ Vc
    return float(np.sum(np.outer(s, s) * Cu * Cv) - 2.0 * np.sum(s * np.diag(Cuv)))


def chi2_suite(sizes=(2, 4, 8), seeds=range(10), perturb=0.0, random_draws=20):
    """True triplets attain ``-sum sigma_i^2``; random features never do better."""
    out = []
    for size in sizes:
        for seed in seeds:
            joint = oracle.random_joint(size, size, seed)
            truth = oracle.build_truth(joint)
            claimed = _truth(joint, perturb)
            rng = np.random.default_rng(seed)
            for d in range(1, size + 1):
                opt = oracle.chi2_optimum(claimed, d)
                at_truth = population_loss(joint, truth.u[:, :d], truth.v[:, :d], truth.singular_values[:d])
                worst = np.inf
                for _ in range(random_draws):
                    U = rng.normal(size=(size, d))
                    V = rng.normal(size=(size, d))
                    worst = min(worst, population_loss(joint, U, V, rng.uniform(size=d)))
                ok = abs(at_truth - opt) < 1e-10 and worst >= opt - 1e-10
                out.append(CheckResult(
                    "chi2", f"size={size},seed={seed},d={d}", bool(ok),
                    f"optimum={opt:.6f} at_truth={at_truth:.6f} best_random={worst:.6f}",
                ))
    return out


def lemma1_suite(sizes=range(2, 13), n_joints=200, seed=0, perturb=0.0):
    """Rank-d approximation bound for every d and every singleton A, B."""
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    out = []
    for k in range(n_joints):
        nx, ny = int(rng.choice(sizes)), int(rng.choice(sizes))
        joint = oracle.random_joint(nx, ny, int(rng.integers(2**31)), float(rng.uniform(0.2, 2.0)))
        truth = _truth(joint, perturb)
        worst = np.inf
        for d in range(truth.singular_values.size + 1):
            for a in range(nx):
                for b in range(ny):
                    _, slack = oracle.lemma1_check(truth, d, joint, [a], [b])
                    worst = min(worst, slack)
        out.append(CheckResult("lemma1", f"joint={k},{nx}x{ny}", bool(worst >= -1e-10), f"min_slack={worst:.3e}"))
    return out


def loss_identity_suite(trials=100, seed=0):
    """All-ordered-pairs averages equal the covariance forms (1e-10 absolute)."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(trials):
        n = int(rng.integers(2, 65))
        d = int(rng.integers(1, 9))
        U = rng.normal(size=(n, d)) + rng.normal(size=d)
        V = rng.normal(size=(n, d)) + rng.normal(size=d)
        s = rng.uniform(0.0, 1.0, size=d)
        dl = abs(pairwise_loss_all_pairs(U, V, s) - float(loss_cov_form(U, V, s).value))
        dr = abs(pairwise_reg_all_pairs(U, V) - float(reg_cov_form(U, V).value))
        out.append(CheckResult(
            "loss_identity", f"trial={k},n={n},d={d}", bool(dl < 1e-10 and dr < 1e-10),
            f"loss_diff={dl:.1e} reg_diff={dr:.1e}",
        ))
    return out


def _random_problem(rng):
    dx, dy = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    d = int(rng.integers(1, 5))
    widths = tuple(int(w) for w in rng.integers(2, 6, size=int(rng.integers(1, 3))))
    model = emb.init(emb.MlpSpec(dx, widths, d), emb.MlpSpec(dy, widths, d), d, int(rng.integers(2**31)))
    m = int(rng.integers(3, 9))
    batches = tuple((rng.normal(size=(m, dx)), rng.normal(size=(m, dy))) for _ in range(2))
    cfg = LossConfig(float(rng.choice([0.0, 1e-3, 0.1, 1.0])), str(rng.choice(ESTIMATORS)))
    return model, batches, cfg


def gradient_rel_error(model, batches, cfg, step=1e-5):
    """Per-coordinate relative error of tape gradients against central differences."""
    params = model.parameters()
    model.zero_grad()
    total, _, _ = total_loss(batches[0], batches[1], model, cfg)
    f0 = abs(float(total.value))
    backward(total)
    analytic = np.concatenate([p.grad.ravel() for p in params])
    shapes = [p.value.shape for p in params]
    sizes = [p.value.size for p in params]
    flat0 = np.concatenate([p.value.ravel() for p in params])

    def f(flat):
        pos = 0
        for p, shape, size in zip(params, shapes, sizes):
            p.value = flat[pos : pos + size].reshape(shape).copy()
            pos += size
        return float(total_loss(batches[0], batches[1], model, cfg)[0].value)

    numeric = oracle.finite_diff_gradient(f, flat0, step)
    f(flat0)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_FLOOR * max(1.0, f0))
    return np.abs(analytic - numeric) / denom


def gradient_suite(configs=20, seed=0, tol=1e-5):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(configs):
        model, batches, cfg = _random_problem(rng)
        err = gradient_rel_error(model, batches, cfg)
        out.append(CheckResult(
            "gradient", f"config={k},{cfg.estimator},gamma={cfg.gamma:g}", bool(err.max() < tol),
            f"max_rel_err={err.max():.2e}",
        ))
    return out


def run_all(sizes=(2, 3, 5, 8, 12), seeds=range(5), perturb=0.0):
    """Every suite at the given settings; used by the CLI."""
    seeds = list(seeds)
    return {
        "truth": truth_suite(sizes, seeds, perturb),
        "chi2": chi2_suite([s for s in sizes if s <= 8] or sizes[:1], seeds, perturb),
        "lemma1": lemma1_suite(sizes, n_joints=max(1, 10 * len(seeds)), seed=seeds[0], perturb=perturb),
        "loss_identity": loss_identity_suite(20, seeds[0]),
        "gradient": gradient_suite(5, seeds[0]),
    }
