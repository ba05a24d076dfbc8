"""The NCP training objective ``L_gamma = L + gamma * R``.

Two routes are provided for both terms:

* covariance form, built from 1/n moment matrices of a batch of features;
* pairwise functionals ``L(u, u', v, v', s)`` and ``R(u, u', v, v')`` that
  are averaged over pairs of samples.

Averaged over all ``n**2`` ordered pairs of one batch (with features
centered by the batch mean for ``L``), the pairwise route reproduces the
covariance form exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import forward_u, forward_v, sigma_tensor
from .numerics import Tensor, square

__all__ = [
    "ESTIMATORS",
    "LossConfig",
    "loss_cov_form",
    "reg_cov_form",
    "loss_pairwise",
    "reg_pairwise",
    "pairwise_loss_all_pairs",
    "pairwise_reg_all_pairs",
    "total_loss",
    "evaluate",
]

ESTIMATORS = ("covariance_form", "pairwise_batch_mean", "pairwise_ustat")


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1e-3
    estimator: str = "covariance_form"

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def loss_cov_form(U, V, sigma):
    """``tr(Var(sqrt(s) u) Var(sqrt(s) v)) - 2 tr(Cov(sqrt(s) u, sqrt(s) v))``.

    Moments are 1/n normalized and centered by the batch mean.  Returns a
    scalar Tensor, differentiable in ``U``, ``V`` and ``sigma``.
    """
    U, V, s = _t(U), _t(V), _t(sigma)
    n = U.shape[0]
    if n < 2 or V.shape[0] != n:
        raise ValueError("loss_cov_form needs two feature matrices with the same n >= 2")
    Uc = U - U.mean(axis=0, keepdims=True)
    Vc = V - V.mean(axis=0, keepdims=True)
    Mu = (Uc.T @ Uc) / n
    Mv = (Vc.T @ Vc) / n
    # tr(S Mu S Mv) = sum_ij s_i s_j Mu_ij Mv_ij for symmetric Mv
    ss = s.reshape(-1, 1) * s.reshape(1, -1)
    quad = (ss * Mu * Mv).sum()
    cross = (s * (Uc * Vc).mean(axis=0)).sum()
    return quad - 2.0 * cross


def reg_cov_form(U, V):
    """``||E[uu^T] - I||_F^2 + ||E[vv^T] - I||_F^2 + 2||E u||^2 + 2||E v||^2``."""
    U, V = _t(U), _t(V)
    n, d = U.shape
    eye = np.eye(d)
    Mu = (U.T @ U) / n
    Mv = (V.T @ V) / V.shape[0]
    mu = U.mean(axis=0)
    mv = V.mean(axis=0)
    return (
        square(Mu - eye).sum()
        + square(Mv - eye).sum()
        + 2.0 * square(mu).sum()
        + 2.0 * square(mv).sum()
    )


def loss_pairwise(u, u2, v, v2, s):
    """Pairwise loss functional on (batches of) vectors along the last axis.

    ``1/2 (u^T S v')^2 + 1/2 (v^T S u')^2 - u^T S v - u'^T S v'``.
    """
    u, u2, v, v2, s = (np.asarray(a, dtype=np.float64) for a in (u, u2, v, v2, s))
    a = np.sum(u * s * v2, axis=-1)
    b = np.sum(v * s * u2, axis=-1)
    return 0.5 * a * a + 0.5 * b * b - np.sum(u * s * v, axis=-1) - np.sum(u2 * s * v2, axis=-1)


def reg_pairwise(u, u2, v, v2):
    """``(u^T u')^2 - |u - u'|^2 + (v^T v')^2 - |v - v'|^2 + 2d``."""
    u, u2, v, v2 = (np.asarray(a, dtype=np.float64) for a in (u, u2, v, v2))
    d = u.shape[-1]
    du = u - u2
    dv = v - v2
    return (
        np.sum(u * u2, axis=-1) ** 2
        - np.sum(du * du, axis=-1)
        + np.sum(v * v2, axis=-1) ** 2
        - np.sum(dv * dv, axis=-1)
        + 2 * d
    )


def _all_pairs(A):
    n = A.shape[0]
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return A[i.ravel()], A[j.ravel()]


def pairwise_loss_all_pairs(U, V, s, center=True):
    """Average of :func:`loss_pairwise` over all ordered index pairs (i, j)."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if center:
        U = U - U.mean(axis=0)
        V = V - V.mean(axis=0)
    u, u2 = _all_pairs(U)
    v, v2 = _all_pairs(V)
    return float(np.mean(loss_pairwise(u, u2, v, v2, s)))


def pairwise_reg_all_pairs(U, V):
    u, u2 = _all_pairs(np.asarray(U, dtype=np.float64))
    v, v2 = _all_pairs(np.asarray(V, dtype=np.float64))
    return float(np.mean(reg_pairwise(u, u2, v, v2)))


# --------------------------------------------------------------------------
# two-batch estimators on the tape
# --------------------------------------------------------------------------


def _ustat_loss(U1, U2, V1, V2, s):
    # all cross pairs (i in batch 1, j in batch 2)
    A = (U1 * s) @ V2.T
    B = (V1 * s) @ U2.T
    return (
        0.5 * square(A).mean()
        + 0.5 * square(B).mean()
        - (U1 * s * V1).sum(axis=1).mean()
        - (U2 * s * V2).sum(axis=1).mean()
    )


def _ustat_reg(U1, U2, V1, V2):
    d = U1.shape[1]

    def half(A, B):
        G = A @ B.T
        na = square(A).sum(axis=1).mean()
        nb = square(B).sum(axis=1).mean()
        return square(G).mean() - na - nb + 2.0 * G.mean()

    return half(U1, U2) + half(V1, V2) + 2.0 * d


def _batch_mean_loss(U1, U2, V1, V2, s):
    a = (U1 * s * V2).sum(axis=1)
    b = (V1 * s * U2).sum(axis=1)
    return (
        0.5 * square(a).mean()
        + 0.5 * square(b).mean()
        - (U1 * s * V1).sum(axis=1).mean()
        - (U2 * s * V2).sum(axis=1).mean()
    )


def _batch_mean_reg(U1, U2, V1, V2):
    d = U1.shape[1]

    def half(A, B):
        dot = (A * B).sum(axis=1)
        diff = A - B
        return square(dot).mean() - square(diff).sum(axis=1).mean()

    return half(U1, U2) + half(V1, V2) + 2.0 * d


def _concat_rows(a, b):
    n1 = a.shape[0]
    value = np.concatenate([a.value, b.value], axis=0)
    return Tensor(value, ((a, lambda g: g[:n1]), (b, lambda g: g[n1:])))


def loss_terms(U1, U2, V1, V2, s, estimator):
    """Return ``(L_hat, R_hat)`` Tensors for two equal-size feature batches."""
    if U1.shape[0] != U2.shape[0] or V1.shape[0] != V2.shape[0] or U1.shape[0] != V1.shape[0]:
        raise ValueError("the two batches must have the same size")
    U1, U2, V1, V2, s = (_t(a) for a in (U1, U2, V1, V2, s))
    U = _concat_rows(U1, U2)
    V = _concat_rows(V1, V2)
    if estimator == "covariance_form":
        return loss_cov_form(U, V, s), reg_cov_form(U, V)

    mu = U.mean(axis=0, keepdims=True)
    mv = V.mean(axis=0, keepdims=True)
    U1c, U2c, V1c, V2c = U1 - mu, U2 - mu, V1 - mv, V2 - mv
    if estimator == "pairwise_ustat":
        return _ustat_loss(U1c, U2c, V1c, V2c, s), _ustat_reg(U1, U2, V1, V2)
    if estimator == "pairwise_batch_mean":
        return _batch_mean_loss(U1c, U2c, V1c, V2c, s), _batch_mean_reg(U1, U2, V1, V2)
    raise ValueError(f"unknown estimator {estimator!r}")


def total_loss(batch1, batch2, model, config):
    """NCP loss on two disjoint batches of standardized ``(x, y)`` rows.

    Returns ``(total, L_hat, R_hat)``; ``total`` is the Tensor to
    back-propagate.
    """
    (x1, y1), (x2, y2) = batch1, batch2
    if len(x1) != len(x2) or len(y1) != len(y2) or len(x1) != len(y1):
        raise ValueError("batch size mismatch")
    U1, U2 = forward_u(model, x1), forward_u(model, x2)
    V1, V2 = forward_v(model, y1), forward_v(model, y2)
    s = sigma_tensor(model)
    L, R = loss_terms(U1, U2, V1, V2, s, config.estimator)
    total = L + config.gamma * R if config.gamma else L
    return total, L, R


def evaluate(model, x, y, gamma=0.0):
    """Covariance-form ``(L, R, L + gamma R)`` over a full data set, as floats."""
    U = forward_u(model, x, tape=False)
    V = forward_v(model, y, tape=False)
    s = np.exp(-np.square(model.w.value))
    L = float(loss_cov_form(U, V, s).value)
    R = float(reg_cov_form(U, V).value)
    return L, R, L + gamma * R
