"""Centering and whitening of a fitted model's features.

Whitening re-expresses the learned features in coordinates where both
feature covariances are the identity and the cross-covariance is diagonal;
the diagonal becomes the refreshed singular values.
"""
from __future__ import annotations

import numpy as np

from .inference import FeatureOperator
from .numerics import NotPSDError, inv_sqrt_psd, svd_full
from .trainer import FittedModel

__all__ = ["WhitenedModel", "center", "whiten", "raw", "whitening_transform", "as_operator", "MODES"]

MODES = ("raw", "centered", "whitened")


class WhitenedModel(FeatureOperator):
    """A fitted model with a fixed linear post-processing of its features.

    Transformed features are ``((f(z) - mean) * sqrt(sigma)) @ transform``
    for ``f`` the raw ``u`` or ``v`` map.  In raw and centered mode the
    ``sqrt(sigma)`` factors already carry the singular values, so the
    inference weights are ones; in whitened mode they are ``new_sigma``.
    """

    def __init__(self, base, u_mean, v_mean, u_transform, v_transform, new_sigma, mode):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.base = base
        self.u_mean = np.asarray(u_mean, dtype=np.float64)
        self.v_mean = np.asarray(v_mean, dtype=np.float64)
        self.u_transform = np.asarray(u_transform, dtype=np.float64)
        self.v_transform = np.asarray(v_transform, dtype=np.float64)
        self.new_sigma = np.asarray(new_sigma, dtype=np.float64)
        self.mode = mode
        self.scale = np.sqrt(base.sigma)
        for name in ("u_transform", "v_transform"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} has non-finite entries")
        weights = self.new_sigma if mode == "whitened" else np.ones(base.d)
        super().__init__(
            self._u_transformed,
            self.transform_v(base.train_y_features),
            base.train_y_values,
            weights,
            base.train_x_values,
        )

    def transform_u(self, U):
        return ((U - self.u_mean) * self.scale) @ self.u_transform

    def transform_v(self, V):
        return ((V - self.v_mean) * self.scale) @ self.v_transform

    def _u_transformed(self, x):
        return self.transform_u(self.base.u_raw(x))

    def v_features(self, y):
        return self.transform_v(self.base.v_raw(y))


def _sorted_identity(sigma):
    """Permutation matrix ordering components by decreasing ``sigma``."""
    order = np.argsort(-np.asarray(sigma), kind="stable")
    return np.eye(order.size)[:, order], np.asarray(sigma)[order]


def raw(fitted):
    """No post-processing: inference uses ``sigma``, ``u`` and ``v`` as trained.

    Components are only reordered so that ``new_sigma`` is nonincreasing.
    """
    d = fitted.d
    perm, s = _sorted_identity(fitted.sigma)
    return WhitenedModel(fitted, np.zeros(d), np.zeros(d), perm, perm, s, "raw")


def center(fitted):
    """Subtract the training feature means; transforms only reorder components."""
    perm, s = _sorted_identity(fitted.sigma)
    return WhitenedModel(fitted, fitted.u_mean, fitted.v_mean, perm, perm, s, "centered")


def _data_whitener(Z, rel_eps):
    """``W`` with ``cov(Z @ W) = I`` from the thin SVD of centered data ``Z``.

    Working on the data matrix rather than its covariance keeps the result
    orthonormal to machine precision however ill-conditioned ``Z`` is.
    Eigenvalues below ``rel_eps`` times the largest are floored there.
    """
    n, d = Z.shape
    _, s, Vt = svd_full(Z / np.sqrt(n))
    lam = np.zeros(d)
    lam[: s.size] = s**2
    Q = Vt.T
    if Q.shape[1] < d:  # fewer rows than features: complete the basis
        Q = svd_full(np.hstack([Q, np.eye(d)]))[0][:, :d]
    top = lam.max()
    if rel_eps == 0.0 and lam.min() <= d * np.finfo(np.float64).eps * top:
        raise NotPSDError("feature covariance is singular; pass eps > 0")
    floor = rel_eps * top if top > 0 else 1.0
    return Q / np.sqrt(np.maximum(lam, floor))


def whitening_transform(U, V, sigma, eps=1e-12, method="data"):
    """Whitening of raw feature matrices.

    Returns ``(u_mean, v_mean, u_transform, v_transform, new_sigma)`` so that
    ``((U - u_mean) * sqrt(sigma)) @ u_transform`` has identity covariance
    on the given rows, likewise for ``V``, and the cross-covariance of the
    two transformed blocks is ``diag(new_sigma)``.

    ``method="data"`` whitens through the SVD of the centered data with
    ``eps`` relative to the largest feature variance.  ``method="covariance"``
    forms ``C^{-1/2}`` with eigenvalues floored at the absolute ``eps``.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    n = U.shape[0]
    if V.shape[0] != n:
        raise ValueError("U and V need the same number of rows")
    root = np.sqrt(np.asarray(sigma, dtype=np.float64))
    u_mean, v_mean = U.mean(axis=0), V.mean(axis=0)
    Uc = (U - u_mean) * root
    Vc = (V - v_mean) * root
    if method == "data":
        Wx, Wy = _data_whitener(Uc, eps), _data_whitener(Vc, eps)
    elif method == "covariance":
        Wx = inv_sqrt_psd(Uc.T @ Uc / n, eps)
        Wy = inv_sqrt_psd(Vc.T @ Vc / n, eps)
    else:
        raise ValueError(f"unknown whitening method {method!r}")
    P, s, Qt = svd_full((Uc @ Wx).T @ (Vc @ Wy) / n)
    Tu, Tv = Wx @ P, Wy @ Qt.T
    # sign convention: largest-magnitude entry of each u-transform column is positive
    flip = np.sign(Tu[np.argmax(np.abs(Tu), axis=0), np.arange(Tu.shape[1])])
    flip[flip == 0] = 1.0
    return u_mean, v_mean, Tu * flip, Tv * flip, np.clip(s, 0.0, 1.0)


def whiten(fitted, data=None, eps=1e-12, method="data"):
    """Whiten ``fitted`` using ``data`` (defaults to the retained training rows).

    Centering uses the means on the whitening data.
    """
    if data is None:
        x, y = fitted.train_x_values, fitted.train_y_values
    else:
        x, y = data.x, data.y
    if np.asarray(x).shape[0] < fitted.d:
        raise ValueError(f"whitening needs at least d={fitted.d} rows")
    U, V = fitted.u_raw(x), fitted.v_raw(y)
    u_mean, v_mean, Tu, Tv, s = whitening_transform(U, V, fitted.sigma, eps, method)
    return WhitenedModel(fitted, u_mean, v_mean, Tu, Tv, s, "whitened")


def as_operator(model, mode="whitened"):
    """Coerce a fitted or post-processed model into a :class:`FeatureOperator`."""
    if isinstance(model, FeatureOperator):
        return model
    if isinstance(model, FittedModel):
        return {"raw": raw, "centered": center, "whitened": whiten}[mode](model)
    raise TypeError(f"cannot use {type(model).__name__} as a conditional model")
