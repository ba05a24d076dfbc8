"""Conditional statistics read off a learned truncated SVD.

Every quantity is computed from the same three ingredients: features ``u``
of the conditioning event, features ``v`` of the retained training
outputs, and per-component weights.  For an event with (averaged)
features ``a`` and a test function ``f``::

    E[f(Y) | event] ~= mean_j f(y_j) + sum_i w_i a_i mean_j v_i(y_j) f(y_j)
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureOperator",
    "ConditioningEvent",
    "CdfGrid",
    "ConfidenceInterval",
    "ZeroMassError",
    "InfeasibleIntervalError",
    "UnsupportedError",
    "cond_expectation",
    "cond_probability",
    "cond_cdf",
    "cond_cdf_batch",
    "sanitize_cdf",
    "isotonic_increasing",
    "interval_search",
    "interval_search_exhaustive",
    "cond_quantile",
    "cond_moment",
    "cond_mean",
    "cond_covariance",
    "default_grid",
]

_MASS_TOL = 1e-12
# widths equal up to roundoff count as ties
_WIDTH_TOL = 1e-10


class ZeroMassError(ValueError):
    """The conditioning set has no empirical mass."""


class InfeasibleIntervalError(ValueError):
    """No window of the grid carries the requested mass."""


class UnsupportedError(ValueError):
    pass


class FeatureOperator:
    """Finite-rank model of the conditional expectation operator.

    Parameters
    ----------
    u_fn : callable
        Maps an ``(m, d_x)`` array of inputs to ``(m, d)`` features.
    v_train : ndarray (n, d)
        Features of the retained training outputs.
    y_train : ndarray (n, d_y)
        The retained training outputs themselves.
    weights : ndarray (d,)
        Per-component factors multiplying ``u_i v_i``.
    x_train : ndarray (n_x, d_x), optional
        Training inputs, needed for set-valued conditioning events.
    """

    def __init__(self, u_fn, v_train, y_train, weights, x_train=None):
        self._u_fn = u_fn
        self.v_train = np.asarray(v_train, dtype=np.float64)
        y = np.asarray(y_train, dtype=np.float64)
        self.y_train = y.reshape(-1, 1) if y.ndim == 1 else y
        self.weights = np.asarray(weights, dtype=np.float64)
        self.x_train = None if x_train is None else np.asarray(x_train, dtype=np.float64)
        self._x_features = None
        if self.v_train.shape[0] != self.y_train.shape[0]:
            raise ValueError("v_train and y_train must have the same number of rows")

    @property
    def d(self):
        return self.weights.size

    @property
    def n(self):
        return self.y_train.shape[0]

    def u_features(self, x):
        """Features of inputs; a 1-d ``x`` is one point, batches are 2-d."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim <= 1:
            x = x.reshape(1, -1)
        return self._u_fn(x)

    def x_train_features(self):
        if self.x_train is None:
            raise ValueError("model carries no training inputs; set events unavailable")
        if self._x_features is None:
            self._x_features = self._u_fn(self.x_train)
        return self._x_features


@dataclass
class ConditioningEvent:
    """A point (or batch of points) ``x``, or a set ``A`` of inputs.

    Sets are given either as a boolean indicator over the model's training
    inputs or as an axis-aligned box ``low <= x <= high``.
    """

    points: np.ndarray | None = None
    indicator: np.ndarray | None = None
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    @classmethod
    def point(cls, x):
        return cls(points=np.atleast_1d(np.asarray(x, dtype=np.float64)))

    @classmethod
    def from_indicator(cls, mask):
        return cls(indicator=np.asarray(mask, dtype=bool))

    @classmethod
    def box(cls, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(high, dtype=np.float64))
        if np.any(low > high):
            raise ValueError("box needs low <= high")
        return cls(low=low, high=high)

    @property
    def is_point(self):
        return self.points is not None

    def coefficients(self, op):
        """Event features, one row per point (a single row for sets)."""
        if self.is_point:
            return np.atleast_2d(op.u_features(self.points))
        feats = op.x_train_features()
        if self.indicator is not None:
            mask = self.indicator
            if mask.shape[0] != feats.shape[0]:
                raise ValueError("indicator length must match the training inputs")
        else:
            xt = op.x_train
            mask = np.all((xt >= self.low) & (xt <= self.high), axis=1)
        mass = mask.mean()
        if mass <= 0:
            raise ZeroMassError("conditioning set has zero empirical mass")
        return (feats * mask[:, None]).mean(axis=0, keepdims=True) / mass


def _as_event(event):
    if isinstance(event, ConditioningEvent):
        return event
    return ConditioningEvent.point(event)


def cond_expectation(op, f_values, event):
    """``E[f(Y) | event]`` for ``f`` tabulated on the retained outputs.

    ``f_values`` has shape ``(n,)`` or ``(n, k)``; the result has one entry
    per event point (scalar for a single point or set event).
    """
    f = np.asarray(f_values, dtype=np.float64)
    if f.shape[0] != op.n:
        raise ValueError(f"f_values must have {op.n} rows, got {f.shape[0]}")
    ev = _as_event(event)
    a = ev.coefficients(op)
    marginal = f.mean(axis=0)
    ef = op.v_train.T @ f / op.n
    out = marginal + (a * op.weights) @ ef
    return out[0] if out.shape[0] == 1 else out


def _indicator_on_y(op, B):
    if callable(B):
        mask = np.asarray(B(op.y_train), dtype=bool).reshape(-1)
    else:
        mask = np.asarray(B)
        if mask.dtype != bool:
            if not np.all((mask == 0) | (mask == 1)):
                raise ValueError("indicator must be 0/1 valued")
            mask = mask.astype(bool)
    if mask.shape[0] != op.n:
        raise ValueError("indicator length must match the retained outputs")
    return mask.astype(np.float64)


def cond_probability(op, B, event, sanitize=False):
    """``P[Y in B | event]``; ``B`` is a 0/1 array over outputs or a predicate."""
    p = cond_expectation(op, _indicator_on_y(op, B), event)
    return np.clip(p, 0.0, 1.0) if sanitize else p


# --------------------------------------------------------------------------
# CDFs
# --------------------------------------------------------------------------


@dataclass
class CdfGrid:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.points.ndim != 1 or self.points.shape != self.values.shape:
            raise ValueError("points and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("grid points must be strictly increasing")

    def is_valid(self, tol=1e-12):
        v = self.values
        return bool(
            np.all(v >= -tol) and np.all(v <= 1 + tol) and np.all(np.diff(v) >= -tol)
            and abs(v[-1] - 1.0) <= tol
        )

    def to_csv(self, path=None):
        lines = ["t,F"] + [f"{t!r},{f!r}" for t, f in zip(self.points.tolist(), self.values.tolist())]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def isotonic_increasing(values):
    """Least-squares nondecreasing fit by pool-adjacent-violators."""
    v = np.asarray(values, dtype=np.float64)
    means, counts = [], []
    for val in v:
        means.append(val)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            c = counts[-2] + counts[-1]
            m = (means[-2] * counts[-2] + means[-1] * counts[-1]) / c
            means[-2:] = [m]
            counts[-2:] = [c]
    return np.repeat(means, counts)


def sanitize_cdf(values):
    """Clamp to [0, 1], project onto nondecreasing sequences, pin the end at 1."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    if np.any(np.diff(v) < 0):
        v = isotonic_increasing(v)
    last = v[-1]
    if last > 0:
        v = np.minimum(v / last, 1.0)
    else:
        v = np.zeros_like(v)
        v[-1] = 1.0
    return v


def _cdf_moments(op, grid):
    y = op.y_train
    if y.shape[1] != 1:
        raise UnsupportedError("conditional CDFs need a scalar output")
    y = y[:, 0]
    order = np.argsort(y, kind="stable")
    ys = y[order]
    counts = np.searchsorted(ys, grid, side="right")
    cum_v = np.vstack([np.zeros((1, op.d)), np.cumsum(op.v_train[order], axis=0)])
    marginal = counts / op.n
    ev = cum_v[counts] / op.n
    return marginal, ev


def cond_cdf_batch(op, event, grid_points, sanitize=True):
    """CDF values for every event point; returns an ``(m, K)`` array."""
    grid = np.asarray(grid_points, dtype=np.float64)
    marginal, ev = _cdf_moments(op, grid)
    a = _as_event(event).coefficients(op)
    F = marginal[None, :] + (a * op.weights) @ ev.T
    if sanitize:
        F = np.vstack([sanitize_cdf(row) for row in F])
    return F


def cond_cdf(op, event, grid_points, sanitize=True):
    """Conditional CDF on ``grid_points`` for a single point or set event."""
    F = cond_cdf_batch(op, event, grid_points, sanitize)
    if F.shape[0] != 1:
        raise ValueError("cond_cdf takes a single event; use cond_cdf_batch for many points")
    return CdfGrid(grid_points, F[0])


def default_grid(y_train, size=1000):
    """Uniform grid over ``[min - 3 mad, max + 3 mad]`` of the training outputs."""
    y = np.asarray(y_train, dtype=np.float64).ravel()
    med = np.median(y)
    mad = np.median(np.abs(y - med))
    if mad <= 0:
        mad = y.std() if y.std() > 0 else 1.0
    return np.linspace(y.min() - 3 * mad, y.max() + 3 * mad, size)


# --------------------------------------------------------------------------
# intervals and quantiles
# --------------------------------------------------------------------------


@dataclass
class ConfidenceInterval:
    lower: float
    upper: float
    nominal_coverage: float
    achieved_mass: float

    def as_dict(self):
        return {
            "lower": self.lower,
            "upper": self.upper,
            "nominal": self.nominal_coverage,
            "achieved": self.achieved_mass,
        }

    def to_json(self):
        return json.dumps(self.as_dict())


def interval_search(grid, alpha):
    """Shortest window ``(t_low, t_high]`` with ``F(t_high) - F(t_low) >= 1 - alpha``.

    Two-pointer scan over grid indices; ties go to the smallest ``t_low``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    t, F = grid.points, grid.values
    target = 1.0 - alpha - _MASS_TOL
    K = t.size
    tie = _WIDTH_TOL * (t[-1] - t[0])
    best = None
    best_width = np.inf
    lo, hi = 0, 1
    while hi < K:
        if F[hi] - F[lo] >= target:
            width = t[hi] - t[lo]
            if width < best_width - tie:
                best, best_width = (lo, hi), width
            lo += 1
            if lo == hi:
                hi += 1
        elif hi == K - 1:
            break
        else:
            hi += 1
    if best is None:
        raise InfeasibleIntervalError(f"no grid window reaches mass {1 - alpha:g}")
    lo, hi = best
    return ConfidenceInterval(float(t[lo]), float(t[hi]), 1.0 - alpha, float(F[hi] - F[lo]))


def interval_search_exhaustive(grid, alpha):
    """Reference O(K^2) enumeration of all windows, same tie rule."""
    t, F = grid.points, grid.values
    target = 1.0 - alpha - _MASS_TOL
    mass = F[None, :] - F[:, None]
    width = t[None, :] - t[:, None]
    ok = (mass >= target) & (np.arange(t.size)[None, :] > np.arange(t.size)[:, None])
    if not ok.any():
        raise InfeasibleIntervalError(f"no grid window reaches mass {1 - alpha:g}")
    w = np.where(ok, width, np.inf)
    best = w.min()
    lo, hi = np.argwhere(w <= best + _WIDTH_TOL * (t[-1] - t[0]))[0]
    return ConfidenceInterval(float(t[lo]), float(t[hi]), 1.0 - alpha, float(F[hi] - F[lo]))


def cond_quantile(op, event, q, grid=None):
    """Smallest grid point whose sanitized conditional CDF reaches ``q``."""
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    grid = default_grid(op.y_train) if grid is None else grid
    cdf = grid if isinstance(grid, CdfGrid) else cond_cdf(op, event, grid, sanitize=True)
    idx = int(np.argmax(cdf.values >= q - _MASS_TOL))
    return float(cdf.points[idx])


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------


def cond_moment(op, event, order=1):
    """Conditional moment ``E[Y^order | event]`` for scalar outputs."""
    if order < 1:
        raise ValueError("moment order must be >= 1")
    if op.y_train.shape[1] != 1:
        raise UnsupportedError("cond_moment needs a scalar output; use cond_covariance")
    return cond_expectation(op, op.y_train[:, 0] ** order, event)


def cond_mean(op, event):
    if op.y_train.shape[1] == 1:
        return cond_moment(op, event, 1)
    return cond_expectation(op, op.y_train, event)


def cond_covariance(op, event, psd=False):
    """``E[Y Y^T | event] - E[Y | event] E[Y | event]^T``, symmetrized."""
    y = op.y_train
    k = y.shape[1]
    ev = _as_event(event)
    if ev.is_point and np.atleast_2d(op.u_features(ev.points)).shape[0] != 1:
        raise ValueError("cond_covariance takes a single event")
    mean = np.atleast_1d(cond_expectation(op, y, ev))
    prods = (y[:, :, None] * y[:, None, :]).reshape(op.n, k * k)
    second = np.atleast_1d(cond_expectation(op, prods, ev)).reshape(k, k)
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    if psd:
        lam, Q = np.linalg.eigh(cov)
        cov = (Q * np.maximum(lam, 0.0)) @ Q.T
        cov = 0.5 * (cov + cov.T)
    return cov
