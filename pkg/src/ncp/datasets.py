"""Synthetic conditional-density benchmarks and CSV ingestion.

Every generator returns a :class:`SampleSet`; :func:`true_cdf` gives the
exact conditional CDF ``P[Y <= t | X = x]`` for the scalar-output families.
Noise parameters written ``N(m, s)`` in the benchmark literature are read
as variances unless noted in the family's parameter table.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

__all__ = [
    "FAMILIES",
    "SampleSet",
    "GeneratorSpec",
    "generate",
    "true_cdf",
    "true_cond_mean",
    "load_csv",
    "DataError",
]


class DataError(ValueError):
    """Malformed input data or generator parameters."""


@dataclass
class SampleSet:
    x: np.ndarray
    y: np.ndarray
    spec: "GeneratorSpec | None" = None
    seed: int | None = None

    def __post_init__(self):
        self.x = _rows(self.x)
        self.y = _rows(self.y)
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError("x and y must have the same number of rows")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DataError("samples must be finite")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dx(self):
        return self.x.shape[1]

    @property
    def dy(self):
        return self.y.shape[1]

    def subset(self, idx):
        return SampleSet(self.x[idx], self.y[idx], self.spec, self.seed)

    def true_cdf(self, x, t):
        if self.spec is None:
            raise DataError("sample set carries no generator; true CDF unavailable")
        return true_cdf(self.spec, x, t)

    def to_csv(self, path):
        header = [f"x{i}" for i in range(self.dx)] + [f"y{i}" for i in range(self.dy)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in np.hstack([self.x, self.y]):
                w.writerow([repr(float(v)) for v in row])


def _rows(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


# default parameters per family; anything here can be overridden in GeneratorSpec.params
_DEFAULTS = {
    "LinearGaussian": {"noise_var": 0.1},
    "EconDensity": {},
    "ArmaJump": {"c": 0.1, "alpha": 0.2, "jump_prob": 0.05, "noise_std": 0.05, "burn_in": 500},
    "SkewNormal": {
        "loc": (0.0, 1.0),
        "scale": (1.0, 0.5),
        "shape": (0.0, 4.0),
    },
    "GaussianMixture": {"n_kernels": 5, "param_seed": 0},
    "LGGMD": {"n_irrelevant": 17},
    "LaplaceModel": {},
    "CauchyModel": {},
    "SphereHD": {"dim": 100, "law": "gaussian", "param_seed": 0},
    "Independent": {},
}

FAMILIES = tuple(_DEFAULTS)

_SPHERE_PROBS = np.array(
    [
        [0.2, 0.2, 0.2, 0.2, 0.2],
        [0.5, 0.5, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.5, 0.5],
    ]
)


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    n: int = 10_000
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _DEFAULTS:
            raise DataError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.n < 1:
            raise DataError("n must be >= 1")
        merged = dict(_DEFAULTS[self.family])
        merged.update(self.params or {})
        object.__setattr__(self, "params", merged)
        _validate(self.family, merged)

    def with_(self, **kw):
        args = {"family": self.family, "n": self.n, "seed": self.seed, "params": dict(self.params)}
        args.update(kw)
        return GeneratorSpec(**args)

    # hashable for caching of derived structures
    def __hash__(self):
        return hash((self.family, self.n, self.seed, repr(sorted(self.params.items()))))


def _validate(family, p):
    if family == "LinearGaussian" and p["noise_var"] <= 0:
        raise DataError("noise_var must be positive")
    if family == "ArmaJump":
        if not 0.0 <= p["jump_prob"] <= 1.0:
            raise DataError("jump_prob must be in [0, 1]")
        if p["noise_std"] <= 0:
            raise DataError("noise_std must be positive")
    if family == "SkewNormal":
        a, b = p["scale"]
        if min(a - abs(b), a + abs(b)) <= 0:
            raise DataError("skew-normal scale must stay positive on x in [-1, 1]")
    if family == "GaussianMixture" and p["n_kernels"] < 1:
        raise DataError("n_kernels must be >= 1")
    if family == "SphereHD":
        if p["dim"] < 2:
            raise DataError("SphereHD dim must be >= 2")
        if p["law"] not in ("gaussian", "discrete"):
            raise DataError("SphereHD law must be 'gaussian' or 'discrete'")


# --------------------------------------------------------------------------
# family structure
# --------------------------------------------------------------------------


def _mixture_params(p):
    rng = np.random.default_rng(p["param_seed"])
    k = int(p["n_kernels"])
    means = rng.normal(0.0, np.sqrt(2.0), size=(k, 2))
    A = rng.normal(size=(k, 2, 2))
    covs = A @ np.transpose(A, (0, 2, 1)) + 0.5 * np.eye(2)
    weights = rng.dirichlet(np.ones(k))
    return weights, means, covs


def _sphere_rotation(p):
    rng = np.random.default_rng(p["param_seed"])
    dim = int(p["dim"])
    Q, R = np.linalg.qr(rng.normal(size=(dim, dim)))
    return Q * np.sign(np.diag(R))


def sphere_angle(spec, x):
    """Angle in [0, 2 pi) of the planar point that was lifted to ``x``."""
    Q = _sphere_rotation(spec.params)
    xb = _rows(x) @ Q
    return np.mod(np.arctan2(xb[:, 1], xb[:, 0]), 2 * np.pi)


def _sphere_band(theta):
    return np.clip((theta // (np.pi / 2)).astype(int), 0, 3)


def _lggmd_components(x):
    x = _rows(x)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    mixed = x2 <= 0.2
    m1 = 0.25 * x1 - 0.5
    m2 = 0.25 * x1 + 0.5
    s1 = 0.5 * np.abs(0.25 * x3 + 0.5)
    s2 = 0.5 * np.abs(0.25 * x3 - 0.5)
    single_sd = np.sqrt(0.3)
    return mixed, m1, m2, s1, s2, single_sd


def _skew_params(p, x):
    x = np.asarray(x, dtype=np.float64).ravel()
    loc = p["loc"][0] + p["loc"][1] * x
    scale = p["scale"][0] + p["scale"][1] * x
    shape = p["shape"][0] + p["shape"][1] * x
    return loc, scale, shape


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def generate(spec):
    """Draw ``spec.n`` samples; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, p, fam = spec.n, spec.params, spec.family
    if fam == "LinearGaussian":
        x = rng.uniform(-1.0, 1.0, n)
        y = x + rng.normal(0.0, np.sqrt(p["noise_var"]), n)
    elif fam == "EconDensity":
        x = np.abs(rng.normal(size=n))
        y = x**2 + rng.normal(size=n) * np.sqrt(1.0 + x)
    elif fam == "ArmaJump":
        c, a, q, s = p["c"], p["alpha"], p["jump_prob"], p["noise_std"]
        total = n + int(p["burn_in"]) + 1
        eps = rng.normal(0.0, s, total)
        z = rng.uniform(size=total) < q
        series = np.empty(total)
        series[0] = c
        for t in range(1, total):
            base = c * (1 - a) + a * series[t - 1]
            series[t] = base + (-3 * c + 2 * eps[t] if z[t] else eps[t])
        tail = series[int(p["burn_in"]) :]
        x, y = tail[:-1], tail[1:]
    elif fam == "SkewNormal":
        x = rng.uniform(-1.0, 1.0, n)
        loc, scale, shape = _skew_params(p, x)
        # skew-normal via |Z0| construction
        delta = shape / np.sqrt(1.0 + shape**2)
        z0 = np.abs(rng.normal(size=n))
        z1 = rng.normal(size=n)
        y = loc + scale * (delta * z0 + np.sqrt(1.0 - delta**2) * z1)
    elif fam == "GaussianMixture":
        weights, means, covs = _mixture_params(p)
        comp = rng.choice(len(weights), size=n, p=weights)
        L = np.linalg.cholesky(covs)
        z = rng.normal(size=(n, 2))
        pts = means[comp] + np.einsum("nij,nj->ni", L[comp], z)
        x, y = pts[:, 0], pts[:, 1]
    elif fam == "LGGMD":
        x = rng.uniform(-1.0, 1.0, size=(n, 3 + int(p["n_irrelevant"])))
        mixed, m1, m2, s1, s2, sd = _lggmd_components(x)
        pick = rng.uniform(size=n) < 0.5
        z = rng.normal(size=n)
        y = np.where(mixed, np.where(pick, m1 + s1 * z, m2 + s2 * z), m1 + sd * z)
    elif fam == "LaplaceModel":
        x = rng.uniform(0.0, 5.0, n)
        y = rng.laplace(x**2, np.maximum(x, 0.0), n) if n else np.zeros(0)
    elif fam == "CauchyModel":
        x = rng.uniform(0.0, 5.0, n)
        y = x**2 + (1.0 + x) * rng.standard_cauchy(n)
    elif fam == "SphereHD":
        Q = _sphere_rotation(p)
        theta = rng.uniform(0.0, 2 * np.pi, n)
        xb = np.zeros((n, int(p["dim"])))
        xb[:, 0], xb[:, 1] = np.cos(theta), np.sin(theta)
        x = xb @ Q.T
        if p["law"] == "gaussian":
            y = rng.normal(theta, np.sqrt(np.sin(theta / 2.0)))
        else:
            band = _sphere_band(theta)
            cum = np.cumsum(_SPHERE_PROBS[band], axis=1)
            r = rng.uniform(size=(n, 1))
            y = 1.0 + np.minimum((r > cum).sum(axis=1), 4)
    elif fam == "Independent":
        x = rng.uniform(-1.0, 1.0, n)
        y = rng.normal(size=n)
    else:  # pragma: no cover
        raise DataError(fam)
    return SampleSet(x, y, spec=spec, seed=spec.seed)


# --------------------------------------------------------------------------
# exact conditional laws
# --------------------------------------------------------------------------


def _normal_mixture_cdf(t, weights, means, sds):
    t = np.asarray(t, dtype=np.float64)[:, None]
    # weights sum to 1 only up to roundoff
    return np.clip(np.sum(weights * sps.norm.cdf(t, means, sds), axis=1), 0.0, 1.0)


def true_cdf(spec, x, t):
    """``P[Y <= t | X = x]`` for one conditioning point ``x`` and grid ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    p, fam = spec.params, spec.family
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
    x0 = float(xv[0])
    if fam == "LinearGaussian":
        return sps.norm.cdf(t, x0, np.sqrt(p["noise_var"]))
    if fam == "EconDensity":
        return sps.norm.cdf(t, x0**2, np.sqrt(1.0 + x0))
    if fam == "ArmaJump":
        c, a, q, s = p["c"], p["alpha"], p["jump_prob"], p["noise_std"]
        base = c * (1 - a) + a * x0
        return _normal_mixture_cdf(
            t, np.array([1 - q, q]), np.array([base, base - 3 * c]), np.array([s, 2 * s])
        )
    if fam == "SkewNormal":
        loc, scale, shape = (v[0] for v in _skew_params(p, x0))
        return sps.skewnorm.cdf(t, shape, loc=loc, scale=scale)
    if fam == "GaussianMixture":
        weights, means, covs = _mixture_params(p)
        sxx = covs[:, 0, 0]
        w = weights * sps.norm.pdf(x0, means[:, 0], np.sqrt(sxx))
        w = w / w.sum()
        cm = means[:, 1] + covs[:, 1, 0] / sxx * (x0 - means[:, 0])
        cv = covs[:, 1, 1] - covs[:, 1, 0] ** 2 / sxx
        return _normal_mixture_cdf(t, w, cm, np.sqrt(cv))
    if fam == "LGGMD":
        mixed, m1, m2, s1, s2, sd = (np.atleast_1d(v)[0] for v in _lggmd_components(xv[None, :]))
        if mixed:
            return _normal_mixture_cdf(t, np.array([0.5, 0.5]), np.array([m1, m2]), np.array([s1, s2]))
        return sps.norm.cdf(t, m1, sd)
    if fam == "LaplaceModel":
        if x0 <= 0:
            return (t >= 0.0).astype(np.float64)
        return sps.laplace.cdf(t, x0**2, x0)
    if fam == "CauchyModel":
        return sps.cauchy.cdf(t, x0**2, 1.0 + x0)
    if fam == "SphereHD":
        theta = float(sphere_angle(spec, xv[None, :])[0])
        if p["law"] == "gaussian":
            sd = np.sqrt(np.sin(theta / 2.0))
            if sd == 0.0:
                return (t >= theta).astype(np.float64)
            return sps.norm.cdf(t, theta, sd)
        probs = _SPHERE_PROBS[_sphere_band(np.array([theta]))[0]]
        cum = np.concatenate([[0.0], np.cumsum(probs)])
        return cum[np.clip(np.floor(t).astype(int), 0, 5)]
    if fam == "Independent":
        return sps.norm.cdf(t)
    raise DataError(f"no closed-form conditional CDF for {fam}")


def true_cond_mean(spec, x):
    """Analytic ``E[Y | X = x]`` for a batch of points (families with a finite mean)."""
    x = _rows(x)
    p, fam = spec.params, spec.family
    x0 = x[:, 0]
    if fam == "LinearGaussian":
        return x0.copy()
    if fam == "EconDensity":
        return x0**2
    if fam == "ArmaJump":
        c, a, q = p["c"], p["alpha"], p["jump_prob"]
        return c * (1 - a) + a * x0 - 3 * c * q
    if fam == "SkewNormal":
        loc, scale, shape = _skew_params(p, x0)
        delta = shape / np.sqrt(1 + shape**2)
        return loc + scale * delta * np.sqrt(2 / np.pi)
    if fam == "GaussianMixture":
        weights, means, covs = _mixture_params(p)
        sxx = covs[:, 0, 0]
        w = weights * sps.norm.pdf(x0[:, None], means[:, 0], np.sqrt(sxx))
        w = w / w.sum(axis=1, keepdims=True)
        cm = means[:, 1] + covs[:, 1, 0] / sxx * (x0[:, None] - means[:, 0])
        return (w * cm).sum(axis=1)
    if fam == "LGGMD":
        mixed, m1, m2, *_ = _lggmd_components(x)
        return np.where(mixed, 0.5 * (m1 + m2), m1)
    if fam == "LaplaceModel":
        return x0**2
    if fam == "SphereHD":
        theta = sphere_angle(spec, x)
        if p["law"] == "gaussian":
            return theta
        return _SPHERE_PROBS[_sphere_band(theta)] @ np.arange(1.0, 6.0)
    if fam == "Independent":
        return np.zeros_like(x0)
    raise DataError(f"conditional mean undefined or unavailable for {fam}")


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _read_table(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise DataError(f"{path}: non-numeric value in row {lineno}") from None
    return header, np.asarray(rows, dtype=np.float64).reshape(-1, len(header))


def _scale(train, *others, how):
    if how == "none":
        return (train, *others)
    if how == "zscore":
        loc, sc = train.mean(axis=0), train.std(axis=0)
    elif how == "minmax":
        loc, sc = train.min(axis=0), train.max(axis=0) - train.min(axis=0)
    else:
        raise DataError(f"unknown scaling {how!r}")
    sc = np.where(sc > 0, sc, 1.0)
    return tuple((a - loc) / sc for a in (train, *others))


def load_csv(path, x_cols, y_cols, fractions=(0.8, 0.1, 0.1), seed=0, scaling="none"):
    """Read a headed CSV and return seeded ``(train, val, test)`` splits.

    Scaling statistics ("zscore" or "minmax") come from the training split.
    """
    header, table = _read_table(path)
    missing = [c for c in (*x_cols, *y_cols) if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise DataError("fractions must be three nonnegative numbers summing to 1")
    xi = [header.index(c) for c in x_cols]
    yi = [header.index(c) for c in y_cols]
    n = table.shape[0]
    perm = np.random.default_rng(seed).permutation(n)
    n_tr = int(round(fractions[0] * n))
    n_va = int(round(fractions[1] * n))
    parts = (perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :])
    xs = _scale(*(table[p][:, xi] for p in parts), how=scaling)
    ys = _scale(*(table[p][:, yi] for p in parts), how=scaling)
    return tuple(SampleSet(a, b, seed=seed) for a, b in zip(xs, ys))
