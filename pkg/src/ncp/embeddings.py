"""Feature maps ``u: X -> R^d``, ``v: Y -> R^d`` and the singular-value map."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, Tensor, exp, gelu, square

__all__ = [
    "MlpSpec",
    "Mlp",
    "EmbeddingModel",
    "StandardizationStats",
    "init",
    "sigma",
    "sigma_tensor",
    "forward_u",
    "forward_v",
]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = (64, 64)
    output_dim: int = 100
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be nonempty")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.activation.lower() != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass
class Mlp:
    """Weights and biases of one MLP; hidden layers use GELU, output is linear."""

    spec: MlpSpec
    weights: list
    biases: list

    @classmethod
    def random(cls, spec, rng):
        weights, biases = [], []
        widths = spec.widths
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            weights.append(Tensor(w, requires_grad=True))
            biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
        return cls(spec, weights, biases)

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __call__(self, x):
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = gelu(h)
        return h

    def numpy_forward(self, x):
        """Forward pass on plain arrays, bypassing the tape."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.value + b.value
            if i < last:
                h = gelu(h)
        return h


@dataclass
class StandardizationStats:
    """Per-coordinate location and scale for X and Y (training split only)."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    def __post_init__(self):
        for name in ("x_mean", "x_scale", "y_mean", "y_scale"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        if np.any(self.x_scale <= 0) or np.any(self.y_scale <= 0):
            raise ValueError("standardization scales must be strictly positive")

    @classmethod
    def fit(cls, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)

        def scale(a):
            s = a.std(axis=0)
            return np.where(s > 0, s, 1.0)

        return cls(x.mean(axis=0), scale(x), y.mean(axis=0), scale(y))

    @classmethod
    def identity(cls, dx, dy):
        return cls(np.zeros(dx), np.ones(dx), np.zeros(dy), np.ones(dy))

    def transform_x(self, x):
        return (_as_rows(x, self.x_mean.size) - self.x_mean) / self.x_scale

    def transform_y(self, y):
        return (_as_rows(y, self.y_mean.size) - self.y_mean) / self.y_scale


def _as_rows(a, dim):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim <= 1:
        a = a.reshape(-1, dim)
    if a.shape[1] != dim:
        raise DimensionError(f"expected {dim} columns, got {a.shape[1]}")
    return a


@dataclass
class EmbeddingModel:
    """Parameters of ``u``, ``v`` and the singular-value logits ``w``."""

    u: Mlp
    v: Mlp
    w: Tensor
    d: int = field(init=False)

    def __post_init__(self):
        self.d = int(self.w.value.size)
        if self.u.spec.output_dim != self.d or self.v.spec.output_dim != self.d:
            raise ValueError("u and v output dimension must equal len(w)")

    def parameters(self):
        return [*self.u.parameters(), *self.v.parameters(), self.w]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def get_state(self):
        return [p.value.copy() for p in self.parameters()]

    def set_state(self, state):
        for p, value in zip(self.parameters(), state):
            p.value = np.array(value, dtype=np.float64)


def init(spec_u, spec_v, d, seed):
    """Random initialization; deterministic in ``seed``.

    Layers use normal weights with variance ``2 / fan_in`` and zero biases;
    the logits ``w`` are drawn from ``N(0, (1/d)^2)``.
    """
    if d < 1:
        raise ValueError("latent dimension d must be >= 1")
    if spec_u.output_dim != d or spec_v.output_dim != d:
        raise ValueError(
            f"MLP output dims ({spec_u.output_dim}, {spec_v.output_dim}) must equal d={d}"
        )
    rng = np.random.default_rng(seed)
    u = Mlp.random(spec_u, rng)
    v = Mlp.random(spec_v, rng)
    w = Tensor(rng.normal(0.0, 1.0 / d, size=d), requires_grad=True)
    return EmbeddingModel(u, v, w)


def sigma(model_or_w):
    """Singular values ``exp(-w**2)`` as a plain array."""
    w = model_or_w.w.value if isinstance(model_or_w, EmbeddingModel) else np.asarray(model_or_w)
    return np.exp(-np.square(np.asarray(w, dtype=np.float64)))


def sigma_tensor(model):
    return exp(-square(model.w))


def _check_input(mlp, x):
    dim = mlp.spec.input_dim
    value = x.value if isinstance(x, Tensor) else np.asarray(x)
    if value.ndim != 2 or value.shape[1] != dim:
        raise DimensionError(f"expected (batch, {dim}) input, got {value.shape}")


def forward_u(model, x_batch, tape=True):
    """Evaluate ``u`` on standardized inputs; returns a Tensor when ``tape``."""
    _check_input(model.u, x_batch)
    return model.u(x_batch) if tape else model.u.numpy_forward(x_batch)


def forward_v(model, y_batch, tape=True):
    _check_input(model.v, y_batch)
    return model.v(y_batch) if tape else model.v.numpy_forward(y_batch)
