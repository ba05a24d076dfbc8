"""Training loop: two disjoint batches per step, Adam, early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import embeddings as emb
from .loss import ESTIMATORS, LossConfig, evaluate, total_loss
from .numerics import backward

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "Adam",
    "FittedModel",
    "EpochRecord",
    "train",
    "MAX_RETAINED",
]

log = logging.getLogger(__name__)

MAX_RETAINED = 100_000


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, message="non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    gamma: float = 1e-3
    patience: int = 100
    seed: int = 0
    estimator: str = "covariance_form"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    d: int = 100
    hidden_widths: tuple = (64, 64)

    def __post_init__(self):
        if self.batch_size < 4 or self.batch_size % 2:
            raise ValueError("batch_size must be even and >= 4")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


class Adam:
    """Adam over a list of tensors; state is owned by the optimizer."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_reg: float
    val_loss: float

    def as_row(self):
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_reg": self.train_reg,
            "val_loss": self.val_loss,
        }


@dataclass
class FittedModel:
    """A trained embedding model plus everything inference needs."""

    model: emb.EmbeddingModel
    stats: emb.StandardizationStats
    train_x_values: np.ndarray
    train_y_values: np.ndarray
    train_y_features: np.ndarray
    u_mean: np.ndarray
    v_mean: np.ndarray
    loss_history: list = field(default_factory=list)
    best_epoch: int = -1
    config: TrainConfig | None = None

    def __post_init__(self):
        if self.train_y_features.shape[0] == 0:
            raise ValueError("FittedModel needs at least one retained training row")

    @property
    def d(self):
        return self.model.d

    @property
    def sigma(self):
        return emb.sigma(self.model)

    def u_raw(self, x):
        """``u`` on inputs in original units."""
        return emb.forward_u(self.model, self.stats.transform_x(x), tape=False)

    def v_raw(self, y):
        return emb.forward_v(self.model, self.stats.transform_y(y), tape=False)

    def train_x_features(self):
        return self.u_raw(self.train_x_values)


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def build_model(dx, dy, config):
    spec_u = emb.MlpSpec(dx, config.hidden_widths, config.d)
    spec_v = emb.MlpSpec(dy, config.hidden_widths, config.d)
    return emb.init(spec_u, spec_v, config.d, config.seed)


def train(data, val, config, callback=None):
    """Fit an NCP model on ``data`` (a SampleSet) with early stopping on ``val``."""
    x, y = _as_2d(data.x), _as_2d(data.y)
    xv, yv = _as_2d(val.x), _as_2d(val.y)
    n = x.shape[0]
    window = 2 * config.batch_size
    if n < window:
        raise ValueError(f"need at least {window} training rows, got {n}")
    if xv.shape[0] == 0:
        raise ValueError("validation set is empty")

    stats = emb.StandardizationStats.fit(x, y)
    xs, ys = stats.transform_x(x), stats.transform_y(y)
    xvs, yvs = stats.transform_x(xv), stats.transform_y(yv)

    model = build_model(x.shape[1], y.shape[1], config)
    loss_cfg = LossConfig(config.gamma, config.estimator)
    opt = Adam(model.parameters(), config.learning_rate, config.adam_betas, config.adam_eps)
    rng = np.random.default_rng(config.seed)

    history = []
    best_val = np.inf
    best_state = model.get_state()
    best_epoch = -1
    half = config.batch_size
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses, regs = [], []
        for start in range(0, n - window + 1, window):
            idx = perm[start : start + window]
            i1, i2 = idx[:half], idx[half:]
            model.zero_grad()
            total, L, R = total_loss((xs[i1], ys[i1]), (xs[i2], ys[i2]), model, loss_cfg)
            value = float(total.value)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            backward(total)
            opt.step()
            losses.append(float(L.value))
            regs.append(float(R.value))
        _, _, val_loss = evaluate(model, xvs, yvs, config.gamma)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        rec = EpochRecord(epoch, float(np.mean(losses)), float(np.mean(regs)), val_loss)
        history.append(rec)
        if callback is not None:
            callback(rec)
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = model.get_state()
        elif epoch - best_epoch >= config.patience:
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    model.set_state(best_state)
    return _finalize(model, stats, x, y, history, best_epoch, config)


def _finalize(model, stats, x, y, history, best_epoch, config):
    n = x.shape[0]
    if n > MAX_RETAINED:
        keep = np.sort(np.random.default_rng(config.seed).choice(n, MAX_RETAINED, replace=False))
    else:
        keep = np.arange(n)
    xs, ys = stats.transform_x(x), stats.transform_y(y)
    U = emb.forward_u(model, xs, tape=False)
    V = emb.forward_v(model, ys, tape=False)
    return FittedModel(
        model=model,
        stats=stats,
        train_x_values=x[keep].copy(),
        train_y_values=y[keep].copy(),
        train_y_features=V[keep],
        u_mean=U.mean(axis=0),
        v_mean=V.mean(axis=0),
        loss_history=history,
        best_epoch=best_epoch,
        config=config,
    )
