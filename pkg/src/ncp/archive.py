"""Binary model archive.

Layout::

    magic   8 bytes   b"NCPARCH\\0"
    version u32 LE
    hlen    u64 LE    length of the JSON header in bytes
    header  hlen bytes UTF-8 JSON
    payload concatenated little-endian float64 arrays

The header lists every array with its shape and byte offset into the
payload, plus the scalar metadata (specs, config, mode).  Arrays are stored
as raw doubles, so a loaded model reproduces all inference outputs bitwise.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import struct

import numpy as np

from .embeddings import EmbeddingModel, Mlp, MlpSpec, StandardizationStats
from .numerics import Tensor
from .postprocess import WhitenedModel
from .trainer import EpochRecord, FittedModel, TrainConfig

__all__ = ["ArchiveError", "FORMAT_VERSION", "MAGIC", "save", "load", "file_hash", "config_hash"]

MAGIC = b"NCPARCH\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class ArchiveError(ValueError):
    """Unreadable, truncated or incompatible archive."""


def config_hash(config):
    text = json.dumps(_config_dict(config), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _config_dict(config):
    if config is None:
        return None
    out = dataclasses.asdict(config)
    out["adam_betas"] = list(out["adam_betas"])
    out["hidden_widths"] = list(out["hidden_widths"])
    return out


def _spec_dict(spec):
    return {
        "input_dim": spec.input_dim,
        "hidden_widths": list(spec.hidden_widths),
        "output_dim": spec.output_dim,
        "activation": spec.activation,
    }


class _Writer:
    def __init__(self):
        self.entries = {}
        self.chunks = []
        self.offset = 0

    def add(self, name, array):
        a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
        raw = a.tobytes(order="C")
        self.entries[name] = {"shape": list(a.shape), "offset": self.offset}
        self.chunks.append(raw)
        self.offset += len(raw)


def _collect(model):
    if isinstance(model, WhitenedModel):
        fitted, post = model.base, model
    elif isinstance(model, FittedModel):
        fitted, post = model, None
    else:
        raise TypeError(f"cannot archive {type(model).__name__}")
    return fitted, post


def save(model, path):
    """Write a fitted (optionally post-processed) model to ``path``."""
    fitted, post = _collect(model)
    w = _Writer()
    m = fitted.model
    for tag, mlp in (("u", m.u), ("v", m.v)):
        for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
            w.add(f"{tag}.W{i}", W.value)
            w.add(f"{tag}.b{i}", b.value)
    w.add("w", m.w.value)
    st = fitted.stats
    for name in ("x_mean", "x_scale", "y_mean", "y_scale"):
        w.add(f"stats.{name}", getattr(st, name))
    w.add("train_x_values", fitted.train_x_values)
    w.add("train_y_values", fitted.train_y_values)
    w.add("train_y_features", fitted.train_y_features)
    w.add("u_mean", fitted.u_mean)
    w.add("v_mean", fitted.v_mean)
    hist = np.array([[r.epoch, r.train_loss, r.train_reg, r.val_loss] for r in fitted.loss_history])
    w.add("loss_history", hist.reshape(-1, 4))
    if post is not None:
        w.add("post.u_mean", post.u_mean)
        w.add("post.v_mean", post.v_mean)
        w.add("post.u_transform", post.u_transform)
        w.add("post.v_transform", post.v_transform)
        w.add("post.new_sigma", post.new_sigma)
    header = {
        "format_version": FORMAT_VERSION,
        "spec_u": _spec_dict(m.u.spec),
        "spec_v": _spec_dict(m.v.spec),
        "best_epoch": int(fitted.best_epoch),
        "config": _config_dict(fitted.config),
        "config_hash": config_hash(fitted.config) if fitted.config is not None else None,
        "mode": post.mode if post is not None else None,
        "arrays": w.entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for chunk in w.chunks:
            fh.write(chunk)


def _read(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PREFIX.size:
        raise ArchiveError(f"{path}: file too short to be an archive")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: not a model archive (bad magic)")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(blob)[start + hlen :]
    arrays = {}
    for name, meta in header["arrays"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        off = meta["offset"]
        if off + 8 * count > len(payload):
            raise ArchiveError(f"{path}: truncated payload at array {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
    return header, arrays


def _mlp(tag, spec, arrays):
    n = len(spec.widths) - 1
    weights = [Tensor(arrays[f"{tag}.W{i}"], requires_grad=True) for i in range(n)]
    biases = [Tensor(arrays[f"{tag}.b{i}"], requires_grad=True) for i in range(n)]
    return Mlp(spec, weights, biases)


def _config(d):
    if d is None:
        return None
    d = dict(d)
    d["adam_betas"] = tuple(d["adam_betas"])
    d["hidden_widths"] = tuple(d["hidden_widths"])
    return TrainConfig(**d)


def load(path):
    """Read an archive; returns a :class:`WhitenedModel` if post-processing
    was saved, else the :class:`FittedModel`."""
    header, a = _read(path)
    spec_u = MlpSpec(**{**header["spec_u"], "hidden_widths": tuple(header["spec_u"]["hidden_widths"])})
    spec_v = MlpSpec(**{**header["spec_v"], "hidden_widths": tuple(header["spec_v"]["hidden_widths"])})
    model = EmbeddingModel(_mlp("u", spec_u, a), _mlp("v", spec_v, a), Tensor(a["w"], requires_grad=True))
    stats = StandardizationStats(a["stats.x_mean"], a["stats.x_scale"], a["stats.y_mean"], a["stats.y_scale"])
    history = [EpochRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in a["loss_history"]]
    fitted = FittedModel(
        model=model,
        stats=stats,
        train_x_values=a["train_x_values"],
        train_y_values=a["train_y_values"],
        train_y_features=a["train_y_features"],
        u_mean=a["u_mean"],
        v_mean=a["v_mean"],
        loss_history=history,
        best_epoch=header["best_epoch"],
        config=_config(header["config"]),
    )
    if header["mode"] is None:
        return fitted
    return WhitenedModel(
        fitted,
        a["post.u_mean"],
        a["post.v_mean"],
        a["post.u_transform"],
        a["post.v_transform"],
        a["post.new_sigma"],
        header["mode"],
    )


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
