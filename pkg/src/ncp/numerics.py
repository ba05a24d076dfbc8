"""Dense linear algebra helpers and a small tape-based reverse-mode engine.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The
differentiable counterpart is :class:`Tensor`, which records the operations
used to build a scalar objective and replays them backwards in
:func:`backward`.  Only the primitives needed by the training loss are
differentiable; :func:`svd_full` and :func:`inv_sqrt_psd` operate on raw
arrays and are used in post-processing only.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "DimensionError",
    "NumericError",
    "NotPSDError",
    "Tensor",
    "as_matrix",
    "matmul",
    "svd_full",
    "inv_sqrt_psd",
    "backward",
    "gelu",
    "exp",
    "square",
    "trace",
    "frobenius_sq",
]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""


class NotPSDError(NumericError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


def as_matrix(data, rows=None, cols=None):
    """Build a finite float64 2-d array, optionally from row-major flat data."""
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None or cols is not None:
        if rows is None or cols is None or arr.size != rows * cols:
            raise DimensionError(f"cannot shape {arr.size} values as {rows}x{cols}")
        arr = arr.reshape(rows, cols)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("matrix has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# reverse-mode engine
# ---------------------------------------------------------------------------


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node of the differentiation tape.

    ``value`` is the forward result, ``grad`` the accumulated adjoint, and
    ``parents`` a tuple of ``(node, vjp)`` pairs where ``vjp`` maps the
    adjoint of this node to the contribution for ``node``.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return Tensor(self.value.T, ((self, lambda g: g.T),))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        a, b = self, other
        return Tensor(
            a.value + b.value,
            ((a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, ((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other
        return Tensor(
            a.value * b.value,
            (
                (a, lambda g: _unbroadcast(g * b.value, a.shape)),
                (b, lambda g: _unbroadcast(g * a.value, b.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_lift(other), self)

    # reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.value.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, a.shape).copy()

        return Tensor(out, ((a, vjp),))

    def mean(self, axis=None, keepdims=False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / count

    def reshape(self, *shape):
        a = self
        return Tensor(a.value.reshape(*shape), ((a, lambda g: g.reshape(a.shape)),))


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b):
    """Matrix product; differentiable when either operand is a :class:`Tensor`."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch {a.shape} x {b.shape}")
        return a @ b
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return Tensor(
        a.value @ b.value,
        ((a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)),
    )


def elementwise(x, fn, dfn):
    """Apply ``fn`` entrywise with derivative ``dfn`` (both on raw arrays)."""
    x = _lift(x)
    return Tensor(fn(x.value), ((x, lambda g: g * dfn(x.value)),))


def _gelu(v):
    return 0.5 * v * (1.0 + erf(v / _SQRT2))


def _gelu_grad(v):
    return 0.5 * (1.0 + erf(v / _SQRT2)) + v * _INV_SQRT_2PI * np.exp(-0.5 * v * v)


def gelu(x):
    """Exact GELU ``x * Phi(x)``; accepts arrays or tensors."""
    if isinstance(x, Tensor):
        return elementwise(x, _gelu, _gelu_grad)
    return _gelu(np.asarray(x, dtype=np.float64))


def exp(x):
    if isinstance(x, Tensor):
        out = np.exp(x.value)
        return Tensor(out, ((x, lambda g: g * out),))
    return np.exp(x)


def square(x):
    if isinstance(x, Tensor):
        return Tensor(x.value * x.value, ((x, lambda g: 2.0 * g * x.value),))
    return np.square(x)


def trace(x):
    x = _lift(x)
    if x.value.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"trace of non-square shape {x.shape}")
    n = x.shape[0]
    return Tensor(np.trace(x.value), ((x, lambda g: g * np.eye(n)),))


def frobenius_sq(x):
    """Squared Frobenius norm."""
    return square(_lift(x)).sum()


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output):
    """Propagate adjoints from a scalar ``output`` to every node on its tape.

    Gradients are accumulated into ``.grad`` of the participating leaves;
    callers zero them between steps.  Returns the list of leaf tensors that
    received a gradient.
    """
    if not isinstance(output, Tensor) or output.value.size != 1:
        raise ValueError("backward() requires a scalar Tensor output")
    order = _topological_order(output)
    adjoint = {id(output): np.ones_like(output.value)}
    leaves = []
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            key = id(parent)
            adjoint[key] = contrib if key not in adjoint else adjoint[key] + contrib
    return leaves


# ---------------------------------------------------------------------------
# decompositions
# ---------------------------------------------------------------------------


def svd_full(m):
    """Thin SVD ``m = U diag(s) Vt`` with ``s`` sorted in descending order."""
    m = as_matrix(m)
    try:
        U, s, Vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    return U, s, Vt


def inv_sqrt_psd(m, eps=0.0, tol=1e-8):
    """Inverse square root of a symmetric PSD matrix via its eigendecomposition.

    Eigenvalues are floored at ``eps`` before inversion, so directions with
    eigenvalue above ``eps`` are inverted exactly and near-null directions
    stay finite.  Eigenvalues below ``-tol`` raise :class:`NotPSDError`.
    """
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"inv_sqrt_psd of non-square shape {m.shape}")
    sym = 0.5 * (m + m.T)
    lam, Q = np.linalg.eigh(sym)
    if lam.size and lam[0] < -tol:
        raise NotPSDError(f"smallest eigenvalue {lam[0]:.3e} below -{tol:g}")
    floor = max(float(eps), np.finfo(np.float64).tiny)
    if eps == 0.0 and lam.size and lam[0] <= 0.0:
        raise NotPSDError("matrix is singular; pass eps > 0")
    lam = np.maximum(lam, floor)
    out = (Q / np.sqrt(lam)) @ Q.T
    return 0.5 * (out + out.T)
