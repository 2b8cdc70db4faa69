"""Dense float64 primitives, an SGD step and a central-difference gradient oracle.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
Every function here is pure except :func:`sgd_step`, which updates the
parameter groups it is given in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, OracleError, ShapeError, TrainingDivergenceError

NORM_EPS = 1e-12


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"expected a nonempty 1-D vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a nonempty 2-D matrix, got shape {arr.shape}")
    return arr


def dot(u, v) -> float:
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise ShapeError(f"dot of lengths {u.size} and {v.size}")
    return float(u @ v)


def mat_vec_left(v, M) -> np.ndarray:
    """Row-vector product ``v^T M``."""
    v = as_vector(v)
    M = as_matrix(M)
    if v.size != M.shape[0]:
        raise ShapeError(f"vector of length {v.size} times matrix {M.shape}")
    return v @ M


def l2_normalize(v, eps: float = NORM_EPS) -> np.ndarray:
    v = as_vector(v)
    norm = float(np.sqrt(v @ v))
    if not norm > eps:
        raise DegenerateVectorError(f"cannot normalize vector of norm {norm:.3g}")
    return v / norm


def softmax(scores) -> np.ndarray:
    z = as_vector(scores)
    if not np.all(np.isfinite(z)):
        raise ShapeError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def tanh_map(v) -> np.ndarray:
    return np.tanh(as_vector(v))


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ParamGroup:
    """A named trainable array and its accumulated gradient."""

    name: str
    value: np.ndarray
    gradient: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.gradient is None:
            self.gradient = np.zeros_like(self.value)
        else:
            self.gradient = np.asarray(self.gradient, dtype=np.float64)
        if self.gradient.shape != self.value.shape:
            raise ShapeError(
                f"{self.name}: gradient shape {self.gradient.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.gradient[...] = 0.0


def sgd_step(params: Sequence[ParamGroup], lr: float) -> Sequence[ParamGroup]:
    """In-place ``value -= lr * gradient`` followed by zeroing the gradients.

    All gradients are checked before any value is touched, so a divergent
    step leaves every group unchanged.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.gradient.shape != p.value.shape:
            raise ShapeError(f"{p.name}: gradient/value shape mismatch")
        if not np.all(np.isfinite(p.gradient)):
            raise TrainingDivergenceError(f"non-finite gradient in {p.name}")
    for p in params:
        p.value -= lr * p.gradient
        p.zero_grad()
    return params


def finite_diff_grad(
    loss_fn: Callable[[], float],
    params: Sequence[ParamGroup] | Sequence[np.ndarray],
    eps: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` w.r.t. each array in ``params``.

    ``loss_fn`` takes no arguments and must read the arrays that are perturbed
    here in place; every entry is restored bit-exactly afterwards.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    arrays = [p.value if isinstance(p, ParamGroup) else p for p in params]
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn())
            flat[i] = orig - eps
            f_minus = float(loss_fn())
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise OracleError(f"non-finite loss at coordinate {i}")
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """``||a - n|| / (||a|| + ||n||)`` over a whole parameter group."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
