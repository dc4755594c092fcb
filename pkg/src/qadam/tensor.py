"""Flat float64 vectors and the handful of operations built on them.

Tensors are plain 1-D ``numpy`` arrays of dtype float64.  The helpers here
add the checks the rest of the package relies on (matching lengths, finite
values, strictly positive denominators) and reductions with a fixed
left-to-right order so norms are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

__all__ = ["as_tensor", "elementwise", "norm", "dot", "fixed_sum"]


def as_tensor(values, *, copy: bool = True) -> np.ndarray:
    """Coerce ``values`` to a finite, read-only float64 vector."""
    arr = np.array(values, dtype=np.float64, copy=copy)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def _check_pair(a: np.ndarray, b) -> None:
    if isinstance(b, np.ndarray) and b.shape != a.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply a coordinatewise operation.

    ``op`` is one of add, sub, mul, div, square, sqrt, scale.  ``b`` is a
    tensor of the same length or a scalar for the binary ops.
    """
    a = np.asarray(a, dtype=np.float64)
    if op in ("add", "sub", "mul", "div", "scale"):
        if b is None:
            raise ValueError(f"{op} needs a second operand")
        if not np.isscalar(b):
            b = np.asarray(b, dtype=np.float64)
        _check_pair(a, b)
    if op == "add":
        out = a + b
    elif op == "sub":
        out = a - b
    elif op in ("mul", "scale"):
        out = a * b
    elif op == "div":
        if np.any(np.asarray(b) <= 0.0):
            raise DomainError("division by a non-positive denominator")
        out = a / b
    elif op == "square":
        out = a * a
    elif op == "sqrt":
        if np.any(a <= 0.0):
            raise DomainError("sqrt of a non-positive argument")
        out = np.sqrt(a)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return as_tensor(out, copy=False)


def fixed_sum(values: np.ndarray) -> float:
    """Sum in strict left-to-right order (``np.sum`` is pairwise)."""
    if values.size == 0:
        return 0.0
    return float(np.add.accumulate(values)[-1])


def norm(x, kind: str = "l2") -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    if kind == "l2":
        return float(np.sqrt(fixed_sum(x * x)))
    if kind == "l1":
        return fixed_sum(np.abs(x))
    if kind == "linf":
        return float(np.max(np.abs(x)))
    raise ValueError(f"unknown norm kind {kind!r}")


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    return fixed_sum(a * b)
