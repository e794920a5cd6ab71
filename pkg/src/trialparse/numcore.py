"""Minimal dense numeric kernel used by the tagger.

Arrays are plain float64 numpy ndarrays. Every exported operation checks
its output for NaN/Inf and raises NumericsError instead of letting bad
values propagate into the dynamic programs downstream. Reductions run
single-threaded inside one call; the same inputs give the same bits on
reruns within a platform.
"""

from collections.abc import Callable, Sequence

import numpy as np

from .errors import NumericsError

# Surrogate for -inf in masked scores: large enough that exp() underflows
# to exactly 0 after a max shift, finite so max-shifts never produce NaN.
NEG_INF = -1e30


def as_f64(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce to a float64 array, optionally checking the shape."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    return arr


def require_finite(name: str, arr: np.ndarray) -> np.ndarray:
    """Raise NumericsError if arr contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {name}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape diagnostics.

    Raises ValueError naming both shapes when the inner dimensions
    disagree, NumericsError if the product is non-finite.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(invalid="ignore", over="ignore"):
        out = a @ b
    return require_finite("matmul result", out)


def logsumexp(v: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """log(sum(exp(v))) with a max shift; shift-invariant and overflow-safe."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty array")
    vmax = np.max(v, axis=axis, keepdims=True)
    out = vmax + np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    out = require_finite("logsumexp result", out)
    return float(out) if out.ndim == 0 else out


def softmax_row(v: np.ndarray) -> np.ndarray:
    """Softmax of a 1-D array: nonnegative, sums to 1, max-shifted."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"softmax_row expects a 1-D array, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("softmax_row of an empty array")
    shifted = np.exp(v - np.max(v))
    return require_finite("softmax_row result", shifted / shifted.sum())


def grad_check(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic_grad: np.ndarray,
    epsilon: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic_grad and central differences of f.

    Central differences are evaluated per flat coordinate of `point`;
    `coords` restricts the check to a subset of flat indices (all when
    None). Relative error per coordinate is
    |g_num - g_ana| / max(1e-8, |g_num| + |g_ana|).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    point = np.asarray(point, dtype=np.float64)
    analytic = as_f64(analytic_grad, point.shape)
    flat = point.ravel()
    indices = range(flat.size) if coords is None else coords
    worst = 0.0
    for idx in indices:
        probe = flat.copy()
        probe[idx] += epsilon
        f_plus = float(f(probe.reshape(point.shape)))
        probe[idx] -= 2.0 * epsilon
        f_minus = float(f(probe.reshape(point.shape)))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericsError(f"non-finite function value at probe coordinate {idx}")
        g_num = (f_plus - f_minus) / (2.0 * epsilon)
        g_ana = analytic.ravel()[idx]
        err = abs(g_num - g_ana) / max(1e-8, abs(g_num) + abs(g_ana))
        worst = max(worst, err)
    return worst
