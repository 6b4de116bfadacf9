"""Deterministic dense numerics: the small kernel every other module builds on.

Matrices are plain 2-D numpy arrays (row-major, float32 for training,
float64 for gradient-check runs). Randomness always flows through an
explicitly seeded ``numpy.random.Generator`` backed by PCG64 (period
2**128), so identical seeds give identical streams across runs and
platforms.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_DTYPE = np.float32

# Variance stabilizer used by row statistics / normalization layers.
EPS_VAR = 1e-5


class NonFiniteError(ArithmeticError):
    """A numeric result contains NaN or Inf."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the single source of randomness in a run."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return a


def as_matrix(data, dtype=None) -> np.ndarray:
    """Coerce to a 2-D array and validate finiteness."""
    a = np.asarray(data, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
    return check_finite(a, "matrix")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with shape validation and a finiteness sweep.

    Delegates to BLAS; on a fixed machine/thread count the reduction order
    is stable, so repeated runs are bit-identical.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul result")


def rowwise_mean_std(h: np.ndarray, eps_var: float = EPS_VAR):
    """Per-row mean and (biased, eps-stabilized) standard deviation.

    std_i = sqrt(mean_j (h_ij - mean_i)^2 + eps_var), so constant rows give
    std = sqrt(eps_var) instead of zero.
    """
    if h.ndim != 2 or h.shape[1] < 1:
        raise ValueError("rowwise_mean_std expects a non-empty 2-D array")
    mean = h.mean(axis=1)
    var = ((h - mean[:, None]) ** 2).mean(axis=1) + eps_var
    check_finite(var, "row variance")
    return mean, np.sqrt(var)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    (f(x + h e_ij) - f(x - h e_ij)) / (2h) per entry; the oracle every
    analytic backward pass is checked against. Works in float64.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = float(f(x))
        x[idx] = orig - h
        fm = float(f(x))
        x[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("objective returned a non-finite value")
        grad[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1e-8, |a|+|b|), the usual gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))
