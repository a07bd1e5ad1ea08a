"""Shared test utilities: finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

FD_STEP = 1e-4


def numerical_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar-valued f at every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f(x)
        x[idx] = orig - h
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
        it.iternext()
    return grad


def numerical_grad_at(f, x: np.ndarray, coords, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences at a subset of flat coordinates."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                mask: np.ndarray | None = None) -> float:
    """max |a - n| / max(|a|, |n|, 1e-6), optionally restricted by a mask."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    err = np.abs(a - n) / denom
    if mask is not None:
        if not np.any(mask):
            return 0.0
        err = err[mask]
    return float(err.max())


def random_params_subset(rng: np.random.Generator, size: int, k: int = 6):
    """Deterministic sample of flat coordinates for large-tensor checks."""
    k = min(k, size)
    return rng.choice(size, size=k, replace=False)
