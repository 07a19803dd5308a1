"""Shared test oracles: central finite differences and error measures."""

import numpy as np


def num_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(analytic, numeric):
    """max |a - n| scaled by max(1, max|n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(1.0, float(np.max(np.abs(n))) if n.size else 1.0)
    return float(np.max(np.abs(a - n))) / denom


def shoelace(points):
    """Signed polygon area (positive for counter-clockwise order)."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
