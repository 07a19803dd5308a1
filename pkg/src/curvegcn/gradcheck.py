"""Randomized central finite-difference verification of every
differentiable primitive and of the two contour samplers.

Each check builds a random instance, contracts the op's output with a
random cotangent to get a scalar, and compares the hand-written backward
against central differences (h=1e-5).  Samplers are differentiated through
their frozen parametrization maps, which is the function their backward
passes implement.
"""

from __future__ import annotations

import time

import numpy as np

from . import geometry
from . import numerics as nm

FD_H = 1e-5


def _num_grad(f, x, h=FD_H):
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


def _rel_err(analytic, numeric):
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    denom = max(1.0, float(np.max(np.abs(n))) if n.size else 1.0)
    return float(np.max(np.abs(a - n))) / denom


def _check_linear(rng):
    b, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
    x = rng.normal(size=(b, i))
    w = rng.normal(size=(i, o))
    bias = rng.normal(size=o)
    cot = rng.normal(size=(b, o))
    dx, dw, db = nm.linear_backward(x, w, cot)
    f = lambda xp, wp, bp: float((nm.linear(xp, wp, bp) * cot).sum())
    return max(_rel_err(dx, _num_grad(lambda v: f(v, w, bias), x)),
               _rel_err(dw, _num_grad(lambda v: f(x, v, bias), w)),
               _rel_err(db, _num_grad(lambda v: f(x, w, v), bias)))


def _check_relu(rng):
    x = rng.normal(size=rng.integers(2, 12))
    x[np.abs(x) < 0.05] += 0.1  # stay clear of the kink
    cot = rng.normal(size=x.shape)
    analytic = nm.relu_backward(x, cot)
    return _rel_err(analytic,
                    _num_grad(lambda v: float((nm.relu(v) * cot).sum()), x))


def _check_bilinear_fmap(rng):
    c, h, w = rng.integers(1, 4), rng.integers(2, 7), rng.integers(2, 7)
    fmap = rng.normal(size=(c, h, w))
    p = rng.integers(1, 6)
    xs = rng.uniform(0.05, 0.95, size=p)
    ys = rng.uniform(0.05, 0.95, size=p)
    cot = rng.normal(size=(p, c))
    dfmap, _, _ = nm.sample_grid_backward(fmap, xs, ys, cot)
    return _rel_err(dfmap, _num_grad(
        lambda v: float((nm.sample_grid(v, xs, ys) * cot).sum()), fmap))


def _check_bilinear_coords(rng):
    c, h, w = rng.integers(1, 4), rng.integers(3, 8), rng.integers(3, 8)
    fmap = rng.normal(size=(c, h, w))
    p = rng.integers(1, 5)
    # keep away from cell boundaries where the blend has kinks
    xs = (rng.integers(0, w, size=p) + rng.uniform(0.3, 0.7, size=p)) / w
    ys = (rng.integers(0, h, size=p) + rng.uniform(0.3, 0.7, size=p)) / h
    cot = rng.normal(size=(p, c))
    _, dxs, dys = nm.sample_grid_backward(fmap, xs, ys, cot)
    f = lambda xv, yv: float((nm.sample_grid(fmap, xv, yv) * cot).sum())
    return max(_rel_err(dxs, _num_grad(lambda v: f(v, ys), xs)),
               _rel_err(dys, _num_grad(lambda v: f(xs, v), ys)))


def _check_conv2d(rng):
    cin, cout = rng.integers(1, 3), rng.integers(1, 3)
    stride = int(rng.integers(1, 3))
    x = rng.normal(size=(cin, 5, 5))
    k = rng.normal(size=(cout, cin, 3, 3))
    cot = rng.normal(size=nm.conv2d(x, k, stride=stride, padding=1).shape)
    dx, dk = nm.conv2d_backward(x, k, cot, stride=stride, padding=1)
    f = lambda xv, kv: float((nm.conv2d(xv, kv, stride=stride, padding=1) * cot).sum())
    return max(_rel_err(dx, _num_grad(lambda v: f(v, k), x)),
               _rel_err(dk, _num_grad(lambda v: f(x, v), k)))


def _check_bce(rng):
    pred = rng.uniform(0.05, 0.95, size=rng.integers(2, 10))
    target = (rng.uniform(size=pred.shape) > 0.5).astype(float)
    analytic = nm.bce_backward(pred, target)
    return _rel_err(analytic, _num_grad(lambda v: nm.bce(v, target), pred))


def _random_star(rng, n):
    theta = 2 * np.pi * np.arange(n) / n
    r = rng.uniform(0.15, 0.45, size=n)
    return np.stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)], axis=1)


def _check_crs_sample(rng):
    n = int(rng.integers(4, 9))
    pts = _random_star(rng, n)
    k = int(rng.integers(n, 4 * n))
    contour = geometry.crs_sample(geometry.ControlCurve(pts), k)
    cot = rng.normal(size=(k, 2))
    analytic = geometry.contour_backward(contour, cot)
    return _rel_err(analytic, _num_grad(
        lambda v: float((geometry.apply_sample_map(contour, v) * cot).sum()), pts))


def _check_polygon_sample(rng):
    n = int(rng.integers(3, 9))
    pts = _random_star(rng, n)
    k = int(rng.integers(n, 4 * n))
    contour = geometry.polygon_sample(
        geometry.ControlCurve(pts, geometry.POLYGON), k)
    cot = rng.normal(size=(k, 2))
    analytic = geometry.contour_backward(contour, cot)
    return _rel_err(analytic, _num_grad(
        lambda v: float((geometry.apply_sample_map(contour, v) * cot).sum()), pts))


SUITE = [
    ("linear", _check_linear, 1e-5),
    ("relu", _check_relu, 1e-5),
    ("bilinear_sample/fmap", _check_bilinear_fmap, 1e-5),
    ("bilinear_sample/coords", _check_bilinear_coords, 1e-5),
    ("conv2d", _check_conv2d, 1e-5),
    ("bce", _check_bce, 1e-5),
    ("crs_sample", _check_crs_sample, 1e-4),
    ("polygon_sample", _check_polygon_sample, 1e-4),
]


def run_suite(cases: int = 100, seed: int = 0):
    """Run every check `cases` times; returns a per-primitive result dict."""
    results = {}
    for name, check, tol in SUITE:
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(cases):
            worst = max(worst, check(rng))
        results[name] = {
            "max_rel_err": worst,
            "tolerance": tol,
            "passed": worst < tol,
            "seconds": time.perf_counter() - start,
        }
    return results
