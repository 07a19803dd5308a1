"""Closed control curves and their dense resampling.

A curve is an ordered list of N control points in normalized crop
coordinates (top-left is (0,0), the image extent is 1) that is implicitly
closed.  It induces a boundary either as a polygon (straight edges) or as a
centripetal Catmull-Rom spline, and both can be resampled into K boundary
points whose positions are piecewise-linear functions of the control
points.

The resampling caches its linear structure: every sample is a fixed-weight
combination of a few control points, with the weights derived from knot
values / arc-length fractions.  Those weights are treated as constants in
the backward pass (the reparametrization term is dropped), which is the
approximation the training gradients rely on; `apply_sample_map` re-applies
a frozen map to perturbed control points so gradient checks can
differentiate exactly the function the backward pass claims.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

CRS_ALPHA = 0.5

POLYGON = "polygon"
SPLINE = "catmull-rom-spline"
CURVE_KINDS = (POLYGON, SPLINE)


def signed_area(points: np.ndarray) -> float:
    """Shoelace area; positive means counter-clockwise vertex order."""
    p = np.asarray(points, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def canonicalize_orientation(points: np.ndarray) -> np.ndarray:
    """Return the points in counter-clockwise order, keeping the start.

    Degenerate (zero signed area) input is returned unchanged with a
    warning.
    """
    points = np.asarray(points, dtype=np.float64)
    area = signed_area(points)
    if area == 0.0:
        warnings.warn("zero signed area: orientation left unchanged")
        return points
    if area < 0.0:
        return np.concatenate([points[:1], points[:0:-1]], axis=0)
    return points


@dataclass
class ControlCurve:
    """N ordered control points (implicitly closed) plus the curve kind."""

    points: np.ndarray
    kind: str = SPLINE

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError(f"control points must be (N,2), got {self.points.shape}")
        if len(self.points) < 3:
            raise ValueError("a closed curve needs at least 3 control points")
        if self.kind not in CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("control points must be finite")

    @property
    def n(self) -> int:
        return len(self.points)


@dataclass
class SampledContour:
    """K dense boundary points plus the frozen linear map that made them.

    `segment_index` and `local_param` record, per sample, the generating
    edge/segment and its parameter (knot value for splines, arc-length
    fraction for polygons).  `basis_idx`/`basis_w` give each sample as a
    weighted sum of control points: indices address the closure-extended
    list for splines and the raw control points for polygons.
    """

    points: np.ndarray
    segment_index: np.ndarray
    local_param: np.ndarray
    kind: str
    n_control: int
    basis_idx: np.ndarray
    basis_w: np.ndarray
    closure_ratios: tuple[float, float] | None = None

    @property
    def k(self) -> int:
        return len(self.points)


def init_circle(n: int, crop_h: int, crop_w: int, kind: str = SPLINE) -> ControlCurve:
    """N control points on a circle centered in the crop.

    The radius is 0.35 of the crop height (70% diameter); the x radius is
    scaled by crop_h/crop_w so the curve is circular in pixel space.
    Points run counter-clockwise by signed area, starting at angle 0.
    """
    if n < 3:
        raise ValueError("need at least 3 control points")
    theta = 2.0 * np.pi * np.arange(n) / n
    rx = 0.35 * crop_h / crop_w
    ry = 0.35
    pts = np.stack([0.5 + rx * np.cos(theta), 0.5 + ry * np.sin(theta)], axis=1)
    return ControlCurve(pts, kind)


# ---------------------------------------------------------------------------
# centripetal Catmull-Rom spline
# ---------------------------------------------------------------------------

def close_curve(points: np.ndarray):
    """Extend N control points with the three closure points.

    Returns (ext, rho_fwd, rho_bwd) where ext has N+3 rows laid out as
    [cp_-1, cp_0 .. cp_{N-1}, cp_N, cp_{N+1}]:

        cp_N   = cp_0
        cp_N+1 = cp_0 + (|cp_{N-1}-cp_0| / |cp_1-cp_0|) (cp_1 - cp_0)
        cp_-1  = cp_0 + (|cp_1-cp_0| / |cp_{N-1}-cp_0|) (cp_{N-1} - cp_0)

    so the closed spline is C1 across cp_0.  rho_fwd and rho_bwd are the
    two norm ratios (treated as constants in backward passes).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    fwd = points[1] - points[0]
    bwd = points[n - 1] - points[0]
    r_fwd = float(np.linalg.norm(fwd))
    r_bwd = float(np.linalg.norm(bwd))
    if r_fwd == 0.0 or r_bwd == 0.0:
        raise ValueError("coincident consecutive control points")
    rho_fwd = r_bwd / r_fwd      # scales cp_1 - cp_0 for cp_{N+1}
    rho_bwd = r_fwd / r_bwd      # scales cp_{N-1} - cp_0 for cp_{-1}
    ext = np.empty((n + 3, 2), dtype=np.float64)
    ext[1:n + 1] = points
    ext[n + 1] = points[0]
    ext[n + 2] = points[0] + rho_fwd * fwd
    ext[0] = points[0] + rho_bwd * bwd
    return ext, rho_fwd, rho_bwd


def knot_sequence(ext: np.ndarray, alpha: float = CRS_ALPHA) -> np.ndarray:
    """Chordal knots t_{i+1} = |cp_{i+1}-cp_i|^alpha + t_i over the extended
    list, anchored so the knot of cp_0 is 0."""
    chords = np.linalg.norm(np.diff(ext, axis=0), axis=1)
    if np.any(chords == 0.0):
        raise ValueError("coincident consecutive control points")
    tau = np.empty(len(ext), dtype=np.float64)
    tau[0] = 0.0
    tau[1:] = np.cumsum(chords ** alpha)
    return tau - tau[1]


def _crs_weights(tau: np.ndarray, seg: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Per-sample weights of the 4 governing extended control points.

    With fixed knots, the recursive pyramid is linear in the points, so each
    sample is w0*P0 + w1*P1 + w2*P2 + w3*P3 with the weights below (seg
    indexes the extended list at the segment's first governing point).
    """
    t0 = tau[seg]
    t1 = tau[seg + 1]
    t2 = tau[seg + 2]
    t3 = tau[seg + 3]
    a0 = (t1 - t) / (t1 - t0)
    a1 = (t - t0) / (t1 - t0)
    b1 = (t2 - t) / (t2 - t1)
    b2 = (t - t1) / (t2 - t1)
    c2 = (t3 - t) / (t3 - t2)
    c3 = (t - t2) / (t3 - t2)
    u1 = (t2 - t) / (t2 - t0)
    u2 = (t - t0) / (t2 - t0)
    v1 = (t3 - t) / (t3 - t1)
    v2 = (t - t1) / (t3 - t1)
    w1 = (t2 - t) / (t2 - t1)
    w2 = (t - t1) / (t2 - t1)
    # B1 = u1*A1 + u2*A2, B2 = v1*A2 + v2*A3, C = w1*B1 + w2*B2
    w_p0 = w1 * u1 * a0
    w_p1 = w1 * (u1 * a1 + u2 * b1) + w2 * v1 * b1
    w_p2 = w1 * u2 * b2 + w2 * (v1 * b2 + v2 * c2)
    w_p3 = w2 * v2 * c3
    return np.stack([w_p0, w_p1, w_p2, w_p3], axis=1)


def crs_eval(ext: np.ndarray, tau: np.ndarray, seg: int, t: float) -> np.ndarray:
    """Evaluate one spline segment at knot parameter t (test/tool helper)."""
    w = _crs_weights(tau, np.array([seg]), np.array([float(t)]))[0]
    return w @ ext[seg:seg + 4]


def _split_counts(k: int, n: int) -> np.ndarray:
    """Per-segment sample counts: K//N each, remainder to the first ones."""
    counts = np.full(n, k // n, dtype=int)
    counts[:k % n] += 1
    return counts


def crs_sample(curve: ControlCurve, k: int) -> SampledContour:
    """Sample K points along the closed spline, starting at cp_0.

    Each segment i gets its share of samples at parameters uniformly spaced
    in [t_i, t_{i+1}) so that segment starts land exactly on control points
    and nothing is duplicated across the closure.
    """
    if curve.kind != SPLINE:
        raise ValueError("crs_sample needs a spline curve")
    n = curve.n
    if k < n:
        raise ValueError(f"need at least one sample per segment (K={k}, N={n})")
    ext, rho_fwd, rho_bwd = close_curve(curve.points)
    tau = knot_sequence(ext)
    counts = _split_counts(k, n)
    seg = np.repeat(np.arange(n), counts)
    frac = np.concatenate([np.arange(c) / c for c in counts])
    t = tau[seg + 1] + frac * (tau[seg + 2] - tau[seg + 1])
    w = _crs_weights(tau, seg, t)
    # governing points of segment i are ext[i .. i+3]
    idx = seg[:, None] + np.arange(4)[None, :]
    pts = np.einsum("ks,ksd->kd", w, ext[idx])
    return SampledContour(points=pts, segment_index=seg, local_param=t,
                          kind=SPLINE, n_control=n, basis_idx=idx,
                          basis_w=w, closure_ratios=(rho_fwd, rho_bwd))


def polygon_sample(curve: ControlCurve, k: int) -> SampledContour:
    """Sample K points at equal arc length along the closed polygon,
    starting at cp_0."""
    if curve.kind != POLYGON:
        raise ValueError("polygon_sample needs a polygon curve")
    pts = curve.points
    n = curve.n
    edges = np.roll(pts, -1, axis=0) - pts
    lengths = np.linalg.norm(edges, axis=1)
    perimeter = float(lengths.sum())
    if perimeter == 0.0:
        raise ValueError("zero total perimeter")
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.arange(k) * (perimeter / k)
    edge = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, n - 1)
    denom = np.where(lengths[edge] > 0.0, lengths[edge], 1.0)
    u = (s - cum[edge]) / denom
    w = np.stack([1.0 - u, u, np.zeros(k), np.zeros(k)], axis=1)
    idx = np.stack([edge, (edge + 1) % n,
                    np.zeros(k, dtype=int), np.zeros(k, dtype=int)], axis=1)
    sampled = (1.0 - u)[:, None] * pts[edge] + u[:, None] * pts[(edge + 1) % n]
    return SampledContour(points=sampled, segment_index=edge, local_param=u,
                          kind=POLYGON, n_control=n, basis_idx=idx, basis_w=w)


def sample_curve(curve: ControlCurve, k: int) -> SampledContour:
    if curve.kind == SPLINE:
        return crs_sample(curve, k)
    return polygon_sample(curve, k)


def jitter_coincident(points: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Separate coincident consecutive points of a closed curve.

    Predicted curves can collapse neighbors onto each other (e.g. clamped
    into a corner), which the spline sampler rejects; callers break the tie
    with this tiny deterministic radial perturbation before sampling.  The
    shift is constant w.r.t. the points, so gradients pass through
    unchanged.  Returns the input unmodified when already separated.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    theta = 2.0 * np.pi * np.arange(n) / n
    offsets = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    out = pts
    scale = eps
    for _ in range(40):
        gaps = np.linalg.norm(np.roll(out, -1, axis=0) - out, axis=1)
        if np.all(gaps > 0.0):
            return out
        out = pts + scale * offsets
        scale *= 2.0
    raise ValueError("could not separate coincident control points")


def apply_sample_map(contour: SampledContour, points: np.ndarray) -> np.ndarray:
    """Re-apply a contour's frozen sampling map to (perturbed) control
    points.  This is the exact function the backward pass differentiates."""
    points = np.asarray(points, dtype=np.float64)
    if contour.kind == SPLINE:
        base = _extend_frozen(points, contour.closure_ratios)
    else:
        base = points
    return np.einsum("ks,ksd->kd", contour.basis_w, base[contour.basis_idx])


def _extend_frozen(points: np.ndarray, ratios) -> np.ndarray:
    rho_fwd, rho_bwd = ratios
    n = len(points)
    ext = np.empty((n + 3, 2), dtype=np.float64)
    ext[1:n + 1] = points
    ext[n + 1] = points[0]
    ext[n + 2] = points[0] + rho_fwd * (points[1] - points[0])
    ext[0] = points[0] + rho_bwd * (points[n - 1] - points[0])
    return ext


def contour_backward(contour: SampledContour, dpoints: np.ndarray) -> np.ndarray:
    """Route per-sample gradients (K,2) back to control points (N,2).

    Basis weights, knots and closure ratios are held constant; the closure
    points themselves chain back onto cp_0, cp_1 and cp_{N-1}.
    """
    n = contour.n_control
    if contour.kind == POLYGON:
        dcp = np.zeros((n, 2), dtype=np.float64)
        for slot in range(2):
            np.add.at(dcp, contour.basis_idx[:, slot],
                      contour.basis_w[:, slot, None] * dpoints)
        return dcp
    dext = np.zeros((n + 3, 2), dtype=np.float64)
    for slot in range(4):
        np.add.at(dext, contour.basis_idx[:, slot],
                  contour.basis_w[:, slot, None] * dpoints)
    rho_fwd, rho_bwd = contour.closure_ratios
    dcp = dext[1:n + 1].copy()
    dcp[0] += dext[n + 1]
    dcp[0] += (1.0 - rho_fwd) * dext[n + 2]
    dcp[1] += rho_fwd * dext[n + 2]
    dcp[0] += (1.0 - rho_bwd) * dext[0]
    dcp[n - 1] += rho_bwd * dext[0]
    return dcp
