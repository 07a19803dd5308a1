"""Differentiable software rasterization of closed contours, plus mask
metrics.

Pixel rule (shared by the fan renderer and the scanline reference): the
center of pixel (row r, col c) is (c+0.5, r+0.5); a directed edge a->b
contributes +1 to the winding of a query point q if a.y <= q.y < b.y and q
lies strictly left of the edge (cross((b-a), (q-a)) > 0), and -1 under the
mirrored downward test.  A pixel is covered iff its accumulated winding is
nonzero.  The half-open vertical span plus the strict cross test breaks
every boundary tie deterministically, and because the fan's interior
diagonals appear twice in opposite directions their contributions cancel
exactly, so summing per-triangle windings reproduces whole-polygon winding
bit for bit.

The forward pass renders each fan triangle separately (orientation sign is
just the triangle's own winding) and the backward pass reuses those
per-triangle rasters: a 1-pixel shift difference approximates the mask
derivative, which is pushed to the three vertices with clamped barycentric
weights.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _edge_winding(ax, ay, bx, by, qx, qy):
    """Winding contribution of edge (a->b) at query grid qx (W,), qy (H,1)."""
    cross = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
    up = (ay <= qy) & (qy < by) & (cross > 0.0)
    down = (by <= qy) & (qy < ay) & (cross < 0.0)
    return up.astype(np.int32) - down.astype(np.int32)


def _triangle_winding(tri, x0, y0, width, height):
    """Winding image of one triangle over a pixel window.

    The window starts at pixel (row y0, col x0) and spans height x width
    pixels; coordinates may extend outside the canvas.
    """
    qx = x0 + np.arange(width) + 0.5
    qy = (y0 + np.arange(height) + 0.5)[:, None]
    acc = np.zeros((height, width), dtype=np.int32)
    for k in range(3):
        ax, ay = tri[k]
        bx, by = tri[(k + 1) % 3]
        acc += _edge_winding(ax, ay, bx, by, qx, qy)
    return acc


def _fan_triangles(points):
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise ValueError("need at least 3 contour points to render")
    return [(pts[0], pts[j], pts[j + 1], j) for j in range(1, len(pts) - 1)]


def render(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Rasterize a closed contour (K,2 pixel coords) into an (h,w) 0/1 mask.

    The contour is decomposed into the triangle fan rooted at the first
    point; per-pixel winding contributions are summed over triangles and
    the mask keeps the nonzero-winding interior.
    """
    acc = np.zeros((h, w), dtype=np.int32)
    for p0, pa, pb, _ in _fan_triangles(points):
        xs = (p0[0], pa[0], pb[0])
        ys = (p0[1], pa[1], pb[1])
        c0 = max(int(np.floor(min(xs) - 0.5)), 0)
        c1 = min(int(np.ceil(max(xs) - 0.5)), w - 1)
        r0 = max(int(np.floor(min(ys) - 0.5)), 0)
        r1 = min(int(np.ceil(max(ys) - 0.5)), h - 1)
        if c1 < c0 or r1 < r0:
            continue
        acc[r0:r1 + 1, c0:c1 + 1] += _triangle_winding(
            (p0, pa, pb), c0, r0, c1 - c0 + 1, r1 - r0 + 1)
    return (acc != 0).astype(np.float64)


def scanline_rasterize(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Reference nonzero-winding rasterizer: per-row accumulation of edge
    crossings over the whole polygon, no fan decomposition.  Uses the same
    pixel rule as render()."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise ValueError("need at least 3 contour points to render")
    a = pts
    b = np.roll(pts, -1, axis=0)
    mask = np.zeros((h, w), dtype=np.float64)
    qx = np.arange(w) + 0.5
    for r in range(h):
        qy = r + 0.5
        straddle = ((a[:, 1] <= qy) & (qy < b[:, 1])) | ((b[:, 1] <= qy) & (qy < a[:, 1]))
        idx = np.nonzero(straddle)[0]
        if idx.size == 0:
            continue
        winding = np.zeros(w, dtype=np.int32)
        for e in idx:
            winding += _edge_winding(a[e, 0], a[e, 1], b[e, 0], b[e, 1], qx, qy)
        mask[r] = winding != 0
    return mask


def render_backward(points: np.ndarray, dmask: np.ndarray) -> np.ndarray:
    """Distribute a per-pixel mask gradient onto the contour points.

    For each fan triangle the mask derivative along x/y is approximated by
    a 1-pixel shift of its own raster (neighbor differences, no re-render);
    each contributing pixel's value is weighted by dmask and split over the
    triangle's three vertices with its barycentric coordinates clamped to
    [0,1] and renormalized.  Returns a (K,2) gradient in pixel units.
    """
    pts = np.asarray(points, dtype=np.float64)
    h, w = dmask.shape
    grad = np.zeros_like(pts)
    for p0, pa, pb, j in _fan_triangles(pts):
        xs = (p0[0], pa[0], pb[0])
        ys = (p0[1], pa[1], pb[1])
        # window with a 2px apron so shift differences cover the 1px band
        c0 = int(np.floor(min(xs) - 0.5)) - 2
        c1 = int(np.ceil(max(xs) - 0.5)) + 2
        r0 = int(np.floor(min(ys) - 0.5)) - 2
        r1 = int(np.ceil(max(ys) - 0.5)) + 2
        tw = _triangle_winding((p0, pa, pb), c0, r0, c1 - c0 + 1, r1 - r0 + 1)
        # mask derivative for a 1px shift, averaged over the +1 and -1
        # directions so bands on both sides of each edge are visible
        dx = 0.5 * (tw[1:-1, :-2] - tw[1:-1, 2:])
        dy = 0.5 * (tw[:-2, 1:-1] - tw[2:, 1:-1])
        # upstream gradient over the inner window, zero outside the canvas
        ic0, ir0 = c0 + 1, r0 + 1
        ih, iw = dx.shape
        g = np.zeros((ih, iw), dtype=np.float64)
        rs0, cs0 = max(0, -ir0), max(0, -ic0)
        rs1 = min(ih, h - ir0)
        cs1 = min(iw, w - ic0)
        if rs1 > rs0 and cs1 > cs0:
            g[rs0:rs1, cs0:cs1] = dmask[ir0 + rs0:ir0 + rs1, ic0 + cs0:ic0 + cs1]
        cx = g * dx
        cy = g * dy
        rows, cols = np.nonzero(cx != 0.0)
        rows2, cols2 = np.nonzero(cy != 0.0)
        for (rr, cc, contrib, axis) in ((rows, cols, cx, 0), (rows2, cols2, cy, 1)):
            if rr.size == 0:
                continue
            px = ic0 + cc + 0.5
            py = ir0 + rr + 0.5
            wts = _barycentric(p0, pa, pb, px, py)
            vals = contrib[rr, cc]
            grad[0, axis] += float(wts[0] @ vals)
            grad[j, axis] += float(wts[1] @ vals)
            grad[j + 1, axis] += float(wts[2] @ vals)
    return grad


def _barycentric(p0, pa, pb, px, py):
    """Clamped, renormalized barycentric weights of pixels w.r.t. a
    triangle; degenerate triangles fall back to equal thirds."""
    denom = (pa[0] - p0[0]) * (pb[1] - p0[1]) - (pa[1] - p0[1]) * (pb[0] - p0[0])
    if denom == 0.0:
        third = np.full(px.shape, 1.0 / 3.0)
        return np.stack([third, third, third])
    w0 = ((pa[0] - px) * (pb[1] - py) - (pa[1] - py) * (pb[0] - px)) / denom
    w1 = ((pb[0] - px) * (p0[1] - py) - (pb[1] - py) * (p0[0] - px)) / denom
    w2 = ((p0[0] - px) * (pa[1] - py) - (p0[1] - py) * (pa[0] - px)) / denom
    wts = np.clip(np.stack([w0, w1, w2]), 0.0, 1.0)
    total = wts.sum(axis=0)
    fallback = total <= 0.0
    if np.any(fallback):
        wts[:, fallback] = 1.0 / 3.0
        total = wts.sum(axis=0)
    return wts / total


# ---------------------------------------------------------------------------
# mask metrics
# ---------------------------------------------------------------------------

def _check_binary_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    for m in (a, b):
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("masks must be binary (0/1)")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; defined as 1.0 when both masks are empty."""
    _check_binary_pair(a, b)
    inter = float(np.logical_and(a == 1, b == 1).sum())
    union = float(np.logical_or(a == 1, b == 1).sum())
    if union == 0.0:
        return 1.0
    return inter / union


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels 4-adjacent to background (outside the image counts as
    background)."""
    m = mask == 1
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def boundary_f(a: np.ndarray, b: np.ndarray, px_threshold: float) -> float:
    """Boundary F score with a pixel-distance slack.

    Precision is the fraction of a's boundary pixels within px_threshold
    (Euclidean, center to center) of b's boundary; recall is symmetric; F
    is their harmonic mean (0 when both vanish, 1 when both boundaries are
    empty).
    """
    _check_binary_pair(a, b)
    ba = mask_boundary(a)
    bb = mask_boundary(b)
    if not ba.any() and not bb.any():
        return 1.0
    if not ba.any() or not bb.any():
        return 0.0
    dist_to_b = ndimage.distance_transform_edt(~bb)
    dist_to_a = ndimage.distance_transform_edt(~ba)
    precision = float((dist_to_b[ba] <= px_threshold).mean())
    recall = float((dist_to_a[bb] <= px_threshold).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# debug serialization
# ---------------------------------------------------------------------------

def write_pgm(mask: np.ndarray, path) -> None:
    """Write a 0/1 mask as binary PGM (P5, maxval 255, 0/255 encoding)."""
    h, w = mask.shape
    data = (np.asarray(mask) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM written by write_pgm back into a 0/1 float mask."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        w, h = (int(v) for v in f.readline().split())
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return (data > maxval // 2).astype(np.float64)
