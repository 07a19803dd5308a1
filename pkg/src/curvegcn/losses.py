"""Training losses over sampled contours: cyclic point matching and the
rendered-mask (pixel accuracy) loss.

Both losses hand back gradients on the K sample points; callers route them
to control points through the sampler's backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, raster


@dataclass
class MatchResult:
    loss: float
    offset: int
    point_grad: np.ndarray  # (K,2) gradient on the predicted samples


def _cyclic_costs(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """cost[j] ~= sum_i |pred_i - gt_{(j+i) % K}|_1 for every offset j.

    The K x K scan runs in float32 for speed; callers must re-rank
    near-minimal offsets in float64 before trusting an argmin.
    """
    k = len(pred)
    p = pred.astype(np.float32)
    g = gt.astype(np.float32)
    # c[i, m] = |pred_i - gt_m|_1, then sum the wrapped diagonals m = i + j
    c = (np.abs(p[:, None, 0] - g[None, :, 0])
         + np.abs(p[:, None, 1] - g[None, :, 1]))
    doubled = np.concatenate([c, c], axis=1)
    s0, s1 = doubled.strides
    # rows[i, j] = c[i, (i + j) % k]; rows are contiguous so the column
    # reduction below vectorizes
    rows = np.lib.stride_tricks.as_strided(
        doubled, shape=(k, k), strides=(s0 + s1, s1), writeable=False)
    return rows.sum(axis=0, dtype=np.float64)


def _exact_cost(p: np.ndarray, g: np.ndarray, j: int) -> float:
    return float(np.abs(p - np.roll(g, -j, axis=0)).sum(axis=1).sum())


def _best_offset(p: np.ndarray, g: np.ndarray) -> int:
    """Exact argmin offset (smallest j on ties): float32 scan narrows the
    field, float64 roll-sums decide among the near-minimal candidates."""
    costs = _cyclic_costs(p, g)
    tol = 1e-3 * max(1.0, float(costs.min()))
    candidates = np.nonzero(costs <= costs.min() + tol)[0]
    best_j = int(candidates[0])
    best = _exact_cost(p, g, best_j)
    for j in candidates[1:]:
        v = _exact_cost(p, g, int(j))
        if v < best:
            best, best_j = v, int(j)
    return best_j


def matching_loss(pred: geometry.SampledContour | np.ndarray,
                  gt: geometry.SampledContour | np.ndarray) -> MatchResult:
    """Minimum over cyclic offsets of the summed L1 point distances.

    Both point sequences are brought to counter-clockwise order before the
    scan (the returned gradient is mapped back to the caller's original
    ordering).  Offset ties break toward the smallest j, and the gradient
    is the L1 sign vector at the single winning alignment.
    """
    pred_pts = pred.points if hasattr(pred, "points") else np.asarray(pred, dtype=np.float64)
    gt_pts = gt.points if hasattr(gt, "points") else np.asarray(gt, dtype=np.float64)
    if len(pred_pts) != len(gt_pts):
        raise ValueError(f"K mismatch: {len(pred_pts)} vs {len(gt_pts)}")
    k = len(pred_pts)

    pred_order = np.arange(k)
    if k >= 3 and geometry.signed_area(pred_pts) < 0:
        pred_order = np.concatenate([[0], np.arange(k - 1, 0, -1)])
    gt_order = np.arange(k)
    if k >= 3 and geometry.signed_area(gt_pts) < 0:
        gt_order = np.concatenate([[0], np.arange(k - 1, 0, -1)])
    p = pred_pts[pred_order]
    g = gt_pts[gt_order]

    j = _best_offset(p, g)
    matched = np.roll(g, -j, axis=0)
    # final value recomputed in plain roll-and-sum order so it is bit-equal
    # to a direct evaluation of the formula at the winning offset
    loss = float(np.abs(p - matched).sum(axis=1).sum())
    sign = np.sign(p - matched)
    grad = np.zeros_like(pred_pts)
    grad[pred_order] = sign
    return MatchResult(loss=loss, offset=j, point_grad=grad)


def matching_loss_naive(pred, gt) -> float:
    """O(K^2) direct evaluation of the same cyclic minimum (test oracle):
    one explicit roll of the target per offset, no shared scan state."""
    pred_pts = pred.points if hasattr(pred, "points") else np.asarray(pred, dtype=np.float64)
    gt_pts = gt.points if hasattr(gt, "points") else np.asarray(gt, dtype=np.float64)
    if len(pred_pts) != len(gt_pts):
        raise ValueError(f"K mismatch: {len(pred_pts)} vs {len(gt_pts)}")
    k = len(pred_pts)
    pred_pts = pred_pts if k < 3 or geometry.signed_area(pred_pts) >= 0 else \
        np.concatenate([pred_pts[:1], pred_pts[:0:-1]])
    gt_pts = gt_pts if k < 3 or geometry.signed_area(gt_pts) >= 0 else \
        np.concatenate([gt_pts[:1], gt_pts[:0:-1]])
    best = None
    for j in range(k):
        total = np.abs(pred_pts - np.roll(gt_pts, -j, axis=0)).sum(axis=1).sum()
        if best is None or total < best:
            best = float(total)
    return best


def render_loss(contour: geometry.SampledContour, gt_mask: np.ndarray):
    """L1 between the rendered contour mask and the target mask.

    The contour is in normalized coordinates and is denormalized onto the
    target's pixel grid.  Returns (loss, point_grad) with the gradient in
    normalized units, obtained from the rasterizer's 1px Taylor backward
    with the L1 subgradient (0 where the masks agree).
    """
    h, w = gt_mask.shape
    pts_px = contour.points * [w, h]
    mask = raster.render(pts_px, h, w)
    loss = float(np.abs(mask - gt_mask).sum())
    grad_px = raster.render_backward(pts_px, np.sign(mask - gt_mask))
    grad = grad_px * [w, h]
    return loss, grad
