"""Human-in-the-loop correction: a correction-conditioned offset predictor
with a local radius of influence, the simulated worst-point annotator, and
the chained training loop that backpropagates through successive
corrections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, losses, model as mdl, raster
from . import numerics as nm


@dataclass
class Correction:
    """One drag event: node index, old position, new position."""

    node: int
    old_pos: np.ndarray
    new_pos: np.ndarray

    def __post_init__(self):
        self.old_pos = np.asarray(self.old_pos, dtype=np.float64)
        self.new_pos = np.asarray(self.new_pos, dtype=np.float64)

    @property
    def shift(self) -> np.ndarray:
        return self.new_pos - self.old_pos


class InteractiveModel:
    """Single-pass predictor whose node inputs carry the annotator's shift
    in two extra feature slots; no iterative inference."""

    kind = "interactive"

    def __init__(self, config: mdl.ModelConfig, params: nm.ParamStore):
        self.config = config
        self.params = params
        self.topology = mdl.build_topology(config.n_points)

    @classmethod
    def build(cls, config: mdl.ModelConfig, seed: int = 0) -> "InteractiveModel":
        rng = np.random.default_rng(seed)
        store = nm.ParamStore()
        mdl._init_stack(store, "gcn", config.node_feat_dim + 2, config, rng)
        return cls(config, store)

    def save(self, path) -> None:
        mdl.save_checkpoint(path, {"kind": self.kind, "model": self.config.to_dict()},
                            self.params.values)

    @classmethod
    def load(cls, path) -> "InteractiveModel":
        config, tensors = mdl.load_checkpoint(path)
        if config.get("kind") != cls.kind:
            raise mdl.CheckpointError(f"checkpoint kind {config.get('kind')!r} "
                                      f"is not {cls.kind!r}")
        imodel = cls.build(mdl.ModelConfig.from_dict(config["model"]))
        mdl._assign_params(imodel.params, tensors)
        return imodel


def save_bundle(path, base: mdl.GcnModel, imodel: InteractiveModel | None) -> None:
    """Store the base predictor and (optionally) the interactive one in a
    single checkpoint container."""
    config = {"kind": "bundle", "model": base.config.to_dict(),
              "has_interactive": imodel is not None}
    tensors = {f"base/{k}": v for k, v in base.params.values.items()}
    if imodel is not None:
        tensors.update({f"interactive/{k}": v
                        for k, v in imodel.params.values.items()})
    mdl.save_checkpoint(path, config, tensors)


def load_bundle(path):
    """Load (base, interactive-or-None) from a bundle or a bare base
    checkpoint."""
    config, tensors = mdl.load_checkpoint(path)
    kind = config.get("kind")
    if kind == "base":
        base = mdl.GcnModel.build(mdl.ModelConfig.from_dict(config["model"]))
        mdl._assign_params(base.params, tensors)
        return base, None
    if kind != "bundle":
        raise mdl.CheckpointError(f"{path}: expected a base or bundle checkpoint, "
                                  f"got kind {kind!r}")
    cfg = mdl.ModelConfig.from_dict(config["model"])
    base = mdl.GcnModel.build(cfg)
    mdl._assign_params(base.params,
                       {k[len("base/"):]: v for k, v in tensors.items()
                        if k.startswith("base/")})
    imodel = None
    if config.get("has_interactive"):
        imodel = InteractiveModel.build(cfg)
        mdl._assign_params(imodel.params,
                           {k[len("interactive/"):]: v for k, v in tensors.items()
                            if k.startswith("interactive/")})
    return base, imodel


# ---------------------------------------------------------------------------
# correction-conditioned prediction
# ---------------------------------------------------------------------------

def neighborhood(n: int, node: int, k: int) -> np.ndarray:
    """Indices allowed to move: k neighbors on either side of the corrected
    node (the node itself excluded)."""
    if k <= 0:
        return np.empty(0, dtype=int)
    offsets = np.concatenate([np.arange(-k, 0), np.arange(1, k + 1)])
    return np.unique((node + offsets) % n)


def correction_features(fmap: np.ndarray, points: np.ndarray,
                        corr: Correction):
    """Node inputs for the interactive pass.

    The corrected node sits at its post-correction position and carries its
    shift in the two extra slots; every other node carries zeros.
    Returns (features, pinned_points).
    """
    n = len(points)
    if not 0 <= corr.node < n:
        raise IndexError(f"correction node {corr.node} out of range [0,{n})")
    pinned = points.copy()
    pinned[corr.node] = corr.new_pos
    extra = np.zeros((n, 2), dtype=np.float64)
    extra[corr.node] = corr.shift
    feats = mdl.node_input_features(fmap, pinned, extra)
    return feats, pinned


def masked_predict_forward(imodel: InteractiveModel, fmap: np.ndarray,
                           points: np.ndarray, corr: Correction):
    """Apply one correction: pin the corrected node, re-predict its k
    neighbors, leave everything else bitwise unchanged."""
    cfg = imodel.config
    feats, pinned = correction_features(fmap, points, corr)
    raw, stack_cache = mdl._stack_forward(imodel, "gcn", feats)
    t = np.tanh(raw)
    movable = neighborhood(cfg.n_points, corr.node, cfg.correction_radius)
    unclipped = pinned[movable] + cfg.offset_scale * t[movable]
    out = points.copy()
    out[corr.node] = corr.new_pos
    out[movable] = np.clip(unclipped, 0.0, 1.0)
    cache = {"points": points, "pinned": pinned, "t": t, "movable": movable,
             "unclipped": unclipped, "stack": stack_cache, "fmap": fmap,
             "corr": corr}
    return out, cache


def masked_predict_backward(imodel: InteractiveModel, cache: dict,
                            dout: np.ndarray, dfmap: np.ndarray | None = None):
    """Backward of masked_predict_forward onto the input curve.

    The annotator's new position and shift are constants; gradients reach
    the input through untouched nodes (identity), the movable nodes'
    residual path, and the feature-sampling coordinates of all non-pinned
    nodes.
    """
    cfg = imodel.config
    corr = cache["corr"]
    movable = cache["movable"]
    n = cfg.n_points

    dcurve = dout.copy()
    dcurve[corr.node] = 0.0
    gate = (cache["unclipped"] > 0.0) & (cache["unclipped"] < 1.0)
    dun = dout[movable] * gate
    dcurve[movable] = dun  # identity inside the clip, via pinned == input

    draw = np.zeros((n, 2), dtype=np.float64)
    draw[movable] = nm.tanh_backward(cache["t"][movable], dun * cfg.offset_scale)
    dfeats = mdl._stack_backward(imodel, "gcn", cache["stack"], draw)
    c = cfg.feature_channels
    dsampled = dfeats[:, :c]
    dcoords = dfeats[:, c:c + 2]
    pinned = cache["pinned"]
    dfm, dxs, dys = nm.sample_grid_backward(cache["fmap"], pinned[:, 0],
                                            pinned[:, 1], dsampled)
    if dfmap is not None:
        dfmap += dfm
    dpinned = dcoords + np.stack([dxs, dys], axis=1)
    dpinned[corr.node] = 0.0
    return dcurve + dpinned


def masked_predict(imodel: InteractiveModel, fmap: np.ndarray,
                   curve: geometry.ControlCurve,
                   corr: Correction) -> geometry.ControlCurve:
    out, _ = masked_predict_forward(imodel, fmap, curve.points, corr)
    return geometry.ControlCurve(out, curve.kind)


# ---------------------------------------------------------------------------
# simulated annotator
# ---------------------------------------------------------------------------

def simulate_worst_point(pred_points: np.ndarray,
                         gt_points: np.ndarray) -> Correction:
    """The annotator drags the worst control point onto its matched target.

    Both N-point sets are aligned by the cyclic matching minimum; the node
    with the largest L1 distance to its matched target is moved onto that
    target (ties break toward the lowest node index).
    """
    n = len(pred_points)
    if len(gt_points) != n:
        raise ValueError("prediction and target must have the same point count")
    pred_order = np.arange(n)
    if geometry.signed_area(pred_points) < 0:
        pred_order = np.concatenate([[0], np.arange(n - 1, 0, -1)])
    gt_order = np.arange(n)
    if geometry.signed_area(gt_points) < 0:
        gt_order = np.concatenate([[0], np.arange(n - 1, 0, -1)])
    p = pred_points[pred_order]
    g = gt_points[gt_order]
    res = losses.matching_loss(p, g)
    matched = np.roll(g, -res.offset, axis=0)
    dists = np.abs(p - matched).sum(axis=1)
    canon_idx = int(np.argmax(dists))  # argmax takes the first (lowest) index
    node = int(pred_order[canon_idx])
    return Correction(node=node, old_pos=pred_points[node].copy(),
                      new_pos=matched[canon_idx].copy())


# ---------------------------------------------------------------------------
# annotation protocol
# ---------------------------------------------------------------------------

@dataclass
class AnnotationTrace:
    curve: geometry.ControlCurve
    clicks: int
    ious: list          # ious[0] is the automatic result, ious[c] after click c
    reached: bool


def curve_mask(curve: geometry.ControlCurve, h: int, w: int, k: int) -> np.ndarray:
    """Rasterize a curve's induced boundary.  A polygon renders exactly as
    its vertex cycle; a spline is densely resampled first."""
    if curve.kind == geometry.POLYGON:
        return raster.render(curve.points * [w, h], h, w)
    pts = geometry.jitter_coincident(curve.points)
    contour = geometry.sample_curve(geometry.ControlCurve(pts, curve.kind), k)
    return raster.render(contour.points * [w, h], h, w)


def annotate_until(base: mdl.GcnModel, imodel: InteractiveModel | None,
                   image: np.ndarray, gt_polygon_px: np.ndarray,
                   gt_mask: np.ndarray, threshold: float,
                   max_clicks: int = 20, k_render: int = 256,
                   min_gain: float = 1e-4) -> AnnotationTrace:
    """Simulated annotation loop: correct the worst point until the mask
    agreement beats the threshold, improvement stalls for two consecutive
    clicks, or the click budget runs out.

    With imodel=None each click only pins the corrected node (the no-model
    baseline).  A click whose re-prediction would lower the IoU keeps the
    drag but drops the assistant's neighbor moves; if even the pin hurts,
    the curve reverts, so the recorded IoU trace is non-decreasing.
    """
    h, w = gt_mask.shape
    n = base.config.n_points
    gt_curve = geometry.ControlCurve(
        geometry.canonicalize_orientation(gt_polygon_px / [w, h]),
        geometry.POLYGON)
    gt_n = geometry.polygon_sample(gt_curve, n).points

    pred = mdl.iterative_inference(base, image)
    curve = pred.final
    fmap = pred.features.fmap
    iou_now = raster.iou(curve_mask(curve, h, w, k_render), gt_mask)
    trace = [iou_now]
    clicks = 0
    stall = 0
    while iou_now <= threshold and clicks < max_clicks:
        corr = simulate_worst_point(curve.points, gt_n)
        if np.all(corr.shift == 0.0):
            break
        candidates = []
        pin_only = curve.points.copy()
        pin_only[corr.node] = corr.new_pos
        candidates.append(geometry.ControlCurve(pin_only, curve.kind))
        if imodel is not None:
            candidates.append(masked_predict(imodel, fmap, curve, corr))
        best_curve, best_iou = curve, iou_now
        for cand in reversed(candidates):  # prefer the model's proposal
            cand_iou = raster.iou(curve_mask(cand, h, w, k_render), gt_mask)
            if cand_iou > best_iou:
                best_curve, best_iou = cand, cand_iou
        clicks += 1
        gain = best_iou - iou_now
        curve, iou_now = best_curve, best_iou
        trace.append(iou_now)
        stall = stall + 1 if gain <= min_gain else 0
        if stall >= 2:
            break
    return AnnotationTrace(curve=curve, clicks=clicks, ious=trace,
                           reached=iou_now > threshold)


# ---------------------------------------------------------------------------
# training (annotator in the loop)
# ---------------------------------------------------------------------------

def interactive_training_step(imodel: InteractiveModel, fmap: np.ndarray,
                              pred_points: np.ndarray, gt_n: np.ndarray,
                              gt_sampled: np.ndarray, rounds: int):
    """One sample's chained correction rounds.

    Each round the annotator corrects the worst point of the current curve
    and the model re-predicts the neighbors; the matching loss of every
    round's output is summed and backpropagated through the whole chain
    (no stopped gradients between rounds).  Gradients accumulate into the
    model's ParamStore; the total loss is returned.
    """
    cfg = imodel.config
    caches = []
    grads = []
    cur = pred_points
    total = 0.0
    for _ in range(rounds):
        corr = simulate_worst_point(cur, gt_n)
        cur, cache = masked_predict_forward(imodel, fmap, cur, corr)
        contour = geometry.sample_curve(
            geometry.ControlCurve(geometry.jitter_coincident(cur), cfg.curve_kind),
            len(gt_sampled))
        res = losses.matching_loss(contour.points, gt_sampled)
        total += res.loss
        caches.append(cache)
        grads.append(geometry.contour_backward(contour, res.point_grad))
    carried = np.zeros_like(pred_points)
    for cache, g in zip(reversed(caches), reversed(grads)):
        carried = masked_predict_backward(imodel, cache, g + carried)
    return total


def train_interactive(dataset, base: mdl.GcnModel, rounds: int = 3,
                      epochs: int = 5, lr: float = 1e-4, seed: int = 0,
                      k_samples: int | None = None,
                      log=None) -> InteractiveModel:
    """Fit an InteractiveModel against a frozen base predictor.

    `dataset` is a sequence of objects with image / gt_polygon / gt_mask
    fields (pixel-space polygons).  Per sample the base prediction and its
    cached features seed `rounds` simulated corrections.
    """
    cfg = base.config
    k = k_samples or cfg.k_samples
    imodel = InteractiveModel.build(cfg, seed=seed)
    if rounds <= 0 or epochs <= 0:
        return imodel
    rng = np.random.default_rng(seed)

    prepared = []
    for sample in dataset:
        h, w = sample.gt_mask.shape
        gt_norm = geometry.canonicalize_orientation(sample.gt_polygon / [w, h])
        gt_curve = geometry.ControlCurve(gt_norm, geometry.POLYGON)
        pred = mdl.iterative_inference(base, sample.image)
        prepared.append({
            "fmap": pred.features.fmap,
            "pred": pred.final.points,
            "gt_n": geometry.polygon_sample(gt_curve, cfg.n_points).points,
            "gt_k": geometry.polygon_sample(gt_curve, k).points,
        })

    for epoch in range(epochs):
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        for idx in order:
            item = prepared[idx]
            loss = interactive_training_step(imodel, item["fmap"], item["pred"],
                                             item["gt_n"], item["gt_k"], rounds)
            epoch_loss += loss
            nm.adam_step(imodel.params, lr)
        if log is not None:
            log(f"interactive epoch {epoch}: mean loss "
                f"{epoch_loss / max(1, len(prepared)):.4f}")
    return imodel
