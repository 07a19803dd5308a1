"""Two-phase training schedule, evaluation harness, and checkpointing.

Phase one fits the predictor with the cyclic point-matching loss on every
inference iteration plus the edge/vertex BCE terms; phase two fine-tunes
with the rendered-mask loss on the final iteration.  Both phases keep the
checkpoint that scored the best validation IoU.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import data, geometry, interactive, losses, raster
from . import model as mdl
from . import numerics as nm


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_points: int = 40
    k_samples: int = 1280
    curve_kind: str = geometry.SPLINE
    iterations: int = 3
    lr: float = 3e-5
    lr_decay: float = 0.1
    lr_decay_every: int = 7
    batch_size: int = 8
    epochs: int = 30
    bce_weight: float = 1.0
    seed: int = 0
    crop_size: int = 112
    grid_size: int = 28
    use_boundary_branches: bool = True
    k_render: int = 256
    early_stop_patience: int = 5
    interactive_rounds: int = 3
    interactive_epochs: int = 5
    interactive_lr: float = 1e-4

    def __post_init__(self):
        if min(self.n_points, self.k_samples, self.iterations, self.batch_size,
               self.crop_size, self.grid_size) <= 0:
            raise ValueError("config values must be positive")
        if self.k_samples < self.n_points:
            raise ValueError("k_samples must be at least n_points")

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(
            n_points=self.n_points, k_samples=self.k_samples,
            curve_kind=self.curve_kind, iterations=self.iterations,
            crop_size=self.crop_size, grid_size=self.grid_size,
            use_boundary_branches=self.use_boundary_branches)

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


# ---------------------------------------------------------------------------
# sample preparation
# ---------------------------------------------------------------------------

def _edge_vertex_targets(gt_polygon_norm: np.ndarray, grid_size: int):
    """28x28-style supervision grids: cells crossed by the boundary and
    cells holding polygon vertices, both dilated by one cell."""
    curve = geometry.ControlCurve(gt_polygon_norm, geometry.POLYGON)
    dense = geometry.polygon_sample(curve, max(2048, 4 * len(gt_polygon_norm))).points
    edge = np.zeros((grid_size, grid_size))
    cells = np.clip((dense * grid_size).astype(int), 0, grid_size - 1)
    edge[cells[:, 1], cells[:, 0]] = 1.0
    vertex = np.zeros((grid_size, grid_size))
    vcells = np.clip((gt_polygon_norm * grid_size).astype(int), 0, grid_size - 1)
    vertex[vcells[:, 1], vcells[:, 0]] = 1.0
    dilate = np.ones((3, 3), dtype=bool)
    edge = ndimage.binary_dilation(edge, structure=dilate).astype(float)
    vertex = ndimage.binary_dilation(vertex, structure=dilate).astype(float)
    return edge, vertex


def prepare_samples(manifest: data.DatasetManifest, config: TrainConfig,
                    want_targets: bool = True) -> list:
    """Load, resize, and precompute per-sample training targets."""
    prepared = []
    for i in range(len(manifest)):
        sample = data.load_sample(manifest, i)
        crop = data.resize_bilinear(sample.image, config.crop_size, config.crop_size)
        gt_norm = sample.gt_polygon / [sample.width, sample.height]
        item = {"id": sample.id, "crop": crop, "gt_mask": sample.gt_mask,
                "gt_polygon_px": sample.gt_polygon, "gt_norm": gt_norm,
                "sample": sample}
        if want_targets:
            gt_curve = geometry.ControlCurve(gt_norm, geometry.POLYGON)
            item["gt_k"] = geometry.polygon_sample(gt_curve, config.k_samples).points
            if config.use_boundary_branches:
                item["edge_t"], item["vertex_t"] = _edge_vertex_targets(
                    gt_norm, config.grid_size)
        prepared.append(item)
    return prepared


def _validation_iou(model: mdl.GcnModel, prepared: list, k_render: int) -> float:
    scores = []
    for item in prepared:
        pred = mdl.iterative_inference(model, item["crop"])
        h, w = item["gt_mask"].shape
        mask = interactive.curve_mask(pred.final, h, w, k_render)
        scores.append(raster.iou(mask, item["gt_mask"]))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# training phases
# ---------------------------------------------------------------------------

def _sample_gradients_matching(model, item, config):
    """Forward + backward for one sample under the matching objective.

    The matching loss supervises every iteration's output curve with equal
    weight; edge/vertex BCE terms supervise the branch grids.
    """
    tape = mdl.forward_with_tape(model, item["crop"])
    cfg = model.config
    dcurves = []
    total = 0.0
    for m in range(cfg.iterations):
        pts = geometry.jitter_coincident(tape["curves"][m + 1])
        contour = geometry.sample_curve(geometry.ControlCurve(pts, cfg.curve_kind),
                                        cfg.k_samples)
        res = losses.matching_loss(contour.points, item["gt_k"])
        total += res.loss
        dcurves.append(geometry.contour_backward(contour, res.point_grad))
    dedge = dvertex = None
    if config.use_boundary_branches:
        feat = tape["feat"]
        total += config.bce_weight * nm.bce(feat.edge_grid, item["edge_t"])
        total += config.bce_weight * nm.bce(feat.vertex_grid, item["vertex_t"])
        dedge = config.bce_weight * nm.bce_backward(feat.edge_grid, item["edge_t"])
        dvertex = config.bce_weight * nm.bce_backward(feat.vertex_grid, item["vertex_t"])
    mdl.backward_through_tape(model, tape, dcurves, dedge, dvertex)
    return total


def _sample_gradients_render(model, item, config):
    """Fine-tuning objective: rendered-mask L1 on the final curve (branch
    BCE kept)."""
    tape = mdl.forward_with_tape(model, item["crop"])
    cfg = model.config
    pts = geometry.jitter_coincident(tape["curves"][-1])
    contour = geometry.sample_curve(geometry.ControlCurve(pts, cfg.curve_kind),
                                    config.k_render)
    loss, point_grad = losses.render_loss(contour, item["gt_mask"])
    dcurves = [None] * (cfg.iterations - 1)
    dcurves.append(geometry.contour_backward(contour, point_grad))
    total = loss
    dedge = dvertex = None
    if config.use_boundary_branches:
        feat = tape["feat"]
        total += config.bce_weight * nm.bce(feat.edge_grid, item["edge_t"])
        total += config.bce_weight * nm.bce(feat.vertex_grid, item["vertex_t"])
        dedge = config.bce_weight * nm.bce_backward(feat.edge_grid, item["edge_t"])
        dvertex = config.bce_weight * nm.bce_backward(feat.vertex_grid, item["vertex_t"])
    mdl.backward_through_tape(model, tape, dcurves, dedge, dvertex)
    return total


def _run_phase(model, config, train_items, val_items, objective, epochs,
               out_path, log, include_initial=False):
    rng = np.random.default_rng(config.seed)
    best_iou = -1.0
    best_state = None
    if include_initial:
        best_iou = _validation_iou(model, val_items, config.k_render)
        best_state = {k: v.copy() for k, v in model.params.values.items()}
        if log:
            log(f"initial val IoU {best_iou:.4f}")
    since_best = 0
    for epoch in range(epochs):
        lr = nm.decayed_lr(config.lr, epoch, config.lr_decay, config.lr_decay_every)
        order = rng.permutation(len(train_items))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            for idx in batch:
                loss = objective(model, train_items[idx], config)
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, sample "
                        f"{train_items[idx]['id']}: {loss}")
                epoch_loss += loss
            model.params.scale_grads(1.0 / len(batch))
            nm.adam_step(model.params, lr)
        val_iou = _validation_iou(model, val_items, config.k_render)
        if log:
            log(f"epoch {epoch}: lr {lr:.2e} mean loss "
                f"{epoch_loss / len(train_items):.4f} val IoU {val_iou:.4f}")
        if val_iou > best_iou:
            best_iou = val_iou
            best_state = {k: v.copy() for k, v in model.params.values.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                if log:
                    log(f"early stop at epoch {epoch} (best val IoU {best_iou:.4f})")
                break
    if best_state is not None:
        for k, v in best_state.items():
            model.params.values[k][...] = v
    model.save(out_path)
    return Path(out_path)


def train_matching_phase(config: TrainConfig, train_manifest, val_manifest,
                         out_path, log=None) -> Path:
    """Phase one: fit from scratch with the matching loss; saves the
    best-by-validation-IoU checkpoint to out_path."""
    train_items = prepare_samples(train_manifest, config)
    if not train_items:
        raise TrainingError("empty training set")
    val_items = prepare_samples(val_manifest, config, want_targets=False)
    model = mdl.GcnModel.build(config.model_config(), seed=config.seed)
    return _run_phase(model, config, train_items, val_items,
                      _sample_gradients_matching, config.epochs, out_path, log)


def finetune_diffacc_phase(config: TrainConfig, train_manifest, val_manifest,
                           checkpoint_in, out_path, epochs: int | None = None,
                           log=None) -> Path:
    """Phase two: continue from a matching-phase checkpoint with the
    rendered-mask loss.  Zero epochs passes the checkpoint through
    unchanged; otherwise the starting weights compete for best-by-val."""
    epochs = config.epochs if epochs is None else epochs
    if epochs == 0:
        if Path(checkpoint_in) != Path(out_path):
            shutil.copyfile(checkpoint_in, out_path)
        return Path(out_path)
    train_items = prepare_samples(train_manifest, config)
    val_items = prepare_samples(val_manifest, config, want_targets=False)
    model = mdl.GcnModel.load(checkpoint_in)
    return _run_phase(model, config, train_items, val_items,
                      _sample_gradients_render, epochs, out_path, log,
                      include_initial=True)


def train_interactive_phase(config: TrainConfig, train_manifest, base_checkpoint,
                            out_path, log=None) -> Path:
    """Fit the InteractiveGCN against the frozen base model and bundle both
    into one checkpoint."""
    base = mdl.GcnModel.load(base_checkpoint)
    samples = data.load_all(train_manifest)
    imodel = interactive.train_interactive(
        samples_for_interactive(samples, config), base,
        rounds=config.interactive_rounds, epochs=config.interactive_epochs,
        lr=config.interactive_lr, seed=config.seed, log=log)
    interactive.save_bundle(out_path, base, imodel)
    return Path(out_path)


def samples_for_interactive(samples, config: TrainConfig):
    """Interactive training consumes resized crops like the base trainer."""
    out = []
    for s in samples:
        crop = data.resize_bilinear(s.image, config.crop_size, config.crop_size)
        out.append(data.Sample(id=s.id, image=crop, gt_polygon=s.gt_polygon,
                               gt_mask=s.gt_mask, height=s.height, width=s.width))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    mean_iou: float
    f_1px: float
    f_2px: float
    per_sample: list
    interactive: dict | None = None

    def to_json(self) -> str:
        payload = {"mean_iou": self.mean_iou, "f_1px": self.f_1px,
                   "f_2px": self.f_2px, "per_sample": self.per_sample}
        if self.interactive is not None:
            payload["interactive"] = self.interactive
        return json.dumps(payload, indent=2, sort_keys=True)

    def summary_text(self) -> str:
        lines = ["metric      value",
                 f"mean IoU    {self.mean_iou:.4f}",
                 f"F @ 1px     {self.f_1px:.4f}",
                 f"F @ 2px     {self.f_2px:.4f}"]
        if self.interactive is not None:
            for t, stats in sorted(self.interactive.items()):
                lines.append(f"T={t}  mean clicks {stats['mean_clicks']:.2f}"
                             f"  final IoU {stats['mean_final_iou']:.4f}")
        return "\n".join(lines)


def _predict_fn_from_checkpoint(checkpoint_path):
    base, imodel = interactive.load_bundle(checkpoint_path)
    return base, imodel


def evaluate(checkpoint_path, manifest, mode: str = "automatic",
             thresholds=None, max_clicks: int = 20, config: TrainConfig | None = None,
             with_baseline: bool = False, log=None) -> EvalReport:
    """Score a checkpoint on a dataset split.

    Automatic mode reports mean IoU and boundary F at 1 and 2 px.
    Interactive mode additionally sweeps the IoU thresholds and reports
    mean clicks plus the mean IoU after each click budget; the no-model
    baseline (worst point pinned, neighbors untouched) is included when
    requested.
    """
    if mode not in ("automatic", "interactive"):
        raise ValueError(f"unknown eval mode {mode!r}")
    if mode == "interactive" and not thresholds:
        raise ValueError("interactive mode needs at least one threshold")
    config = config or TrainConfig()
    base, imodel = _predict_fn_from_checkpoint(checkpoint_path)
    items = prepare_samples(manifest, config, want_targets=False)

    per_sample = []
    for item in items:
        pred = mdl.iterative_inference(base, item["crop"])
        h, w = item["gt_mask"].shape
        mask = interactive.curve_mask(pred.final, h, w, config.k_render)
        per_sample.append({
            "id": item["id"],
            "iou": raster.iou(mask, item["gt_mask"]),
            "f_1px": raster.boundary_f(mask, item["gt_mask"], 1),
            "f_2px": raster.boundary_f(mask, item["gt_mask"], 2),
        })
    report = EvalReport(
        mean_iou=float(np.mean([r["iou"] for r in per_sample])),
        f_1px=float(np.mean([r["f_1px"] for r in per_sample])),
        f_2px=float(np.mean([r["f_2px"] for r in per_sample])),
        per_sample=per_sample)

    if mode == "interactive":
        if imodel is None:
            raise ValueError("checkpoint has no interactive model")
        stats = {}
        for t in thresholds:
            runs = [interactive.annotate_until(
                        base, imodel, item["crop"], item["gt_polygon_px"],
                        item["gt_mask"], threshold=t, max_clicks=max_clicks,
                        k_render=config.k_render)
                    for item in items]
            entry = {
                "mean_clicks": _mean_clicks(runs, max_clicks),
                "mean_final_iou": float(np.mean([r.ious[-1] for r in runs])),
                "iou_per_click": _iou_per_click(runs, max_clicks),
            }
            if with_baseline:
                base_runs = [interactive.annotate_until(
                                 base, None, item["crop"], item["gt_polygon_px"],
                                 item["gt_mask"], threshold=t,
                                 max_clicks=max_clicks,
                                 k_render=config.k_render)
                             for item in items]
                entry["baseline_mean_clicks"] = _mean_clicks(base_runs, max_clicks)
                entry["baseline_mean_final_iou"] = float(
                    np.mean([r.ious[-1] for r in base_runs]))
            stats[str(t)] = entry
        report.interactive = stats
    return report


def _mean_clicks(runs, max_clicks):
    """Mean clicks to reach the threshold; unfinished traces count the full
    budget."""
    counts = [r.clicks if r.reached else max_clicks for r in runs]
    return float(np.mean(counts))


def _iou_per_click(runs, max_clicks):
    """Mean IoU after each click budget, traces padded with their final
    value."""
    out = []
    for c in range(max_clicks + 1):
        vals = [r.ious[min(c, len(r.ious) - 1)] for r in runs]
        out.append(float(np.mean(vals)))
    return out
