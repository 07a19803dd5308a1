"""The contour predictor: conv feature backbone, edge/vertex boundary
branches, graph-convolutional offset regression over the control-point
cycle, and iterative inference from a circle initialization.

Every forward stage returns a cache, and matching backward functions
accumulate parameter gradients into the model's ParamStore while routing
gradients back through node coordinates (both the additive offset path and
the bilinear feature-sampling path), so losses on later iterations reach
the weights of earlier ones.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import geometry
from . import numerics as nm


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_points: int = 40
    k_samples: int = 1280
    curve_kind: str = geometry.SPLINE
    iterations: int = 3
    crop_size: int = 112
    grid_size: int = 28
    backbone_channels: tuple = (8, 16, 32, 32)
    branch_channels: int = 4
    use_boundary_branches: bool = True
    gcn_hidden: int = 128
    gcn_blocks: int = 6
    offset_scale: float = 0.25
    correction_radius: int = 2

    def __post_init__(self):
        self.backbone_channels = tuple(self.backbone_channels)
        if self.k_samples < self.n_points:
            raise ValueError("k_samples must be at least n_points")
        if self.curve_kind not in geometry.CURVE_KINDS:
            raise ValueError(f"unknown curve kind {self.curve_kind!r}")

    @property
    def feature_channels(self) -> int:
        extra = 2 if self.use_boundary_branches else 0
        return self.backbone_channels[-1] + extra

    @property
    def node_feat_dim(self) -> int:
        return self.feature_channels + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_channels"] = list(self.backbone_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def build_topology(n: int) -> np.ndarray:
    """Neighbor table: node i is connected to (i+-1) mod N and (i+-2) mod N."""
    i = np.arange(n)
    nbr = np.stack([(i - 2) % n, (i - 1) % n, (i + 1) % n, (i + 2) % n], axis=1)
    return nbr


def _glorot(rng, shape, fan_in, fan_out, gain=1.0):
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


_BACKBONE_STRIDES = (2, 2, 1, 1)


def _init_backbone(store: nm.ParamStore, cfg: ModelConfig, rng) -> None:
    cin = 3
    for i, cout in enumerate(cfg.backbone_channels):
        store.add(f"backbone.conv{i}.w",
                  _glorot(rng, (cout, cin, 3, 3), cin * 9, cout * 9))
        store.add(f"backbone.conv{i}.b", np.zeros(cout))
        cin = cout
    if cfg.use_boundary_branches:
        g2 = cfg.grid_size * cfg.grid_size
        for name in ("edge", "vertex"):
            bc = cfg.branch_channels
            store.add(f"{name}.conv.w", _glorot(rng, (bc, cin, 3, 3), cin * 9, bc * 9))
            store.add(f"{name}.conv.b", np.zeros(bc))
            store.add(f"{name}.fc.w", _glorot(rng, (bc * g2, g2), bc * g2, g2))
            store.add(f"{name}.fc.b", np.zeros(g2))


_AGG_GAIN = 0.25      # neighbor features are correlated, so the 4-sum is
_RESIDUAL_GAIN = 0.5  # ~4x in amplitude; residual branches start damped


def _init_stack(store: nm.ParamStore, prefix: str, in_dim: int,
                cfg: ModelConfig, rng) -> None:
    h = cfg.gcn_hidden
    store.add(f"{prefix}.in.w0", _glorot(rng, (in_dim, h), in_dim, h))
    store.add(f"{prefix}.in.w1", _glorot(rng, (in_dim, h), in_dim, h, _AGG_GAIN))
    store.add(f"{prefix}.in.b", np.zeros(h))
    for j in range(cfg.gcn_blocks):
        for w, gain in (("w0", 1.0), ("w1", _AGG_GAIN),
                        ("wt0", _RESIDUAL_GAIN), ("wt1", _RESIDUAL_GAIN * _AGG_GAIN)):
            store.add(f"{prefix}.block{j}.{w}", _glorot(rng, (h, h), h, h, gain))
        store.add(f"{prefix}.block{j}.b0", np.zeros(h))
        store.add(f"{prefix}.block{j}.b1", np.zeros(h))
    store.add(f"{prefix}.out.w0", _glorot(rng, (h, h), h, h))
    store.add(f"{prefix}.out.w1", _glorot(rng, (h, h), h, h, _AGG_GAIN))
    store.add(f"{prefix}.out.b", np.zeros(h))
    store.add(f"{prefix}.head.w", _glorot(rng, (h, 2), h, 2))
    store.add(f"{prefix}.head.b", np.zeros(2))


class GcnModel:
    """Base predictor: one weight stack per inference iteration."""

    kind = "base"

    def __init__(self, config: ModelConfig, params: nm.ParamStore):
        self.config = config
        self.params = params
        self.topology = build_topology(config.n_points)

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "GcnModel":
        rng = np.random.default_rng(seed)
        store = nm.ParamStore()
        _init_backbone(store, config, rng)
        for m in range(config.iterations):
            _init_stack(store, f"iter{m}", config.node_feat_dim, config, rng)
        return cls(config, store)

    def init_curve(self) -> geometry.ControlCurve:
        return geometry.init_circle(self.config.n_points, self.config.crop_size,
                                    self.config.crop_size, self.config.curve_kind)

    def save(self, path) -> None:
        save_checkpoint(path, {"kind": self.kind, "model": self.config.to_dict()},
                        self.params.values)

    @classmethod
    def load(cls, path) -> "GcnModel":
        config, tensors = load_checkpoint(path)
        if config.get("kind") != cls.kind:
            raise CheckpointError(f"checkpoint kind {config.get('kind')!r} "
                                  f"is not {cls.kind!r}")
        model = cls.build(ModelConfig.from_dict(config["model"]))
        _assign_params(model.params, tensors)
        return model


def _assign_params(store: nm.ParamStore, tensors: dict) -> None:
    missing = set(store.values) - set(tensors)
    extra = set(tensors) - set(store.values)
    if missing or extra:
        raise CheckpointError(f"parameter names mismatch: missing={sorted(missing)[:4]} "
                              f"extra={sorted(extra)[:4]}")
    for name, value in tensors.items():
        if store.values[name].shape != value.shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        store.values[name][...] = value.astype(nm.default_dtype())


# ---------------------------------------------------------------------------
# backbone and branches
# ---------------------------------------------------------------------------

@dataclass
class FeatureResult:
    fmap: np.ndarray                  # (C+2, G, G) augmented feature map
    edge_grid: np.ndarray | None      # (G, G) sigmoid output
    vertex_grid: np.ndarray | None
    cache: dict | None = None


def extract_features(model: GcnModel, image: np.ndarray,
                     want_cache: bool = False) -> FeatureResult:
    """Run the conv backbone and boundary branches on a (3,S,S) crop.

    Returns the augmented feature map F: backbone output concatenated with
    the edge and vertex probability grids (when branches are enabled).
    """
    cfg = model.config
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a (3,H,W) crop, got {image.shape}")
    if image.shape[1] != cfg.crop_size or image.shape[2] != cfg.crop_size:
        raise ValueError(f"crop must be {cfg.crop_size}x{cfg.crop_size}")
    p = model.params
    x = image.astype(nm.default_dtype())
    convs = []
    for i, stride in enumerate(_BACKBONE_STRIDES):
        pre = nm.conv2d(x, p[f"backbone.conv{i}.w"], stride=stride, padding=1)
        pre = pre + p[f"backbone.conv{i}.b"][:, None, None]
        out = nm.relu(pre)
        convs.append((x, pre))
        x = out
    fc_map = x                                    # (C, G, G)

    cache = {"convs": convs, "fc_map": fc_map} if want_cache else None
    if not cfg.use_boundary_branches:
        return FeatureResult(fmap=fc_map, edge_grid=None, vertex_grid=None,
                             cache=cache)

    grids = {}
    for name in ("edge", "vertex"):
        cpre = nm.conv2d(fc_map, p[f"{name}.conv.w"], stride=1, padding=1)
        cpre = cpre + p[f"{name}.conv.b"][:, None, None]
        cact = nm.relu(cpre)
        flat = cact.reshape(1, -1)
        logits = nm.linear(flat, p[f"{name}.fc.w"], p[f"{name}.fc.b"])
        grid = nm.sigmoid(logits).reshape(cfg.grid_size, cfg.grid_size)
        grids[name] = grid
        if want_cache:
            cache[name] = {"cpre": cpre, "cact": cact, "flat": flat, "grid": grid}
    fmap = np.concatenate([fc_map, grids["edge"][None], grids["vertex"][None]], axis=0)
    return FeatureResult(fmap=fmap, edge_grid=grids["edge"],
                         vertex_grid=grids["vertex"], cache=cache)


def backbone_backward(model: GcnModel, feat: FeatureResult, dfmap: np.ndarray,
                      dedge: np.ndarray | None = None,
                      dvertex: np.ndarray | None = None) -> None:
    """Accumulate parameter gradients for the backbone and branches.

    dfmap is the gradient on the augmented map; dedge/dvertex are extra
    gradients applied directly to the branch probability grids (from their
    supervision terms).
    """
    cfg = model.config
    p = model.params
    cache = feat.cache
    if cache is None:
        raise ValueError("extract_features must be called with want_cache=True")
    cbb = cfg.backbone_channels[-1]
    if cfg.use_boundary_branches:
        dfc_map = dfmap[:cbb].copy()
        dgrids = {"edge": dfmap[cbb].copy(), "vertex": dfmap[cbb + 1].copy()}
        if dedge is not None:
            dgrids["edge"] += dedge
        if dvertex is not None:
            dgrids["vertex"] += dvertex
        for name in ("edge", "vertex"):
            bc = cache[name]
            dgrid = dgrids[name].reshape(1, -1)
            dlogits = nm.sigmoid_backward(bc["grid"].reshape(1, -1), dgrid)
            dflat, dw, db = nm.linear_backward(bc["flat"], p[f"{name}.fc.w"], dlogits)
            p.accumulate(f"{name}.fc.w", dw)
            p.accumulate(f"{name}.fc.b", db)
            dcact = dflat.reshape(bc["cact"].shape)
            dcpre = nm.relu_backward(bc["cpre"], dcact)
            p.accumulate(f"{name}.conv.b", dcpre.sum(axis=(1, 2)))
            dfc, dk = nm.conv2d_backward(cache["fc_map"], p[f"{name}.conv.w"],
                                         dcpre, stride=1, padding=1)
            p.accumulate(f"{name}.conv.w", dk)
            dfc_map += dfc
    else:
        dfc_map = dfmap.copy()

    dout = dfc_map
    for i in reversed(range(len(cfg.backbone_channels))):
        x, pre = cache["convs"][i]
        dpre = nm.relu_backward(pre, dout)
        p.accumulate(f"backbone.conv{i}.b", dpre.sum(axis=(1, 2)))
        dx, dk = nm.conv2d_backward(x, p[f"backbone.conv{i}.w"], dpre,
                                    stride=_BACKBONE_STRIDES[i], padding=1)
        p.accumulate(f"backbone.conv{i}.w", dk)
        dout = dx


# ---------------------------------------------------------------------------
# graph convolution stack
# ---------------------------------------------------------------------------

def _agg(f: np.ndarray, nbr: np.ndarray) -> np.ndarray:
    return f[nbr].sum(axis=1)


def graph_resnet_layer(f: np.ndarray, weights: dict, nbr: np.ndarray) -> np.ndarray:
    """One residual propagation step:

        r  = relu(w0 f_i + sum_neighbors w1 f_j + b0)
        r' = wt0 r_i + sum_neighbors wt1 r_j + b1
        out = relu(r' + f)
    """
    a = f @ weights["w0"] + _agg(f, nbr) @ weights["w1"] + weights["b0"]
    r = nm.relu(a)
    c = r @ weights["wt0"] + _agg(r, nbr) @ weights["wt1"] + weights["b1"]
    return nm.relu(c + f)


def _stack_forward(model: GcnModel, prefix: str, feats: np.ndarray):
    p = model.params
    nbr = model.topology
    cache = {"feats": feats}
    pre_in = (feats @ p[f"{prefix}.in.w0"] + _agg(feats, nbr) @ p[f"{prefix}.in.w1"]
              + p[f"{prefix}.in.b"])
    f = nm.relu(pre_in)
    cache["pre_in"] = pre_in
    blocks = []
    for j in range(model.config.gcn_blocks):
        w = {k: p[f"{prefix}.block{j}.{k}"] for k in ("w0", "w1", "b0", "wt0", "wt1", "b1")}
        a = f @ w["w0"] + _agg(f, nbr) @ w["w1"] + w["b0"]
        r = nm.relu(a)
        c = r @ w["wt0"] + _agg(r, nbr) @ w["wt1"] + w["b1"]
        out = nm.relu(c + f)
        blocks.append({"f": f, "a": a, "r": r, "c": c})
        f = out
    cache["blocks"] = blocks
    pre_out = (f @ p[f"{prefix}.out.w0"] + _agg(f, nbr) @ p[f"{prefix}.out.w1"]
               + p[f"{prefix}.out.b"])
    h = nm.relu(pre_out)
    cache["f_last"] = f
    cache["pre_out"] = pre_out
    cache["h"] = h
    raw = nm.linear(h, p[f"{prefix}.head.w"], p[f"{prefix}.head.b"])
    return raw, cache


def _plain_layer_backward(p, prefix, feats, pre, dpost, nbr):
    """Backward through out = relu(f w0 + agg(f) w1 + b) given dpost."""
    dpre = nm.relu_backward(pre, dpost)
    dw0 = feats.T @ dpre
    dw1 = _agg(feats, nbr).T @ dpre
    db = dpre.sum(axis=0)
    p.accumulate(f"{prefix}.w0", dw0)
    p.accumulate(f"{prefix}.w1", dw1)
    p.accumulate(f"{prefix}.b", db)
    w0 = p[f"{prefix}.w0"]
    w1 = p[f"{prefix}.w1"]
    return dpre @ w0.T + _agg(dpre @ w1.T, nbr)


def _stack_backward(model: GcnModel, prefix: str, cache: dict,
                    draw: np.ndarray) -> np.ndarray:
    p = model.params
    nbr = model.topology
    dh, dwh, dbh = nm.linear_backward(cache["h"], p[f"{prefix}.head.w"], draw)
    p.accumulate(f"{prefix}.head.w", dwh)
    p.accumulate(f"{prefix}.head.b", dbh)
    df = _plain_layer_backward(p, f"{prefix}.out", cache["f_last"],
                               cache["pre_out"], dh, nbr)
    for j in reversed(range(model.config.gcn_blocks)):
        b = cache["blocks"][j]
        w = {k: p[f"{prefix}.block{j}.{k}"] for k in ("w0", "w1", "wt0", "wt1")}
        dsum = nm.relu_backward(b["c"] + b["f"], df)
        dc = dsum
        df_res = dsum
        p.accumulate(f"{prefix}.block{j}.wt0", b["r"].T @ dc)
        p.accumulate(f"{prefix}.block{j}.wt1", _agg(b["r"], nbr).T @ dc)
        p.accumulate(f"{prefix}.block{j}.b1", dc.sum(axis=0))
        dr = dc @ w["wt0"].T + _agg(dc @ w["wt1"].T, nbr)
        da = nm.relu_backward(b["a"], dr)
        p.accumulate(f"{prefix}.block{j}.w0", b["f"].T @ da)
        p.accumulate(f"{prefix}.block{j}.w1", _agg(b["f"], nbr).T @ da)
        p.accumulate(f"{prefix}.block{j}.b0", da.sum(axis=0))
        df = da @ w["w0"].T + _agg(da @ w["w1"].T, nbr) + df_res
    return _plain_layer_backward(p, f"{prefix}.in", cache["feats"],
                                 cache["pre_in"], df, nbr)


# ---------------------------------------------------------------------------
# node features and the offset step
# ---------------------------------------------------------------------------

def node_input_features(fmap: np.ndarray, points: np.ndarray,
                        extra: np.ndarray | None = None) -> np.ndarray:
    """Per node: bilinear sample of F at (x,y) concatenated with the raw
    coordinates (and optional extra slots)."""
    sampled = nm.sample_grid(fmap, points[:, 0], points[:, 1])
    parts = [sampled, points]
    if extra is not None:
        parts.append(extra)
    return np.concatenate(parts, axis=1)


def predict_step_forward(model: GcnModel, prefix: str, fmap: np.ndarray,
                         points: np.ndarray, extra: np.ndarray | None = None):
    """One offset prediction: new = clip(points + scale*tanh(gcn(feats)))."""
    feats = node_input_features(fmap, points, extra)
    raw, stack_cache = _stack_forward(model, prefix, feats)
    t = np.tanh(raw)
    unclipped = points + model.config.offset_scale * t
    new_pts = np.clip(unclipped, 0.0, 1.0)
    cache = {"points": points, "extra": extra, "t": t,
             "unclipped": unclipped, "stack": stack_cache, "fmap": fmap}
    return new_pts, cache


def predict_step_backward(model: GcnModel, prefix: str, cache: dict,
                          dnew: np.ndarray, dfmap: np.ndarray | None):
    """Backward of predict_step_forward.

    Returns the gradient on the input points; accumulates stack gradients
    and, when dfmap is given, the scattered feature-map gradient.
    """
    cfg = model.config
    gate = (cache["unclipped"] > 0.0) & (cache["unclipped"] < 1.0)
    dun = dnew * gate
    draw = nm.tanh_backward(cache["t"], dun * cfg.offset_scale)
    dfeats = _stack_backward(model, prefix, cache["stack"], draw)
    c = cfg.feature_channels
    dsampled = dfeats[:, :c]
    dcoords = dfeats[:, c:c + 2]
    pts = cache["points"]
    dfm, dxs, dys = nm.sample_grid_backward(cache["fmap"], pts[:, 0], pts[:, 1],
                                            dsampled)
    if dfmap is not None:
        dfmap += dfm
    dpts = dun + dcoords + np.stack([dxs, dys], axis=1)
    dextra = dfeats[:, c + 2:] if cache["extra"] is not None else None
    return dpts, dextra


@dataclass
class CurvePrediction:
    """Init curve plus one refined curve per iteration, with the feature
    map kept for later local corrections."""

    curves: list
    features: FeatureResult

    @property
    def final(self) -> geometry.ControlCurve:
        return self.curves[-1]


def iterative_inference(model: GcnModel, image: np.ndarray,
                        iterations: int | None = None) -> CurvePrediction:
    """Predict a contour by moving the circle initialization `iterations`
    times (each iteration has its own weights; features are extracted once
    and re-sampled at the new node locations)."""
    cfg = model.config
    iters = cfg.iterations if iterations is None else iterations
    if iters > cfg.iterations:
        raise ValueError(f"model has weights for {cfg.iterations} iterations")
    feat = extract_features(model, image)
    curve = model.init_curve()
    curves = [curve]
    pts = curve.points
    for m in range(iters):
        pts, _ = predict_step_forward(model, f"iter{m}", feat.fmap, pts)
        nm.assert_finite(pts, f"iteration {m} control points")
        curves.append(geometry.ControlCurve(pts, cfg.curve_kind))
    return CurvePrediction(curves=curves, features=feat)


def forward_with_tape(model: GcnModel, image: np.ndarray):
    """Training forward pass: like iterative_inference but keeps caches."""
    cfg = model.config
    feat = extract_features(model, image, want_cache=True)
    pts = model.init_curve().points
    curves = [pts]
    step_caches = []
    for m in range(cfg.iterations):
        pts, cache = predict_step_forward(model, f"iter{m}", feat.fmap, pts)
        nm.assert_finite(pts, f"iteration {m} control points")
        curves.append(pts)
        step_caches.append(cache)
    return {"feat": feat, "curves": curves, "steps": step_caches}


def backward_through_tape(model: GcnModel, tape: dict, dcurves: list,
                          dedge: np.ndarray | None = None,
                          dvertex: np.ndarray | None = None) -> None:
    """Accumulate gradients for per-iteration curve losses.

    dcurves[m] is the loss gradient on the output of iteration m (None for
    unsupervised iterations).  Gradients chain through earlier iterations
    via both the additive offsets and the feature re-sampling coordinates.
    """
    cfg = model.config
    feat = tape["feat"]
    dfmap = np.zeros_like(feat.fmap)
    carried = np.zeros_like(tape["curves"][0])
    for m in reversed(range(cfg.iterations)):
        g = carried.copy()
        if dcurves[m] is not None:
            g += dcurves[m]
        carried, _ = predict_step_backward(model, f"iter{m}", tape["steps"][m],
                                           g, dfmap)
    backbone_backward(model, feat, dfmap, dedge, dvertex)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CGCN"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """Versioned binary container: magic, version, JSON config block, named
    float32 little-endian tensors, trailing CRC32."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<I", len(tensors))
    for name, value in tensors.items():
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        arr = np.ascontiguousarray(value, dtype="<f4")
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_checkpoint(path):
    """Read a container written by save_checkpoint; rejects bad magic,
    version, truncation, or CRC mismatch."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch")
    off = 4
    version = struct.unpack_from("<I", blob, off)[0]
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cfg_len = struct.unpack_from("<I", blob, off)[0]
    off += 4
    config = json.loads(blob[off:off + cfg_len].decode("utf-8"))
    off += cfg_len
    n_tensors = struct.unpack_from("<I", blob, off)[0]
    off += 4
    tensors = {}
    for _ in range(n_tensors):
        name_len = struct.unpack_from("<H", blob, off)[0]
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        ndim = struct.unpack_from("<B", blob, off)[0]
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        tensors[name] = arr.astype(np.float64)
    return config, tensors
