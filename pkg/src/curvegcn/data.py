"""Synthetic shape dataset: smooth random blobs on textured backgrounds,
a JSON annotation/manifest format, and deterministic loading.

Annotation schema (one object per file):
    {"id": str, "vertices": [[x_px, y_px], ...], "height": int, "width": int}

Ground-truth masks are never stored; they are rasterized from the polygon
at load time with the scanline reference rasterizer so they always agree
with the renderer's pixel rule.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry, raster
from . import numerics as nm


class DataError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    image: np.ndarray      # (3, H, W) floats in [0, 1]
    gt_polygon: np.ndarray  # (V, 2) pixel coordinates, counter-clockwise
    gt_mask: np.ndarray     # (H, W) 0/1
    height: int
    width: int


@dataclass
class DatasetManifest:
    root: Path
    split: str
    seed: int
    entries: list

    def __len__(self):
        return len(self.entries)

    @property
    def path(self) -> Path:
        return self.root / "manifest.json"


def polygon_is_simple(points: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect.

    O(V^2) segment-intersection scan; adjacent edges (sharing a vertex,
    including the wrap-around pair) are skipped.
    """
    pts = np.asarray(points, dtype=np.float64)
    v = len(pts)
    a = pts
    b = np.roll(pts, -1, axis=0)

    def cross(ox, oy, px, py, qx, qy):
        return (px - ox) * (qy - oy) - (py - oy) * (qx - ox)

    for i in range(v):
        # candidates j > i that do not share a vertex with edge i
        j = np.arange(i + 2, v if i > 0 else v - 1)
        if j.size == 0:
            continue
        d1 = cross(a[i, 0], a[i, 1], b[i, 0], b[i, 1], a[j, 0], a[j, 1])
        d2 = cross(a[i, 0], a[i, 1], b[i, 0], b[i, 1], b[j, 0], b[j, 1])
        d3 = cross(a[j, 0], a[j, 1], b[j, 0], b[j, 1], a[i, 0], a[i, 1])
        d4 = cross(a[j, 0], a[j, 1], b[j, 0], b[j, 1], b[i, 0], b[i, 1])
        if np.any((d1 * d2 < 0) & (d3 * d4 < 0)):
            return False
        # collinear overlaps count as intersections too
        touching = (d1 == 0) | (d2 == 0) | (d3 == 0) | (d4 == 0)
        if np.any(touching & (d1 * d2 <= 0) & (d3 * d4 <= 0)):
            return False
    return True


def _random_blob(rng, size: int) -> np.ndarray:
    """Star polygon smoothed by the closed centripetal spline, in pixels."""
    while True:
        lobes = int(rng.integers(8, 17))
        center = size * (0.5 + rng.uniform(-0.06, 0.06, size=2))
        max_r = min(center.min(), size - center.max()) - 2.5
        base = size * rng.uniform(0.22, 0.36)
        radii = np.clip(base * rng.uniform(0.6, 1.4, size=lobes), 3.0, max_r)
        theta = 2 * np.pi * np.arange(lobes) / lobes + rng.uniform(0, 2 * np.pi)
        cps = np.stack([center[0] + radii * np.cos(theta),
                        center[1] + radii * np.sin(theta)], axis=1)
        curve = geometry.ControlCurve(cps, geometry.SPLINE)
        verts = geometry.crs_sample(curve, 8 * lobes).points
        if polygon_is_simple(verts) and \
                verts.min() >= 1.0 and verts.max() <= size - 1.0:
            return verts


def _textured_background(rng, size: int) -> np.ndarray:
    base = rng.uniform(0.1, 0.9, size=3)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((3, size, size))
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img[c] = base[c] + 0.08 * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    return img, base


def gen_synthetic(n: int, seed: int, out_dir, size: int = 64,
                  split: str = "train") -> DatasetManifest:
    """Generate n blob samples under out_dir, fully reproducible from seed.

    Writes PNG images, one annotation JSON per sample, and a manifest.json
    index.  Foreground color is forced away from the background so every
    blob is separable from its texture.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        sample_id = f"{split}-{i:05d}"
        verts = _random_blob(rng, size)
        bg, bg_base = _textured_background(rng, size)
        fg = rng.uniform(0.05, 0.95, size=3)
        while np.abs(fg - bg_base).sum() < 1.0:
            fg = rng.uniform(0.05, 0.95, size=3)
        mask = raster.scanline_rasterize(verts, size, size)
        img = bg * (1 - mask) + fg[:, None, None] * mask
        img = np.clip(img + rng.normal(scale=0.05, size=img.shape), 0.0, 1.0)

        image_name = f"{sample_id}.png"
        ann_name = f"{sample_id}.json"
        arr = (img.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(root / image_name)
        with open(root / ann_name, "w", encoding="utf-8") as f:
            json.dump({"id": sample_id, "vertices": verts.tolist(),
                       "height": size, "width": size}, f)
        entries.append({"id": sample_id, "image": image_name,
                        "annotation": ann_name})

    manifest = DatasetManifest(root=root, split=split, seed=seed, entries=entries)
    with open(manifest.path, "w", encoding="utf-8") as f:
        json.dump({"root": ".", "split": split, "seed": seed,
                   "samples": entries}, f, indent=2)
    return manifest


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt manifest JSON in {path}: {e}")
    return DatasetManifest(root=path.parent, split=raw["split"],
                           seed=raw["seed"], entries=raw["samples"])


def load_sample(manifest: DatasetManifest, idx: int) -> Sample:
    """Decode one sample; the mask is rasterized from the polygon here."""
    entry = manifest.entries[idx]
    image_path = manifest.root / entry["image"]
    ann_path = manifest.root / entry["annotation"]
    try:
        with open(ann_path, encoding="utf-8") as f:
            ann = json.load(f)
    except FileNotFoundError:
        raise DataError(f"annotation not found: {ann_path}")
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt annotation JSON in {ann_path}: {e}")
    verts = np.asarray(ann["vertices"], dtype=np.float64)
    if verts.ndim != 2 or len(verts) < 3:
        raise DataError(f"{ann_path}: polygon needs at least 3 vertices")
    verts = geometry.canonicalize_orientation(verts)
    try:
        with Image.open(image_path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"image not found: {image_path}")
    image = rgb.transpose(2, 0, 1)
    h, w = int(ann["height"]), int(ann["width"])
    mask = raster.scanline_rasterize(verts, h, w)
    return Sample(id=ann["id"], image=image, gt_polygon=verts, gt_mask=mask,
                  height=h, width=w)


def load_all(manifest: DatasetManifest) -> list:
    return [load_sample(manifest, i) for i in range(len(manifest))]


def split_of(sample_id: str, seed: int,
             fractions=(0.8, 0.1, 0.1)) -> str:
    """Deterministic split assignment: a pure function of (id, seed)."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2 ** 64
    names = ("train", "val", "test")
    edge = 0.0
    for name, frac in zip(names, fractions):
        edge += frac
        if u < edge:
            return name
    return names[-1]


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C,H,W) image with the same pixel-center bilinear kernel the
    model uses for feature sampling."""
    xs = (np.arange(out_w) + 0.5) / out_w
    ys = (np.arange(out_h) + 0.5) / out_h
    gx, gy = np.meshgrid(xs, ys)
    sampled = nm.sample_grid(image, gx.ravel(), gy.ravel())
    return sampled.T.reshape(image.shape[0], out_h, out_w)
