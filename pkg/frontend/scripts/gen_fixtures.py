"""Dump spline sample vectors from the reference implementation so the
client-side sampler can be checked against the exact same numbers."""

import json
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "src"))
from curvegcn import geometry  # noqa: E402

rng = np.random.default_rng(1234)
cases = []
for n, k in ((5, 20), (8, 40), (12, 48), (40, 160)):
    theta = 2 * np.pi * np.arange(n) / n
    r = rng.uniform(0.15, 0.45, size=n)
    pts = np.stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)], axis=1)
    contour = geometry.crs_sample(geometry.ControlCurve(pts), k)
    cases.append({"control_points": pts.tolist(), "k": k,
                  "samples": contour.points.tolist()})

out = pathlib.Path(__file__).resolve().parents[1] / "test" / "fixtures" / "crs_vectors.json"
out.write_text(json.dumps(cases))
print(f"wrote {out} ({len(cases)} cases)")
