from dataclasses import dataclass

import numpy as np
import pytest

from curvegcn import geometry as geo
from curvegcn import interactive as ia
from curvegcn import model as mdl
from curvegcn import raster


def tiny_config(**overrides):
    base = dict(n_points=8, k_samples=24, iterations=1, crop_size=16,
                grid_size=4, backbone_channels=(4, 4, 6, 6), branch_channels=2,
                gcn_hidden=10, gcn_blocks=1, correction_radius=2)
    base.update(overrides)
    return mdl.ModelConfig(**base)


def star_points(rng, n, scale=0.3):
    theta = 2 * np.pi * np.arange(n) / n
    r = rng.uniform(0.5, 1.0, size=n) * scale
    return np.stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)], axis=1)


class TestNeighborhood:
    def test_k2_wraps_around(self):
        assert set(ia.neighborhood(8, 0, 2)) == {1, 2, 6, 7}

    def test_k0_empty(self):
        assert ia.neighborhood(8, 3, 0).size == 0

    def test_k1(self):
        assert set(ia.neighborhood(5, 4, 1)) == {0, 3}


class TestCorrectionFeatures:
    def test_extra_slots(self):
        rng = np.random.default_rng(0)
        fmap = rng.normal(size=(3, 6, 6))
        pts = star_points(rng, 8)
        corr = ia.Correction(node=3, old_pos=pts[3], new_pos=pts[3] + [0.05, -0.02])
        feats, pinned = ia.correction_features(fmap, pts, corr)
        extra = feats[:, -2:]
        np.testing.assert_allclose(extra[3], [0.05, -0.02], atol=1e-15)
        others = np.delete(extra, 3, axis=0)
        assert np.all(others == 0)
        np.testing.assert_array_equal(pinned[3], corr.new_pos)

    def test_zero_shift_matches_padded_base_features(self):
        rng = np.random.default_rng(1)
        fmap = rng.normal(size=(3, 6, 6))
        pts = star_points(rng, 6)
        corr = ia.Correction(node=2, old_pos=pts[2], new_pos=pts[2].copy())
        feats, _ = ia.correction_features(fmap, pts, corr)
        base = mdl.node_input_features(fmap, pts)
        np.testing.assert_array_equal(feats[:, :-2], base)
        assert np.all(feats[:, -2:] == 0)

    def test_bad_index(self):
        fmap = np.zeros((2, 4, 4))
        pts = star_points(np.random.default_rng(2), 5)
        with pytest.raises(IndexError):
            ia.correction_features(fmap, pts, ia.Correction(5, pts[0], pts[0]))


class TestMaskedPredict:
    def build(self, seed=3, **cfg_over):
        cfg = tiny_config(**cfg_over)
        imodel = ia.InteractiveModel.build(cfg, seed=seed)
        rng = np.random.default_rng(seed + 1)
        fmap = rng.normal(size=(cfg.feature_channels, 4, 4))
        pts = star_points(rng, cfg.n_points)
        return imodel, fmap, pts

    def test_exact_movable_set(self):
        imodel, fmap, pts = self.build()
        corr = ia.Correction(0, pts[0], pts[0] + [0.1, 0.0])
        curve = geo.ControlCurve(pts, geo.SPLINE)
        out = ia.masked_predict(imodel, fmap, curve, corr)
        np.testing.assert_array_equal(out.points[0], corr.new_pos)
        for frozen in (3, 4, 5):
            assert np.array_equal(out.points[frozen], pts[frozen])

    def test_k0_moves_only_corrected(self):
        imodel, fmap, pts = self.build(correction_radius=0)
        corr = ia.Correction(2, pts[2], pts[2] + [0.0, 0.07])
        out = ia.masked_predict(imodel, fmap, geo.ControlCurve(pts), corr)
        np.testing.assert_array_equal(out.points[2], corr.new_pos)
        others = np.delete(np.arange(8), 2)
        assert np.array_equal(out.points[others], pts[others])

    def test_zero_head_pins_but_freezes_neighbors(self):
        imodel, fmap, pts = self.build()
        imodel.params.values["gcn.head.w"][...] = 0.0
        imodel.params.values["gcn.head.b"][...] = 0.0
        corr = ia.Correction(4, pts[4], pts[4] + [0.02, 0.03])
        out = ia.masked_predict(imodel, fmap, geo.ControlCurve(pts), corr)
        np.testing.assert_array_equal(out.points[4], corr.new_pos)
        others = np.delete(np.arange(8), 4)
        assert np.array_equal(out.points[others], pts[others])

    def test_locality_randomized(self):
        imodel, fmap, _ = self.build(seed=5)
        rng = np.random.default_rng(6)
        n = imodel.config.n_points
        k = imodel.config.correction_radius
        for _ in range(1000):
            pts = rng.uniform(0.05, 0.95, size=(n, 2))
            node = int(rng.integers(0, n))
            corr = ia.Correction(node, pts[node],
                                 np.clip(pts[node] + rng.uniform(-0.2, 0.2, 2), 0, 1))
            out, _ = ia.masked_predict_forward(imodel, fmap, pts, corr)
            assert np.array_equal(out[node], corr.new_pos)
            frozen = np.setdiff1d(np.arange(n),
                                  np.append(ia.neighborhood(n, node, k), node))
            assert np.array_equal(out[frozen], pts[frozen])


class TestSimulateWorstPoint:
    def test_perfect_prediction_zero_shift_node0(self):
        pts = star_points(np.random.default_rng(7), 10)
        corr = ia.simulate_worst_point(pts, pts.copy())
        assert corr.node == 0
        assert np.all(corr.shift == 0)

    def test_single_displaced_node(self):
        pts = star_points(np.random.default_rng(8), 10)
        displaced = pts.copy()
        displaced[5] += [0.2, 0.0]
        corr = ia.simulate_worst_point(displaced, pts)
        assert corr.node == 5
        np.testing.assert_allclose(corr.new_pos, pts[5], atol=1e-12)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n = int(rng.integers(4, 13))
            gt = star_points(rng, n)
            pred = np.clip(gt + rng.normal(scale=0.05, size=gt.shape), 0, 1)
            if geo.signed_area(pred) < 0:
                continue  # keep both CCW so the oracle needs no flip
            corr = ia.simulate_worst_point(pred, gt)

            best_j, best_cost = 0, None
            for j in range(n):
                cost = sum(abs(pred[i, 0] - gt[(j + i) % n, 0])
                           + abs(pred[i, 1] - gt[(j + i) % n, 1])
                           for i in range(n))
                if best_cost is None or cost < best_cost:
                    best_j, best_cost = j, cost
            dists = [abs(pred[i, 0] - gt[(best_j + i) % n, 0])
                     + abs(pred[i, 1] - gt[(best_j + i) % n, 1])
                     for i in range(n)]
            worst = max(range(n), key=lambda i: (dists[i], -i))
            assert corr.node == worst
            np.testing.assert_array_equal(corr.new_pos, gt[(best_j + worst) % n])


@dataclass
class FakeSample:
    image: np.ndarray
    gt_polygon: np.ndarray
    gt_mask: np.ndarray


def make_samples(rng, count, cfg):
    samples = []
    for _ in range(count):
        pts_px = star_points(rng, 10, scale=0.35) * 16
        mask = raster.scanline_rasterize(pts_px, 16, 16)
        img = np.zeros((3, 16, 16))
        img[:] = mask * rng.uniform(0.5, 1.0) + (1 - mask) * rng.uniform(0.0, 0.3)
        samples.append(FakeSample(image=img, gt_polygon=pts_px, gt_mask=mask))
    return samples


class TestAnnotateUntil:
    def setup_models(self, seed=10):
        cfg = tiny_config()
        base = mdl.GcnModel.build(cfg, seed=seed)
        imodel = ia.InteractiveModel.build(cfg, seed=seed + 1)
        return base, imodel

    def test_zero_budget_returns_automatic(self):
        base, imodel = self.setup_models()
        rng = np.random.default_rng(11)
        sample = make_samples(rng, 1, base.config)[0]
        trace = ia.annotate_until(base, imodel, sample.image, sample.gt_polygon,
                                  sample.gt_mask, threshold=0.99, max_clicks=0)
        auto = mdl.iterative_inference(base, sample.image).final
        np.testing.assert_array_equal(trace.curve.points, auto.points)
        assert trace.clicks == 0
        assert len(trace.ious) == 1

    def test_already_above_threshold_means_no_clicks(self):
        base, imodel = self.setup_models()
        rng = np.random.default_rng(12)
        sample = make_samples(rng, 1, base.config)[0]
        trace = ia.annotate_until(base, imodel, sample.image, sample.gt_polygon,
                                  sample.gt_mask, threshold=0.0, max_clicks=10)
        assert trace.clicks == 0
        assert trace.reached

    def test_deterministic_trace(self):
        base, imodel = self.setup_models(seed=13)
        rng = np.random.default_rng(14)
        sample = make_samples(rng, 1, base.config)[0]
        a = ia.annotate_until(base, imodel, sample.image, sample.gt_polygon,
                              sample.gt_mask, threshold=0.9, max_clicks=8)
        b = ia.annotate_until(base, imodel, sample.image, sample.gt_polygon,
                              sample.gt_mask, threshold=0.9, max_clicks=8)
        assert a.clicks == b.clicks
        assert a.ious == b.ious
        np.testing.assert_array_equal(a.curve.points, b.curve.points)

    def test_trace_is_non_decreasing(self):
        base, imodel = self.setup_models(seed=15)
        rng = np.random.default_rng(16)
        for sample in make_samples(rng, 3, base.config):
            trace = ia.annotate_until(base, imodel, sample.image,
                                      sample.gt_polygon, sample.gt_mask,
                                      threshold=0.95, max_clicks=10)
            assert all(b >= a for a, b in zip(trace.ious, trace.ious[1:]))


class TestTrainInteractive:
    def test_zero_rounds_is_noop(self):
        cfg = tiny_config()
        base = mdl.GcnModel.build(cfg, seed=17)
        rng = np.random.default_rng(18)
        samples = make_samples(rng, 2, cfg)
        imodel = ia.train_interactive(samples, base, rounds=0, epochs=3, seed=4)
        fresh = ia.InteractiveModel.build(cfg, seed=4)
        for name in fresh.params.names():
            np.testing.assert_array_equal(imodel.params[name], fresh.params[name])

    def test_annotator_called_once_per_round(self, monkeypatch):
        cfg = tiny_config()
        base = mdl.GcnModel.build(cfg, seed=19)
        imodel = ia.InteractiveModel.build(cfg, seed=20)
        rng = np.random.default_rng(21)
        sample = make_samples(rng, 1, cfg)[0]
        pred = mdl.iterative_inference(base, sample.image)
        gt_norm = geo.canonicalize_orientation(sample.gt_polygon / 16.0)
        gt_curve = geo.ControlCurve(gt_norm, geo.POLYGON)
        gt_n = geo.polygon_sample(gt_curve, cfg.n_points).points
        gt_k = geo.polygon_sample(gt_curve, cfg.k_samples).points

        calls = []
        original = ia.simulate_worst_point

        def counting(pred_points, gt_points):
            calls.append(1)
            return original(pred_points, gt_points)

        monkeypatch.setattr(ia, "simulate_worst_point", counting)
        ia.interactive_training_step(imodel, pred.features.fmap,
                                     pred.final.points, gt_n, gt_k, rounds=3)
        assert len(calls) == 3

    def test_epoch_loss_decreases_on_overfit_set(self):
        cfg = tiny_config()
        base = mdl.GcnModel.build(cfg, seed=22)
        rng = np.random.default_rng(23)
        samples = make_samples(rng, 10, cfg)
        logs = []
        ia.train_interactive(samples, base, rounds=2, epochs=2, lr=3e-4,
                             seed=24, log=logs.append)
        losses_seen = [float(line.rsplit(" ", 1)[-1]) for line in logs]
        assert len(losses_seen) == 2
        assert losses_seen[1] < losses_seen[0]
