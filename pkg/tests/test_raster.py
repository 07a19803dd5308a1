import numpy as np
import pytest

from curvegcn import raster

from helpers import shoelace


def star_polygon_px(rng, n, h, w, rmin_frac=0.15, rmax_frac=0.42):
    cx = rng.uniform(0.35, 0.65) * w
    cy = rng.uniform(0.35, 0.65) * h
    theta = 2 * np.pi * np.arange(n) / n + rng.uniform(0, 2 * np.pi)
    r = rng.uniform(rmin_frac, rmax_frac, size=n) * min(h, w)
    return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)


class TestRenderForward:
    def test_square_covers_pixel_centers(self):
        square = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])
        mask = raster.render(square, 8, 8)
        assert mask.sum() == 16
        assert np.all(mask[:4, :4] == 1)

    def test_collinear_contour_renders_nothing(self):
        line = np.array([[1.0, 1.0], [5.0, 5.0], [9.0, 9.0], [5.0, 5.0]])
        assert raster.render(line, 12, 12).sum() == 0

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            raster.render(np.array([[0.0, 0.0], [1.0, 1.0]]), 4, 4)

    def test_matches_scanline_oracle_on_random_simple_polygons(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            pts = star_polygon_px(rng, int(rng.integers(3, 24)), 64, 64)
            fan = raster.render(pts, 64, 64)
            scan = raster.scanline_rasterize(pts, 64, 64)
            assert np.array_equal(fan, scan)

    def test_apex_choice_does_not_matter(self):
        rng = np.random.default_rng(7)
        pts = star_polygon_px(rng, 11, 48, 48)
        base = raster.render(pts, 48, 48)
        for shift in (1, 3, 7):
            rolled = np.roll(pts, shift, axis=0)
            assert np.array_equal(raster.render(rolled, 48, 48), base)

    def test_mask_area_tracks_shoelace_area(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            pts = star_polygon_px(rng, 14, 96, 96, rmin_frac=0.2, rmax_frac=0.45)
            mask = raster.render(pts, 96, 96)
            area = abs(shoelace(pts))
            if area < 100:
                continue
            edges = np.roll(pts, -1, axis=0) - pts
            perimeter = np.linalg.norm(edges, axis=1).sum()
            assert abs(mask.sum() - area) <= perimeter


class TestRenderBackward:
    def test_zero_when_masks_agree(self):
        rng = np.random.default_rng(9)
        pts = star_polygon_px(rng, 9, 32, 32)
        mask = raster.render(pts, 32, 32)
        grad = raster.render_backward(pts, np.sign(mask - mask))
        assert np.all(grad == 0)

    def test_zero_inside_uniform_agreement_region(self):
        # triangle strictly inside a region where pred and target are both 1
        tri = np.array([[10.0, 10.0], [20.0, 12.0], [14.0, 20.0]])
        m = np.zeros((32, 32))
        m[4:28, 4:28] = 1.0
        grad = raster.render_backward(tri, np.sign(m - m.copy()))
        assert np.all(grad == 0)

    def test_gradient_pulls_toward_translated_target(self):
        # pred square, target shifted right: x gradient must be negative so
        # the descent step along -grad moves the square right
        pred = np.array([[8.0, 8.0], [16.0, 8.0], [16.0, 16.0], [8.0, 16.0]])
        target = raster.scanline_rasterize(pred + [3.0, 0.0], 32, 32)
        mask = raster.render(pred, 32, 32)
        grad = raster.render_backward(pred, np.sign(mask - target))
        assert grad[:, 0].sum() < 0

    def descent_rate(self, make_shape, trials, seed):
        rng = np.random.default_rng(seed)
        wins = 0
        for _ in range(trials):
            pts = make_shape(rng)
            shift = rng.uniform(-3, 3, size=2)
            jitter = rng.uniform(-1, 1, size=pts.shape)
            target = raster.scanline_rasterize(pts + shift + jitter, 64, 64)
            mask = raster.render(pts, 64, 64)
            before = np.abs(mask - target).sum()
            if before == 0:
                wins += 1
                continue
            grad = raster.render_backward(pts, np.sign(mask - target))
            norms = np.linalg.norm(grad, axis=1)
            if norms.max() == 0:
                continue
            step = pts - 0.5 * grad / norms.max()
            after = np.abs(raster.render(step, 64, 64) - target).sum()
            wins += after < before
        return wins / trials

    def test_descent_single_triangles(self):
        rate = self.descent_rate(
            lambda rng: star_polygon_px(rng, 3, 64, 64, 0.15, 0.35), 100, 10)
        assert rate >= 0.9

    def test_descent_twenty_gons(self):
        rate = self.descent_rate(
            lambda rng: star_polygon_px(rng, 20, 64, 64, 0.2, 0.4), 100, 11)
        assert rate >= 0.9


class TestIou:
    def test_identical(self):
        m = np.zeros((5, 5))
        m[1:4, 1:4] = 1
        assert raster.iou(m, m.copy()) == 1.0

    def test_disjoint(self):
        a = np.zeros((6, 6))
        b = np.zeros((6, 6))
        a[0, 0] = 1
        b[5, 5] = 1
        assert raster.iou(a, b) == 0.0

    def test_half_overlap_strip(self):
        a = np.zeros((20, 20))
        b = np.zeros((20, 20))
        a[0:10, 0:10] = 1
        b[0:10, 5:15] = 1
        assert abs(raster.iou(a, b) - 1.0 / 3.0) < 1e-12

    def test_both_empty(self):
        assert raster.iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            raster.iou(np.zeros((3, 3)), np.zeros((4, 4)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            raster.iou(np.full((2, 2), 0.5), np.zeros((2, 2)))


class TestBoundaryF:
    def test_identical_masks(self):
        m = np.zeros((16, 16))
        m[4:12, 4:12] = 1
        assert raster.boundary_f(m, m.copy(), 1) == 1.0
        assert raster.boundary_f(m, m.copy(), 2) == 1.0

    def test_empty_vs_nonempty(self):
        m = np.zeros((8, 8))
        n = np.zeros((8, 8))
        n[2:5, 2:5] = 1
        assert raster.boundary_f(m, n, 1) == 0.0

    def test_both_empty(self):
        assert raster.boundary_f(np.zeros((4, 4)), np.zeros((4, 4)), 1) == 1.0

    def test_translated_square_matches_bruteforce(self):
        a = np.zeros((24, 24))
        b = np.zeros((24, 24))
        a[4:14, 4:14] = 1
        b[4:14, 9:19] = 1  # shifted 5 px right
        for thr in (1, 2):
            got = raster.boundary_f(a, b, thr)

            ba = np.argwhere(raster.mask_boundary(a))
            bb = np.argwhere(raster.mask_boundary(b))
            d_ab = np.sqrt(((ba[:, None, :] - bb[None, :, :]) ** 2).sum(-1))
            precision = (d_ab.min(axis=1) <= thr).mean()
            recall = (d_ab.min(axis=0) <= thr).mean()
            expect = 0.0 if precision + recall == 0 else \
                2 * precision * recall / (precision + recall)
            assert got == expect

    def test_random_masks_match_bruteforce(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            a = raster.scanline_rasterize(star_polygon_px(rng, 8, 32, 32), 32, 32)
            b = raster.scanline_rasterize(star_polygon_px(rng, 8, 32, 32), 32, 32)
            if not a.any() or not b.any():
                continue
            ba = np.argwhere(raster.mask_boundary(a))
            bb = np.argwhere(raster.mask_boundary(b))
            d = np.sqrt(((ba[:, None, :] - bb[None, :, :]) ** 2).sum(-1))
            for thr in (1, 2):
                precision = (d.min(axis=1) <= thr).mean()
                recall = (d.min(axis=0) <= thr).mean()
                expect = 0.0 if precision + recall == 0 else \
                    2 * precision * recall / (precision + recall)
                assert abs(raster.boundary_f(a, b, thr) - expect) < 1e-12


class TestPgm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        mask = raster.scanline_rasterize(star_polygon_px(rng, 7, 20, 26), 20, 26)
        path = tmp_path / "mask.pgm"
        raster.write_pgm(mask, path)
        again = raster.read_pgm(path)
        assert np.array_equal(mask, again)
        header = path.read_bytes()[:13]
        assert header.startswith(b"P5\n26 20\n255\n")
