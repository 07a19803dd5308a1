import json
import time

import numpy as np
import pytest

from curvegcn import data, geometry, raster


class TestGeneration:
    def test_same_seed_byte_identical(self, tmp_path):
        m1 = data.gen_synthetic(4, seed=7, out_dir=tmp_path / "a", size=32)
        m2 = data.gen_synthetic(4, seed=7, out_dir=tmp_path / "b", size=32)
        for e1, e2 in zip(m1.entries, m2.entries):
            img1 = (m1.root / e1["image"]).read_bytes()
            img2 = (m2.root / e2["image"]).read_bytes()
            assert img1 == img2
            ann1 = (m1.root / e1["annotation"]).read_bytes()
            ann2 = (m2.root / e2["annotation"]).read_bytes()
            assert ann1 == ann2
        assert (m1.root / "manifest.json").read_bytes() == \
               (m2.root / "manifest.json").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        m1 = data.gen_synthetic(1, seed=1, out_dir=tmp_path / "a", size=32)
        m2 = data.gen_synthetic(1, seed=2, out_dir=tmp_path / "b", size=32)
        assert (m1.root / m1.entries[0]["image"]).read_bytes() != \
               (m2.root / m2.entries[0]["image"]).read_bytes()

    def test_generated_polygons_are_simple(self, tmp_path):
        manifest = data.gen_synthetic(20, seed=3, out_dir=tmp_path, size=48)
        for i in range(len(manifest)):
            sample = data.load_sample(manifest, i)
            assert data.polygon_is_simple(sample.gt_polygon)

    def test_generation_speed(self, tmp_path):
        start = time.perf_counter()
        data.gen_synthetic(500, seed=4, out_dir=tmp_path, size=64)
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0

    def test_n_must_be_positive(self, tmp_path):
        with pytest.raises(ValueError):
            data.gen_synthetic(0, seed=1, out_dir=tmp_path)


class TestSimplicityOracle:
    def test_simple_square(self):
        sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        assert data.polygon_is_simple(sq)

    def test_bowtie_rejected(self):
        bow = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        assert not data.polygon_is_simple(bow)

    def test_stars_are_simple(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(5, 20))
            theta = 2 * np.pi * np.arange(n) / n
            r = rng.uniform(0.2, 1.0, size=n)
            pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
            assert data.polygon_is_simple(pts)


class TestLoading:
    def test_round_trip_vertices_exact(self, tmp_path):
        manifest = data.gen_synthetic(3, seed=6, out_dir=tmp_path, size=32)
        for i in range(3):
            sample = data.load_sample(manifest, i)
            with open(manifest.root / manifest.entries[i]["annotation"]) as f:
                raw = np.asarray(json.load(f)["vertices"])
            # loader canonicalizes; generated blobs are already CCW
            np.testing.assert_array_equal(sample.gt_polygon, raw)

    def test_mask_matches_differentiable_renderer(self, tmp_path):
        manifest = data.gen_synthetic(5, seed=8, out_dir=tmp_path, size=48)
        for i in range(5):
            sample = data.load_sample(manifest, i)
            rendered = raster.render(sample.gt_polygon, 48, 48)
            assert raster.iou(sample.gt_mask, rendered) == 1.0

    def test_corrupt_json_names_file(self, tmp_path):
        manifest = data.gen_synthetic(1, seed=9, out_dir=tmp_path, size=32)
        ann = manifest.root / manifest.entries[0]["annotation"]
        ann.write_text("{not json")
        with pytest.raises(data.DataError, match=ann.name):
            data.load_sample(manifest, 0)

    def test_too_few_vertices_rejected(self, tmp_path):
        manifest = data.gen_synthetic(1, seed=10, out_dir=tmp_path, size=32)
        ann = manifest.root / manifest.entries[0]["annotation"]
        ann.write_text(json.dumps({"id": "x", "vertices": [[1, 1], [2, 2]],
                                   "height": 32, "width": 32}))
        with pytest.raises(data.DataError):
            data.load_sample(manifest, 0)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(data.DataError):
            data.load_manifest(tmp_path / "nope")

    def test_polygons_ccw_on_load(self, tmp_path):
        manifest = data.gen_synthetic(1, seed=11, out_dir=tmp_path, size=32)
        ann_path = manifest.root / manifest.entries[0]["annotation"]
        ann = json.loads(ann_path.read_text())
        ann["vertices"] = ann["vertices"][:1] + ann["vertices"][:0:-1]  # flip to CW
        ann_path.write_text(json.dumps(ann))
        sample = data.load_sample(manifest, 0)
        assert geometry.signed_area(sample.gt_polygon) > 0

    def test_image_values_unit_range(self, tmp_path):
        manifest = data.gen_synthetic(1, seed=12, out_dir=tmp_path, size=32)
        sample = data.load_sample(manifest, 0)
        assert sample.image.shape == (3, 32, 32)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0


class TestSplit:
    def test_pure_function_of_id_and_seed(self):
        assert data.split_of("abc", 1) == data.split_of("abc", 1)
        ids = [f"s{i}" for i in range(500)]
        names = [data.split_of(i, seed=42) for i in ids]
        again = [data.split_of(i, seed=42) for i in ids]
        assert names == again

    def test_fractions_roughly_respected(self):
        names = [data.split_of(f"id{i}", seed=0) for i in range(2000)]
        train = names.count("train") / 2000
        assert 0.75 < train < 0.85

    def test_split_disjoint_by_id(self):
        buckets = {}
        for i in range(300):
            buckets.setdefault(data.split_of(f"q{i}", seed=3), set()).add(f"q{i}")
        sets = list(buckets.values())
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                assert not (sets[i] & sets[j])


class TestResize:
    def test_constant_image_stays_constant(self):
        img = np.full((3, 10, 10), 0.6)
        out = data.resize_bilinear(img, 24, 24)
        np.testing.assert_allclose(out, 0.6, atol=1e-12)

    def test_shape(self):
        img = np.random.default_rng(13).uniform(size=(3, 64, 64))
        assert data.resize_bilinear(img, 112, 112).shape == (3, 112, 112)
