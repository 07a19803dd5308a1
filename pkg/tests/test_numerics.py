import numpy as np
import pytest

from curvegcn import numerics as nm

from helpers import num_grad, rel_err


class TestLinear:
    def test_identity(self):
        y = nm.linear(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(y, [[1.0, 2.0]])

    def test_zero_weights_pass_bias(self):
        y = nm.linear(np.array([[1.0, 2.0]]), np.zeros((2, 2)), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(y, [[3.0, 4.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nm.linear(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))

    def test_weight_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 2))
        w = rng.normal(size=(2, 4))
        b = rng.normal(size=4)
        _, dw, _ = nm.linear_backward(x, w, np.ones((3, 4)))
        dw_num = num_grad(lambda wp: nm.linear(x, wp, b).sum(), w)
        assert rel_err(dw, dw_num) < 1e-6

    def test_input_and_bias_gradients(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        dx, _, db = nm.linear_backward(x, w, np.ones((2, 2)))
        assert rel_err(dx, num_grad(lambda xp: nm.linear(xp, w, b).sum(), x)) < 1e-6
        assert rel_err(db, num_grad(lambda bp: nm.linear(x, w, bp).sum(), b)) < 1e-6


class TestRelu:
    def test_basic(self):
        np.testing.assert_array_equal(nm.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_all_negative_zero_everything(self):
        x = -np.abs(np.random.default_rng(2).normal(size=8)) - 0.1
        assert np.all(nm.relu(x) == 0)
        assert np.all(nm.relu_backward(x, np.ones_like(x)) == 0)

    def test_gradient_away_from_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=12)
        x[np.abs(x) < 0.1] += 0.2  # keep clear of the kink
        g = nm.relu_backward(x, np.ones_like(x))
        g_num = num_grad(lambda xp: nm.relu(xp).sum(), x)
        assert rel_err(g, g_num) < 1e-6


class TestBilinearSample:
    def test_pixel_center_exact(self):
        fmap = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
        # center of pixel (row 1, col 2)
        v = nm.bilinear_sample(fmap, (2 + 0.5) / 4, (1 + 0.5) / 3)
        assert v[0] == fmap[0, 1, 2]

    def test_midpoint_of_four_centers_is_mean(self):
        rng = np.random.default_rng(4)
        fmap = rng.normal(size=(2, 4, 4))
        # midpoint between centers of pixels (1,1),(1,2),(2,1),(2,2)
        v = nm.bilinear_sample(fmap, 2.0 / 4, 2.0 / 4)
        expect = fmap[:, 1:3, 1:3].mean(axis=(1, 2))
        np.testing.assert_allclose(v, expect, rtol=0, atol=1e-12)

    def test_empty_feature_map_rejected(self):
        with pytest.raises(ValueError):
            nm.bilinear_sample(np.zeros((0, 2, 2)), 0.5, 0.5)

    def test_fmap_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        fmap = rng.normal(size=(2, 5, 6))
        xs = rng.uniform(0.05, 0.95, size=7)
        ys = rng.uniform(0.05, 0.95, size=7)
        dout = rng.normal(size=(7, 2))
        df, _, _ = nm.sample_grid_backward(fmap, xs, ys, dout)
        df_num = num_grad(lambda fp: float((nm.sample_grid(fp, xs, ys) * dout).sum()), fmap)
        assert rel_err(df, df_num) < 1e-6

    def test_coordinate_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        fmap = rng.normal(size=(3, 6, 5))
        xs = rng.uniform(0.15, 0.85, size=5)
        ys = rng.uniform(0.15, 0.85, size=5)
        dout = rng.normal(size=(5, 3))
        _, dxs, dys = nm.sample_grid_backward(fmap, xs, ys, dout)
        dxs_num = num_grad(lambda xp: float((nm.sample_grid(fmap, xp, ys) * dout).sum()), xs)
        dys_num = num_grad(lambda yp: float((nm.sample_grid(fmap, xs, yp) * dout).sum()), ys)
        assert rel_err(dxs, dxs_num) < 1e-5
        assert rel_err(dys, dys_num) < 1e-5

    def test_exact_on_affine_feature_maps(self):
        # a map that is itself affine in (x, y) is reconstructed exactly
        h, w = 7, 9
        cx = (np.arange(w) + 0.5) / w
        cy = (np.arange(h) + 0.5) / h
        fmap = (1.7 * cx[None, None, :] - 0.6 * cy[None, :, None]
                + 0.25 * np.ones((1, h, w)))
        rng = np.random.default_rng(7)
        xs = rng.uniform(0.5 / w, 1 - 0.5 / w, size=50)
        ys = rng.uniform(0.5 / h, 1 - 0.5 / h, size=50)
        got = nm.sample_grid(fmap, xs, ys)[:, 0]
        expect = 1.7 * xs - 0.6 * ys + 0.25
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)

    def test_outside_coordinates_clamp_to_border(self):
        fmap = np.arange(4, dtype=np.float64).reshape(1, 2, 2)
        left = nm.bilinear_sample(fmap, -3.0, 0.25)
        at_border = nm.bilinear_sample(fmap, 0.0, 0.25)
        np.testing.assert_allclose(left, at_border, atol=0)


class TestConv2d:
    def test_one_by_one_identity(self):
        x = np.random.default_rng(8).normal(size=(2, 4, 4))
        k = np.zeros((2, 2, 1, 1))
        k[0, 0, 0, 0] = 1.0
        k[1, 1, 0, 0] = 1.0
        np.testing.assert_allclose(nm.conv2d(x, k), x, atol=0)

    def test_zero_kernels(self):
        x = np.ones((1, 5, 5))
        y = nm.conv2d(x, np.zeros((3, 1, 3, 3)), padding=1)
        assert y.shape == (3, 5, 5)
        assert np.all(y == 0)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            nm.conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)))

    def test_strided_output_shape(self):
        y = nm.conv2d(np.ones((3, 8, 8)), np.ones((4, 3, 3, 3)), stride=2, padding=1)
        assert y.shape == (4, 4, 4)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(1, 5, 5))
        k = rng.normal(size=(2, 1, 3, 3))
        dy = rng.normal(size=nm.conv2d(x, k, stride=1, padding=1).shape)
        dx, dk = nm.conv2d_backward(x, k, dy, stride=1, padding=1)
        loss = lambda xp, kp: float((nm.conv2d(xp, kp, stride=1, padding=1) * dy).sum())
        assert rel_err(dx, num_grad(lambda xp: loss(xp, k), x)) < 1e-5
        assert rel_err(dk, num_grad(lambda kp: loss(x, kp), k)) < 1e-5

    def test_strided_gradients(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        dy = rng.normal(size=nm.conv2d(x, k, stride=2, padding=1).shape)
        dx, dk = nm.conv2d_backward(x, k, dy, stride=2, padding=1)
        loss = lambda xp, kp: float((nm.conv2d(xp, kp, stride=2, padding=1) * dy).sum())
        assert rel_err(dx, num_grad(lambda xp: loss(xp, k), x)) < 1e-5
        assert rel_err(dk, num_grad(lambda kp: loss(x, kp), k)) < 1e-5


class TestBce:
    def test_perfect_prediction_near_zero(self):
        assert nm.bce(np.ones(4), np.ones(4)) < 1e-6

    def test_half_everywhere_is_ln2(self):
        assert abs(nm.bce(np.full(10, 0.5), np.array([0, 1] * 5, dtype=float)) - np.log(2)) < 1e-12

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            nm.bce(np.full(3, 0.5), np.array([0.0, 0.5, 1.0]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        pred = rng.uniform(0.05, 0.95, size=(3, 4))
        target = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
        g = nm.bce_backward(pred, target)
        g_num = num_grad(lambda pp: nm.bce(pp, target), pred)
        assert rel_err(g, g_num) < 1e-6


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        store = nm.ParamStore()
        w = store.add("w", np.array([1.0, -2.0]))
        nm.adam_step(store, lr=0.1)
        np.testing.assert_array_equal(store["w"], [1.0, -2.0])
        assert store.step_count == 1

    def test_single_step_constant_gradient(self):
        # m_hat = v_hat = 1 after one step, so the update is lr/(1 + eps)
        store = nm.ParamStore()
        store.add("w", np.array([0.5]))
        store.accumulate("w", np.array([1.0]))
        nm.adam_step(store, lr=0.1)
        assert abs(store["w"][0] - (0.5 - 0.1 / (1 + 1e-8))) < 1e-12

    def test_nan_gradient_rejected(self):
        store = nm.ParamStore()
        store.add("w", np.array([0.0]))
        store.accumulate("w", np.array([np.nan]))
        with pytest.raises(FloatingPointError):
            nm.adam_step(store, lr=0.1)

    def test_gradients_zeroed_after_step(self):
        store = nm.ParamStore()
        store.add("w", np.array([1.0]))
        store.accumulate("w", np.array([2.0]))
        nm.adam_step(store, lr=0.01)
        assert np.all(store.grads["w"] == 0)

    def test_lr_schedule(self):
        assert nm.decayed_lr(3e-5, 0) == 3e-5
        assert nm.decayed_lr(3e-5, 6) == 3e-5
        assert abs(nm.decayed_lr(3e-5, 7) - 3e-6) < 1e-18
        assert abs(nm.decayed_lr(3e-5, 14) - 3e-7) < 1e-19


class TestDeterminism:
    def test_forward_passes_repeatable(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 8, 8))
        k = rng.normal(size=(4, 2, 3, 3))
        a = nm.conv2d(x, k, stride=2, padding=1)
        b = nm.conv2d(x, k, stride=2, padding=1)
        assert np.array_equal(a, b)

    def test_assert_finite(self):
        with pytest.raises(FloatingPointError):
            nm.assert_finite(np.array([1.0, np.inf]))
