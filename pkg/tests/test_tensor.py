import numpy as np
import pytest

from dadlnet import tensor as T
from dadlnet.tensor import BatchNormState, ShapeError, Tensor


def finite_diff_grad(f, x, h=1e-5):
    """Central finite differences of scalar f w.r.t. array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return np.abs(a - b) / denom


def conv3d_loop(x, w, b, stride):
    """Direct six-nested-loop convolution oracle."""
    n, c, t, h, wd = x.shape
    f, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    ot = (t - kt) // st + 1
    oh = (h - kh) // sh + 1
    ow = (wd - kw) // sw + 1
    out = np.zeros((n, f, ot, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for ti in range(ot):
                for hi in range(oh):
                    for wi in range(ow):
                        patch = x[ni, :, ti * st:ti * st + kt,
                                  hi * sh:hi * sh + kh, wi * sw:wi * sw + kw]
                        out[ni, fi, ti, hi, wi] = (patch * w[fi]).sum() + b[fi]
    return out


class TestConv3d:
    def test_all_ones(self):
        x = Tensor(np.ones((1, 1, 2, 2, 2)))
        w = Tensor(np.ones((1, 1, 2, 2, 2)))
        b = Tensor(np.zeros(1))
        out = T.conv3d(x, w, b, (1, 1, 1))
        assert out.shape == (1, 1, 1, 1, 1)
        assert out.data.flat[0] == 8.0

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 1, 3, 3, 3)))
        w = Tensor(np.ones((1, 1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = T.conv3d(x, w, b, (1, 1, 1))
        np.testing.assert_array_equal(out.data, x.data)

    def test_forward_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 5, 4, 4))
        w = rng.standard_normal((3, 2, 2, 2, 2))
        b = rng.standard_normal(3)
        out = T.conv3d(Tensor(x), Tensor(w), Tensor(b), (1, 2, 2))
        expected = conv3d_loop(x, w, b, (1, 2, 2))
        assert np.max(rel_err(out.data, expected)) < 1e-10

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        xd = rng.standard_normal((1, 2, 5, 4, 4))
        wd = rng.standard_normal((3, 2, 2, 2, 2))
        bd = rng.standard_normal(3)
        wt = rng.standard_normal((1, 3, 4, 2, 2))
        x, w, b = Tensor(xd, True), Tensor(wd, True), Tensor(bd, True)
        loss = T.tsum(T.mul(T.conv3d(x, w, b, (1, 2, 2)), Tensor(wt)))
        loss.backward()
        for holder in (x, w, b):
            def f():
                # oracle path: loop convolution, same weighting
                return (conv3d_loop(xd, wd, bd, (1, 2, 2)) * wt).sum()
            fd = finite_diff_grad(f, holder.data)
            assert np.max(rel_err(holder.grad, fd)) < 1e-6

    def test_kernel_too_large_names_axis(self):
        x = Tensor(np.ones((1, 1, 2, 2, 2)))
        w = Tensor(np.ones((1, 1, 3, 1, 1)))
        with pytest.raises(ShapeError, match="time"):
            T.conv3d(x, w, Tensor(np.zeros(1)), (1, 1, 1))

    def test_channel_mismatch(self):
        x = Tensor(np.ones((1, 2, 2, 2, 2)))
        w = Tensor(np.ones((1, 3, 1, 1, 1)))
        with pytest.raises(ShapeError, match="channels"):
            T.conv3d(x, w, Tensor(np.zeros(1)), (1, 1, 1))


class TestBatchNorm:
    def test_constant_input_goes_to_zero(self):
        x = Tensor(np.full((4, 3, 2), 7.0))
        out = T.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                           BatchNormState(3))
        assert np.allclose(out.data, 0.0)

    def test_affine_contract(self):
        rng = np.random.default_rng(4)
        xd = rng.standard_normal((8, 3))
        state = BatchNormState(3)
        base = T.batch_norm(Tensor(xd), Tensor(np.ones(3)), Tensor(np.zeros(3)), state)
        out = T.batch_norm(Tensor(xd), Tensor(2 * np.ones(3)), Tensor(3 * np.ones(3)),
                           BatchNormState(3))
        np.testing.assert_allclose(out.data, 2 * base.data + 3, rtol=1e-12)

    def test_normalizes_batch(self):
        rng = np.random.default_rng(5)
        xd = 3 + 2 * rng.standard_normal((64, 4, 5))
        out = T.batch_norm(Tensor(xd), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                           BatchNormState(4))
        assert np.allclose(out.data.mean(axis=(0, 2)), 0, atol=1e-10)
        assert np.allclose(out.data.var(axis=(0, 2)), 1, atol=1e-4)

    def test_running_stats_update_and_inference(self):
        rng = np.random.default_rng(6)
        xd = rng.standard_normal((16, 2))
        state = BatchNormState(2)
        T.batch_norm(Tensor(xd), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                     momentum=0.9)
        expected_mean = 0.9 * 0 + 0.1 * xd.mean(axis=0)
        np.testing.assert_allclose(state.running_mean, expected_mean, rtol=1e-12)
        out = T.batch_norm(Tensor(xd), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                           training=False)
        expected = (xd - state.running_mean) / np.sqrt(state.running_var + 1e-5)
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="batch size"):
            T.batch_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), BatchNormState(2))

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(7)
        xd = rng.standard_normal((6, 3, 2))
        gd = rng.standard_normal(3)
        bd = rng.standard_normal(3)
        wt = rng.standard_normal((6, 3, 2))
        x, gm, bt = Tensor(xd, True), Tensor(gd, True), Tensor(bd, True)
        loss = T.tsum(T.mul(
            T.batch_norm(x, gm, bt, BatchNormState(3)), Tensor(wt)))
        loss.backward()
        for holder in (x, gm, bt):
            def f(holder=holder):
                state = BatchNormState(3)
                mean = xd.mean(axis=(0, 2))
                var = xd.var(axis=(0, 2))
                xh = (xd - mean[None, :, None]) / np.sqrt(var + 1e-5)[None, :, None]
                return ((gd[None, :, None] * xh + bd[None, :, None]) * wt).sum()
            fd = finite_diff_grad(f, holder.data, h=1e-6)
            errs = rel_err(holder.grad, fd)
            assert np.max(errs) < 1e-4


class TestActivations:
    def test_elu_closed_form(self):
        out = T.elu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_allclose(out.data, [np.exp(-1) - 1, 0.0, 2.0], rtol=1e-12)

    def test_sigmoid_values(self):
        out = T.sigmoid(Tensor(np.array([0.0, 700.0, -700.0])))
        assert out.data[0] == 0.5
        assert np.all(np.isfinite(out.data))
        assert out.data[1] > 1 - 1e-12 and out.data[2] < 1e-12

    @pytest.mark.parametrize("op", [T.elu, T.sigmoid, T.relu, T.exp])
    def test_gradients(self, op):
        rng = np.random.default_rng(8)
        xd = rng.standard_normal(20) * 2
        x = Tensor(xd, True)
        loss = T.tsum(op(x))
        loss.backward()

        def f():
            return T.tsum(op(Tensor(xd))).item()

        fd = finite_diff_grad(f, xd)
        assert np.max(rel_err(x.grad, fd)) < 1e-6


class TestPooling:
    def test_temporal_average(self):
        x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 4, 1, 1))
        out = T.avg_pool3d(x, (2, 1, 1))
        np.testing.assert_array_equal(out.data.ravel(), [1.5, 3.5])

    def test_global_constant(self):
        out = T.global_avg_pool(Tensor(np.full((2, 3, 4, 5), 2.5)))
        assert out.shape == (2, 3)
        np.testing.assert_array_equal(out.data, np.full((2, 3), 2.5))

    def test_remainder_truncated(self):
        x = Tensor(np.arange(5, dtype=float).reshape(1, 1, 5, 1, 1))
        out = T.avg_pool3d(x, (2, 1, 1))
        np.testing.assert_array_equal(out.data.ravel(), [0.5, 2.5])

    def test_zero_window_rejected(self):
        with pytest.raises(ShapeError):
            T.avg_pool3d(Tensor(np.ones((1, 1, 2, 2, 2))), (0, 1, 1))

    def test_avg_pool_gradient(self):
        rng = np.random.default_rng(9)
        xd = rng.standard_normal((1, 2, 5, 3, 2))
        x = Tensor(xd, True)
        loss = T.tsum(T.mul(T.avg_pool3d(x, (2, 1, 2)), 3.0))
        loss.backward()

        def f():
            return T.tsum(T.mul(T.avg_pool3d(Tensor(xd), (2, 1, 2)), 3.0)).item()

        fd = finite_diff_grad(f, xd)
        assert np.max(rel_err(x.grad, fd)) < 1e-6


class TestDropout:
    def test_p_zero_identity(self):
        xd = np.arange(6, dtype=float)
        out = T.dropout(Tensor(xd), 0.0, True, np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, xd)

    def test_inference_identity(self):
        xd = np.arange(6, dtype=float)
        out = T.dropout(Tensor(xd), 0.9, False, np.random.default_rng(0))
        np.testing.assert_array_equal(out.data, xd)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones(3)), 1.0, True, np.random.default_rng(0))

    def test_monte_carlo(self):
        rng = np.random.default_rng(10)
        xd = np.ones(1_000_000)
        out = T.dropout(Tensor(xd), 0.5, True, rng)
        zero_frac = np.mean(out.data == 0.0)
        assert abs(zero_frac - 0.5) < 0.003
        assert abs(out.data.mean() - 1.0) < 0.01


class TestFullyConnected:
    def test_identity(self):
        xd = np.arange(6, dtype=float).reshape(2, 3)
        out = T.fully_connected(Tensor(xd), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, xd)

    def test_hand_arithmetic(self):
        out = T.fully_connected(Tensor([[1.0, 2.0]]),
                                Tensor([[3.0], [4.0]]), Tensor([5.0]))
        assert out.data.flat[0] == 16.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            T.fully_connected(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))),
                              Tensor(np.zeros(2)))

    def test_gradient(self):
        rng = np.random.default_rng(11)
        xd = rng.standard_normal((3, 4))
        wd = rng.standard_normal((4, 2))
        bd = rng.standard_normal(2)
        x, w, b = Tensor(xd, True), Tensor(wd, True), Tensor(bd, True)
        loss = T.tsum(T.mul(T.fully_connected(x, w, b), 2.0))
        loss.backward()
        for holder in (x, w, b):
            def f():
                return 2.0 * (xd @ wd + bd).sum()
            fd = finite_diff_grad(f, holder.data)
            assert np.max(rel_err(holder.grad, fd)) < 1e-6


class TestBroadcastOps:
    def test_identities(self):
        xd = np.arange(4, dtype=float)
        assert np.array_equal((Tensor(xd) + 0.0).data, xd)
        assert np.array_equal((Tensor(xd) * 1.0).data, xd)

    def test_broadcast_shape(self):
        x = Tensor(np.ones((2, 3, 4, 2, 2)))
        w = Tensor(np.ones((2, 3, 1, 1, 1)) * 2)
        assert T.mul(x, w).shape == (2, 3, 4, 2, 2)

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_broadcast_grad_matches_loop_oracle(self):
        rng = np.random.default_rng(12)
        xd = rng.standard_normal((2, 3, 4))
        yd = rng.standard_normal((2, 3, 1))
        x, y = Tensor(xd, True), Tensor(yd, True)
        loss = T.tsum(T.mul(x, y))
        loss.backward()
        # loop oracle: accumulate per-element products
        gx = np.zeros_like(xd)
        gy = np.zeros_like(yd)
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    gx[i, j, k] += yd[i, j, 0]
                    gy[i, j, 0] += xd[i, j, k]
        assert np.max(np.abs(x.grad - gx)) < 1e-12
        assert np.max(np.abs(y.grad - gy)) < 1e-12

    def test_broadcast_add_grad(self):
        rng = np.random.default_rng(13)
        xd = rng.standard_normal((3, 4))
        yd = rng.standard_normal(4)
        x, y = Tensor(xd, True), Tensor(yd, True)
        T.tsum(T.add(x, y)).backward()
        assert np.max(np.abs(x.grad - 1)) < 1e-12
        assert np.max(np.abs(y.grad - 3)) < 1e-12


class TestBackward:
    def test_sum_grad_ones(self):
        x = Tensor(np.arange(5, dtype=float), True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_grad(self):
        xd = np.array([1.0, -2.0, 3.0])
        x = Tensor(xd, True)
        T.tsum(T.mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2 * xd, rtol=1e-12)

    def test_multi_use_accumulates(self):
        x = Tensor(np.array([2.0]), True)
        y = T.add(T.mul(x, x), x)  # x^2 + x -> grad 2x + 1
        T.tsum(y).backward()
        assert x.grad[0] == 5.0

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            Tensor(np.ones(3), True).backward()

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(42)
            x = Tensor(rng.standard_normal((4, 3)), True)
            out = T.dropout(T.sigmoid(x), 0.3, True, np.random.default_rng(7))
            T.tsum(out).backward()
            return out.data.copy(), x.grad.copy()

        a1, g1 = run()
        a2, g2 = run()
        assert np.array_equal(a1, a2)
        assert np.array_equal(g1, g2)


class TestLogClip:
    def test_log_grad(self):
        xd = np.array([0.5, 1.0, 3.0])
        x = Tensor(xd, True)
        T.tsum(T.log(x)).backward()
        np.testing.assert_allclose(x.grad, 1 / xd, rtol=1e-12)

    def test_clip_blocks_grad_outside(self):
        x = Tensor(np.array([-1.0, 0.5, 2.0]), True)
        T.tsum(T.clip(x, 0.0, 1.0)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])
