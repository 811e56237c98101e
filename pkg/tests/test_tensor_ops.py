"""Forward operator contracts against trivial cases and loop oracles."""

import numpy as np
import pytest

from gaia_ood import ops
from gaia_ood.errors import ConfigurationError, DataError
from gaia_ood.tensor import Tensor, as_tensor


def conv2d_loop_oracle(x, k, b, stride, pad):
    """Six-nested-loop cross-correlation reference."""
    n_, ci, h, w = x.shape
    o, _, kh, kw = k.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n_, o, oh, ow), dtype=np.float64)
    for n in range(n_):
        for oc in range(o):
            for y in range(oh):
                for xcol in range(ow):
                    acc = 0.0
                    for ic in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += float(xp[n, ic, y * sh + ky, xcol * sw + kx]) * float(k[oc, ic, ky, kx])
                    out[n, oc, y, xcol] = acc + float(b[oc])
    return out


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
        y = ops.conv2d(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
        assert np.array_equal(y.data, x)

    def test_zero_input_gives_bias(self):
        k = np.random.default_rng(1).standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = np.array([1.5, -2.0, 0.25], np.float32)
        y = ops.conv2d(np.zeros((2, 2, 5, 5), np.float32), k, b, padding=(1, 1))
        for oc in range(3):
            assert np.all(y.data[:, oc] == b[oc])

    @pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 2), (1, 1)), ((1, 2), (1, 0))])
    def test_matches_loop_oracle(self, stride, pad):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        got = ops.conv2d(x, k, b, stride, pad).data
        want = conv2d_loop_oracle(x, k, b, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)

    def test_channel_mismatch_reports_dims(self):
        with pytest.raises(ConfigurationError, match="2.*kernel expects 3"):
            ops.conv2d(np.zeros((1, 2, 4, 4), np.float32),
                       np.zeros((1, 3, 3, 3), np.float32), np.zeros(1, np.float32))

    def test_window_too_large(self):
        with pytest.raises(ConfigurationError, match="does not fit"):
            ops.conv2d(np.zeros((1, 1, 2, 2), np.float32),
                       np.zeros((1, 1, 5, 5), np.float32), np.zeros(1, np.float32))

    def test_overflow_surfaces_as_data_error(self):
        x = np.full((1, 1, 2, 2), 1e30, np.float32)
        k = np.full((1, 1, 2, 2), 1e30, np.float32)
        with pytest.raises(DataError, match="conv2d"):
            ops.conv2d(x, k, np.zeros(1, np.float32))


class TestBatchnorm:
    def test_identity_parameters(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        ones, zeros = np.ones(3, np.float32), np.zeros(3, np.float32)
        y = ops.batchnorm_inference(x, ones, zeros, zeros, ones, eps=0.0)
        assert np.array_equal(y.data, x)

    def test_centered_input_returns_beta(self):
        x = np.full((1, 1, 2, 2), 2.0, np.float32)
        y = ops.batchnorm_inference(
            x, np.array([5.0], np.float32), np.array([3.0], np.float32),
            np.array([2.0], np.float32), np.array([7.0], np.float32), eps=0.0)
        assert np.allclose(y.data, 3.0)

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        gamma = rng.standard_normal(3).astype(np.float32)
        beta = rng.standard_normal(3).astype(np.float32)
        mean = rng.standard_normal(3).astype(np.float32)
        var = rng.random(3).astype(np.float32) + 0.1
        eps = 1e-5
        got = ops.batchnorm_inference(x, gamma, beta, mean, var, eps).data
        for idx in np.ndindex(*x.shape):
            c = idx[1]
            want = float(gamma[c]) * (float(x[idx]) - float(mean[c])) / np.sqrt(float(var[c]) + eps) + float(beta[c])
            assert abs(float(got[idx]) - want) < 1e-5

    def test_negative_variance_is_data_error(self):
        with pytest.raises(DataError, match="negative"):
            ops.batchnorm_inference(
                np.zeros((1, 1, 2, 2), np.float32), np.ones(1, np.float32),
                np.zeros(1, np.float32), np.zeros(1, np.float32),
                np.array([-1.0], np.float32))


class TestElementwiseAndPooling:
    def test_relu(self):
        y = ops.relu(np.array([[-1.0, 0.0, 2.0]], np.float32))
        assert np.array_equal(y.data, [[0.0, 0.0, 2.0]])

    def test_log_softmax_uniform(self):
        for c in (2, 5, 10):
            y = ops.log_softmax(np.zeros((1, c), np.float32))
            np.testing.assert_allclose(y.data, -np.log(c), rtol=1e-6)

    def test_log_softmax_large_magnitude_is_finite(self):
        x = np.array([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]], np.float32)
        y = ops.log_softmax(x)
        assert np.all(np.isfinite(y.data))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        y = ops.softmax(rng.standard_normal((4, 7)).astype(np.float32))
        np.testing.assert_allclose(y.data.sum(axis=1), 1.0, rtol=1e-5)

    def test_max_pool_2x2(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
        y = ops.max_pool2d(x, (2, 2))
        assert y.data.reshape(()) == 4.0

    def test_max_pool_matches_loop(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        y = ops.max_pool2d(x, (2, 2), (2, 2)).data
        for n in range(2):
            for c in range(3):
                for i in range(3):
                    for j in range(3):
                        want = x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
                        assert y[n, c, i, j] == want

    def test_avg_pool_matches_loop(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 2, 4, 4)).astype(np.float32)
        y = ops.avg_pool2d(x, (2, 2)).data
        for n in range(2):
            for c in range(2):
                for i in range(2):
                    for j in range(2):
                        want = x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
                        np.testing.assert_allclose(y[n, c, i, j], want, rtol=1e-5, atol=1e-7)

    def test_global_avg_pool(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
        y = ops.global_avg_pool(x)
        np.testing.assert_allclose(y.data, x.mean(axis=(2, 3)), rtol=1e-6)

    def test_pool_padding_must_be_smaller_than_kernel(self):
        with pytest.raises(ConfigurationError, match="padding"):
            ops.max_pool2d(np.zeros((1, 1, 4, 4), np.float32), (2, 2), (2, 2), (2, 2))


class TestLinearResidualScale:
    def test_linear_matches_matmul(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 5)).astype(np.float32)
        w = rng.standard_normal((4, 5)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        y = ops.linear(x, w, b)
        np.testing.assert_allclose(y.data, x @ w.T + b, rtol=1e-5, atol=1e-6)

    def test_linear_shape_mismatch(self):
        with pytest.raises(ConfigurationError, match="feature mismatch"):
            ops.linear(np.zeros((1, 5), np.float32), np.zeros((4, 6), np.float32),
                       np.zeros(4, np.float32))

    def test_residual_add(self):
        a = np.ones((1, 2, 2, 2), np.float32)
        b = np.full((1, 2, 2, 2), 2.0, np.float32)
        assert np.all(ops.residual_add(a, b).data == 3.0)

    def test_residual_shape_mismatch(self):
        with pytest.raises(ConfigurationError, match="shape mismatch"):
            ops.residual_add(np.zeros((1, 2, 2, 2), np.float32),
                             np.zeros((1, 3, 2, 2), np.float32))

    def test_channel_scale_disconnects(self):
        x = np.ones((1, 3, 2, 2), np.float32)
        y = ops.channel_scale(x, np.array([1.0, 0.0, 2.0], np.float32))
        assert np.all(y.data[:, 0] == 1.0)
        assert np.all(y.data[:, 1] == 0.0)
        assert np.all(y.data[:, 2] == 2.0)

    def test_flatten_round_trip_shape(self):
        x = np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2)
        y = ops.flatten(x)
        assert y.shape == (2, 12)
        assert np.array_equal(y.data.reshape(2, 3, 2, 2), x)


class TestTensorType:
    def test_non_finite_input_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            as_tensor(np.array([np.nan], np.float32))

    def test_as_tensor_casts(self):
        t = as_tensor([1.0, 2.0])
        assert isinstance(t, Tensor)
        assert t.data.dtype == np.float32

    def test_shape_length_invariant(self):
        t = as_tensor(np.zeros((2, 3), np.float32))
        assert int(np.prod(t.shape)) == t.size
