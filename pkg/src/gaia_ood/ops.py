"""CNN operator set: forward kernels, shape checks, and backward rules.

Layout convention is NCHW for activations and OIHW for conv kernels. Only
activation gradients are ever needed (weights are fixed at inference), so
backward rules return gradients for activation inputs alone.

Batched conv/linear kernels loop over the batch axis on purpose: every
sample goes through the exact same reduction order regardless of batch
size, which is what makes batch scoring bit-identical to per-sample runs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import BACKWARD_RULES, Tape
from .errors import ConfigurationError, DataError
from .tensor import Tensor, as_tensor, check_finite


def _pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        v = (int(v), int(v))
    a, b = int(v[0]), int(v[1])
    if a < 0 or b < 0:
        raise ConfigurationError(f"{name} must be non-negative, got {(a, b)}")
    return a, b


def conv2d_output_hw(h: int, w: int, kernel, stride, padding) -> tuple[int, int]:
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"window {kernel} with stride {stride}, padding {padding} does not fit "
            f"input {h}x{w}"
        )
    return oh, ow


# ---------------------------------------------------------------------------
# forward kernels (dtype-generic: used in float32 by the engine and in
# float64 by the finite-difference shadow evaluation)
# ---------------------------------------------------------------------------


def k_conv2d(x, kernel, bias, stride, padding):
    ph, pw = padding
    kh, kw = kernel.shape[2], kernel.shape[3]
    sh, sw = stride
    rows = []
    for n in range(x.shape[0]):
        xp = np.pad(x[n], ((0, 0), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        y = np.einsum("ihwkl,oikl->ohw", win, kernel)
        rows.append(y + bias[:, None, None])
    return np.stack(rows)


def k_batchnorm(x, gamma, beta, mean, var, eps):
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return x * scale[:, None, None] + shift[:, None, None]


def k_relu(x):
    return np.maximum(x, 0)


def k_max_pool2d(x, kernel, stride, padding):
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return win.max(axis=(4, 5))


def k_avg_pool2d(x, kernel, stride, padding):
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return win.mean(axis=(4, 5))


def k_global_avg_pool(x):
    return x.mean(axis=(2, 3))


def k_residual_add(a, b):
    return a + b


def k_linear(x, weight, bias):
    return np.stack([weight @ x[n] + bias for n in range(x.shape[0])])


def k_channel_scale(x, scale):
    return x * scale[None, :, None, None]


def k_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def k_log_softmax(x):
    t = x - x.max(axis=-1, keepdims=True)
    return t - np.log(np.exp(t).sum(axis=-1, keepdims=True))


def k_flatten(x):
    return x.reshape(x.shape[0], -1)


# ---------------------------------------------------------------------------
# backward rules (gradients w.r.t. activation inputs only)
# ---------------------------------------------------------------------------


def _bw_conv2d(g, ctx):
    kernel, x_shape, stride, padding = ctx
    n_, c, h, w = x_shape
    o, _, kh, kw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    oh, ow = g.shape[2], g.shape[3]
    out = np.zeros((n_, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    for n in range(n_):
        acc = out[n]
        gn = g[n]
        for ky in range(kh):
            for kx in range(kw):
                acc[:, ky : ky + sh * oh : sh, kx : kx + sw * ow : sw] += np.einsum(
                    "ohw,oi->ihw", gn, kernel[:, :, ky, kx]
                )
    return (np.ascontiguousarray(out[:, :, ph : ph + h, pw : pw + w]),)


def _bw_batchnorm(g, ctx):
    (scale,) = ctx
    return (g * scale[None, :, None, None],)


def _bw_relu(g, ctx):
    (mask,) = ctx  # strictly positive inputs; subgradient at 0 is 0
    return (np.where(mask, g, g.dtype.type(0)),)


def k_max_pool_argmax(x, kernel, stride, padding):
    """Flat within-window index of the first maximum (row-major window order)."""
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    return win.reshape(*win.shape[:4], kh * kw).argmax(axis=4)


def _bw_max_pool2d(g, ctx):
    x, kernel, stride, padding = ctx
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    n_, c, h, w = x.shape
    idx = k_max_pool_argmax(x, kernel, stride, padding)
    oh, ow = idx.shape[2], idx.shape[3]
    ni, ci, yi, xi = np.indices((n_, c, oh, ow))
    hy = yi * sh + idx // kw
    wx = xi * sw + idx % kw
    out = np.zeros((n_, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    np.add.at(out, (ni, ci, hy, wx), g)
    return (np.ascontiguousarray(out[:, :, ph : ph + h, pw : pw + w]),)


def _bw_avg_pool2d(g, ctx):
    x_shape, kernel, stride, padding = ctx
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    n_, c, h, w = x_shape
    oh, ow = g.shape[2], g.shape[3]
    gk = g / (kh * kw)
    out = np.zeros((n_, c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    for ky in range(kh):
        for kx in range(kw):
            out[:, :, ky : ky + sh * oh : sh, kx : kx + sw * ow : sw] += gk
    return (np.ascontiguousarray(out[:, :, ph : ph + h, pw : pw + w]),)


def _bw_global_avg_pool(g, ctx):
    (x_shape,) = ctx
    h, w = x_shape[2], x_shape[3]
    return (np.ascontiguousarray(np.broadcast_to((g / (h * w))[:, :, None, None], x_shape)),)


def _bw_residual_add(g, ctx):
    return (g, g)


def _bw_linear(g, ctx):
    (weight,) = ctx
    return (np.stack([g[n] @ weight for n in range(g.shape[0])]),)


def _bw_channel_scale(g, ctx):
    (scale,) = ctx
    s4 = scale[None, :, None, None]
    # exact +0.0 where the channel is disconnected, never -0.0
    return (np.where(s4 != 0, g * s4, g.dtype.type(0)),)


def _bw_softmax(g, ctx):
    (y,) = ctx
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def _bw_log_softmax(g, ctx):
    (y,) = ctx
    return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)


def _bw_flatten(g, ctx):
    (x_shape,) = ctx
    return (g.reshape(x_shape),)


BACKWARD_RULES.update(
    {
        "conv2d": _bw_conv2d,
        "batchnorm": _bw_batchnorm,
        "relu": _bw_relu,
        "max_pool2d": _bw_max_pool2d,
        "avg_pool2d": _bw_avg_pool2d,
        "global_avg_pool": _bw_global_avg_pool,
        "residual_add": _bw_residual_add,
        "linear": _bw_linear,
        "channel_scale": _bw_channel_scale,
        "softmax": _bw_softmax,
        "log_softmax": _bw_log_softmax,
        "flatten": _bw_flatten,
    }
)


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------


def _require_rank(t: Tensor, rank: int, op: str, role: str = "input") -> None:
    if t.ndim != rank:
        raise ConfigurationError(f"{op} {role} must be rank {rank}, got shape {t.shape}")


def conv2d(x, kernel, bias, stride=(1, 1), padding=(0, 0), *, tape: Tape | None = None) -> Tensor:
    """Cross-correlation of an NCHW batch with an OIHW kernel plus bias."""
    x, kernel, bias = as_tensor(x, "input"), as_tensor(kernel, "kernel"), as_tensor(bias, "bias")
    _require_rank(x, 4, "conv2d")
    _require_rank(kernel, 4, "conv2d", "kernel")
    _require_rank(bias, 1, "conv2d", "bias")
    stride = _pair(stride, "stride")
    padding = _pair(padding, "padding")
    if stride[0] < 1 or stride[1] < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if kernel.shape[1] != x.shape[1]:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {kernel.shape[1]}"
        )
    if bias.shape[0] != kernel.shape[0]:
        raise ConfigurationError(
            f"conv2d bias length {bias.shape[0]} != output channels {kernel.shape[0]}"
        )
    conv2d_output_hw(x.shape[2], x.shape[3], kernel.shape[2:], stride, padding)
    y = Tensor(check_finite(k_conv2d(x.data, kernel.data, bias.data, stride, padding), "conv2d"))
    if tape is not None:
        tape.add("conv2d", (x,), y, (kernel.data, x.shape, stride, padding))
    return y


def batchnorm_inference(x, gamma, beta, running_mean, running_var, eps=1e-5, *, tape: Tape | None = None) -> Tensor:
    """Per-channel affine normalization with fixed statistics."""
    x = as_tensor(x, "input")
    gamma, beta = as_tensor(gamma, "gamma"), as_tensor(beta, "beta")
    mean, var = as_tensor(running_mean, "running_mean"), as_tensor(running_var, "running_var")
    _require_rank(x, 4, "batchnorm")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", mean), ("running_var", var)):
        if t.shape != (c,):
            raise ConfigurationError(f"batchnorm {name} shape {t.shape} != ({c},)")
    if np.any(var.data < 0):
        raise DataError("batchnorm running_var has negative entries")
    if eps < 0 or np.any(var.data + np.float32(eps) <= 0):
        raise ConfigurationError(f"batchnorm var+eps must be positive (eps={eps})")
    y = Tensor(check_finite(k_batchnorm(x.data, gamma.data, beta.data, mean.data, var.data, np.float32(eps)), "batchnorm"))
    if tape is not None:
        scale = gamma.data / np.sqrt(var.data + np.float32(eps))
        tape.add("batchnorm", (x,), y, (scale,))
    return y


def relu(x, *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    y = Tensor(k_relu(x.data))
    if tape is not None:
        tape.add("relu", (x,), y, (x.data > 0,))
    return y


def max_pool2d(x, kernel, stride=None, padding=(0, 0), *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    _require_rank(x, 4, "max_pool2d")
    kernel = _pair(kernel, "kernel")
    stride = kernel if stride is None else _pair(stride, "stride")
    padding = _pair(padding, "padding")
    if padding[0] >= kernel[0] or padding[1] >= kernel[1]:
        raise ConfigurationError(f"pool padding {padding} must be smaller than kernel {kernel}")
    conv2d_output_hw(x.shape[2], x.shape[3], kernel, stride, padding)
    y = Tensor(check_finite(k_max_pool2d(x.data, kernel, stride, padding), "max_pool2d"))
    if tape is not None:
        tape.add("max_pool2d", (x,), y, (x.data, kernel, stride, padding))
    return y


def avg_pool2d(x, kernel, stride=None, padding=(0, 0), *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    _require_rank(x, 4, "avg_pool2d")
    kernel = _pair(kernel, "kernel")
    stride = kernel if stride is None else _pair(stride, "stride")
    padding = _pair(padding, "padding")
    if padding[0] >= kernel[0] or padding[1] >= kernel[1]:
        raise ConfigurationError(f"pool padding {padding} must be smaller than kernel {kernel}")
    conv2d_output_hw(x.shape[2], x.shape[3], kernel, stride, padding)
    y = Tensor(check_finite(k_avg_pool2d(x.data, kernel, stride, padding), "avg_pool2d"))
    if tape is not None:
        tape.add("avg_pool2d", (x,), y, (x.shape, kernel, stride, padding))
    return y


def global_avg_pool(x, *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    _require_rank(x, 4, "global_avg_pool")
    y = Tensor(check_finite(k_global_avg_pool(x.data), "global_avg_pool"))
    if tape is not None:
        tape.add("global_avg_pool", (x,), y, (x.shape,))
    return y


def residual_add(a, b, *, tape: Tape | None = None) -> Tensor:
    a, b = as_tensor(a, "a"), as_tensor(b, "b")
    if a.shape != b.shape:
        raise ConfigurationError(f"residual_add shape mismatch: {a.shape} vs {b.shape}")
    y = Tensor(check_finite(k_residual_add(a.data, b.data), "residual_add"))
    if tape is not None:
        tape.add("residual_add", (a, b), y, ())
    return y


def linear(x, weight, bias, *, tape: Tape | None = None) -> Tensor:
    """Affine map of an (N, F) batch by an (O, F) weight and (O,) bias."""
    x, weight, bias = as_tensor(x, "input"), as_tensor(weight, "weight"), as_tensor(bias, "bias")
    _require_rank(x, 2, "linear")
    _require_rank(weight, 2, "linear", "weight")
    _require_rank(bias, 1, "linear", "bias")
    if weight.shape[1] != x.shape[1]:
        raise ConfigurationError(
            f"linear feature mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    if bias.shape[0] != weight.shape[0]:
        raise ConfigurationError(
            f"linear bias length {bias.shape[0]} != output features {weight.shape[0]}"
        )
    y = Tensor(check_finite(k_linear(x.data, weight.data, bias.data), "linear"))
    if tape is not None:
        tape.add("linear", (x,), y, (weight.data,))
    return y


def channel_scale(x, scale, *, tape: Tape | None = None) -> Tensor:
    """Multiply each channel by a fixed scalar (zero disconnects the channel)."""
    x, scale = as_tensor(x, "input"), as_tensor(scale, "scale")
    _require_rank(x, 4, "channel_scale")
    _require_rank(scale, 1, "channel_scale", "scale")
    if scale.shape[0] != x.shape[1]:
        raise ConfigurationError(
            f"channel_scale length {scale.shape[0]} != channels {x.shape[1]}"
        )
    y = Tensor(check_finite(k_channel_scale(x.data, scale.data), "channel_scale"))
    if tape is not None:
        tape.add("channel_scale", (x,), y, (scale.data,))
    return y


def softmax(x, *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    _require_rank(x, 2, "softmax")
    y = Tensor(check_finite(k_softmax(x.data), "softmax"))
    if tape is not None:
        tape.add("softmax", (x,), y, (y.data,))
    return y


def log_softmax(x, *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    _require_rank(x, 2, "log_softmax")
    y = Tensor(check_finite(k_log_softmax(x.data), "log_softmax"))
    if tape is not None:
        tape.add("log_softmax", (x,), y, (y.data,))
    return y


def flatten(x, *, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x, "input")
    if x.ndim < 2:
        raise ConfigurationError(f"flatten input must have a batch axis, got shape {x.shape}")
    y = Tensor(k_flatten(x.data))
    if tape is not None:
        tape.add("flatten", (x,), y, (x.shape,))
    return y
