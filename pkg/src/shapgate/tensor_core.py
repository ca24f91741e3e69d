"""1-D numeric kernels with exact adjoints.

Feature maps are numpy arrays shaped ``(channels, length)`` or
``(batch, channels, length)``; every kernel returns the rank it was given.
Computation happens in the dtype of the inputs (float32 unless the caller
opts into float64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, ValidationError

CLASS_COUNT = 3


@dataclass
class ConvParams:
    """Weights of one convolution, stored ``(out_channels, in_channels, kernel)``."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        if self.weights.ndim != 3:
            raise ShapeError("conv weights rank", 3, self.weights.ndim)
        if self.kernel_size % 2 != 1:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.bias.shape != (self.out_channels,):
            raise ShapeError("conv bias shape", (self.out_channels,), self.bias.shape)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def astype(self, dtype) -> "ConvParams":
        return ConvParams(self.weights.astype(dtype), self.bias.astype(dtype), self.stride)


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError("feature map rank", "2 or 3", x.ndim)


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def output_length(length: int, stride: int) -> int:
    return -(-length // stride)


def same_padding(length: int, kernel_size: int, stride: int) -> tuple[int, int]:
    """Left/right zero padding giving ``ceil(length / stride)`` outputs."""
    n_out = output_length(length, stride)
    total = max((n_out - 1) * stride + kernel_size - length, 0)
    return total // 2, total - total // 2


def _pad_same(x, kernel_size, stride):
    left, right = same_padding(x.shape[2], kernel_size, stride)
    return np.pad(x, ((0, 0), (0, 0), (left, right))), left


def _correlate(xp, w, stride, n_out):
    """``y[b, o, j] = sum_{c, k} w[o, c, k] * xp[b, c, j * stride + k]`` on padded input."""
    b, c, _ = xp.shape
    n_o, _, k_size = w.shape
    if stride == 1:
        # one matmul for all taps, then shift-and-add
        z = np.matmul(w.transpose(2, 0, 1).reshape(k_size * n_o, c), xp)
        z = z.reshape(b, k_size, n_o, -1)
        y = z[:, 0, :, :n_out].copy()
        for k in range(1, k_size):
            y += z[:, k, :, k:k + n_out]
        return y
    win = sliding_window_view(xp, k_size, axis=-1)[:, :, ::stride][:, :, :n_out]
    cols = win.transpose(0, 2, 1, 3).reshape(b, n_out, c * k_size)
    return (cols @ w.reshape(n_o, -1).T).transpose(0, 2, 1)


def _correlate_input_adjoint(g, w, stride, padded_length):
    """Adjoint of ``_correlate`` w.r.t. the padded input."""
    b, _, n_out = g.shape
    _, c, k_size = w.shape
    u = np.matmul(w.transpose(2, 1, 0).reshape(k_size * c, -1), g).reshape(b, k_size, c, n_out)
    dxp = np.zeros((b, c, padded_length), dtype=g.dtype)
    span = stride * (n_out - 1) + 1
    for k in range(k_size):
        dxp[:, :, k:k + span:stride] += u[:, k]
    return dxp


def _correlate_weight_adjoint(xp, g, stride, k_size):
    """Adjoint of ``_correlate`` w.r.t. the weights."""
    n_out = g.shape[2]
    span = stride * (n_out - 1) + 1
    taps = [np.matmul(g, xp[:, :, k:k + span:stride].transpose(0, 2, 1)).sum(axis=0)
            for k in range(k_size)]
    return np.stack(taps, axis=-1)


def _check_channels(x, p):
    if x.shape[1] != p.in_channels:
        raise ShapeError("conv1d input channels", p.in_channels, x.shape[1])


def conv1d(x, p: ConvParams):
    """Strided convolution with symmetric zero "same" padding.

    Output length is ``ceil(L / stride)``.
    """
    x, squeeze = _batched(x)
    _check_channels(x, p)
    xp, _ = _pad_same(x, p.kernel_size, p.stride)
    w = p.weights.astype(x.dtype, copy=False)
    y = _correlate(xp, w, p.stride, output_length(x.shape[2], p.stride))
    y += p.bias.astype(x.dtype, copy=False)[:, None]
    return _unbatch(y, squeeze)


def conv1d_adjoint(x, p: ConvParams, d_out):
    """Gradients of ``sum(d_out * conv1d(x, p))``.

    Returns ``(d_input, d_weights, d_bias)``.
    """
    x, squeeze = _batched(x)
    d_out, _ = _batched(d_out)
    _check_channels(x, p)
    expected = (x.shape[0], p.out_channels, output_length(x.shape[2], p.stride))
    if d_out.shape != expected:
        raise ShapeError("conv1d_adjoint d_output shape", expected, d_out.shape)
    d_out = d_out.astype(x.dtype, copy=False)
    xp, left = _pad_same(x, p.kernel_size, p.stride)
    w = p.weights.astype(x.dtype, copy=False)
    d_w = _correlate_weight_adjoint(xp, d_out, p.stride, p.kernel_size)
    d_b = d_out.sum(axis=(0, 2))
    d_xp = _correlate_input_adjoint(d_out, w, p.stride, xp.shape[2])
    return _unbatch(d_xp[:, :, left:left + x.shape[2]], squeeze), d_w, d_b


def transposed_length_range(length: int, kernel_size: int, stride: int) -> tuple[int, int]:
    return stride * (length - 1) + 1, stride * length + kernel_size


def transposed_conv1d(x, p: ConvParams, target_length: int):
    """Up-sampling transposed convolution cropped/padded to ``target_length``.

    ``p.weights`` is ``(out, in, K)`` like any other layer. With zero bias this
    is the exact adjoint of ``conv1d`` using weights ``p.weights.transpose(1, 0, 2)``
    on a ``target_length`` input.
    """
    x, squeeze = _batched(x)
    _check_channels(x, p)
    lo, hi = transposed_length_range(x.shape[2], p.kernel_size, p.stride)
    if not lo <= target_length <= hi:
        raise ValidationError(
            f"target_length {target_length} infeasible for input length {x.shape[2]} "
            f"with stride {p.stride}; must lie in [{lo}, {hi}]")
    natural = min(target_length, p.stride * x.shape[2])
    left, right = same_padding(natural, p.kernel_size, p.stride)
    q = p.weights.transpose(1, 0, 2).astype(x.dtype, copy=False)
    yp = _correlate_input_adjoint(x, q, p.stride, natural + left + right)
    y = yp[:, :, left:left + natural]
    if natural < target_length:
        y = np.pad(y, ((0, 0), (0, 0), (0, target_length - natural)))
    else:
        y = y.copy()
    y += p.bias.astype(x.dtype, copy=False)[:, None]
    return _unbatch(y, squeeze)


def transposed_conv1d_adjoint(x, p: ConvParams, d_out):
    """Gradients of ``sum(d_out * transposed_conv1d(x, p, d_out.shape[-1]))``.

    Returns ``(d_input, d_weights, d_bias)``.
    """
    x, squeeze = _batched(x)
    d_out, _ = _batched(d_out)
    _check_channels(x, p)
    if d_out.shape[:2] != (x.shape[0], p.out_channels):
        raise ShapeError("transposed_conv1d_adjoint d_output shape",
                         (x.shape[0], p.out_channels, "T"), d_out.shape)
    d_out = d_out.astype(x.dtype, copy=False)
    natural = min(d_out.shape[2], p.stride * x.shape[2])
    gp, _ = _pad_same(d_out[:, :, :natural], p.kernel_size, p.stride)
    q = p.weights.transpose(1, 0, 2).astype(x.dtype, copy=False)
    d_x = _correlate(gp, q, p.stride, x.shape[2])
    d_q = _correlate_weight_adjoint(gp, x, p.stride, p.kernel_size)
    d_b = d_out.sum(axis=(0, 2))
    return _unbatch(d_x, squeeze), d_q.transpose(1, 0, 2), d_b


def relu(x):
    return np.maximum(x, 0)


def relu_adjoint(x, d_out):
    # subgradient at 0 is 0
    return np.where(x > 0, d_out, 0).astype(d_out.dtype, copy=False)


def softmax_classes(logits):
    """Per-sample softmax over the (N, P, S) class axis."""
    z = np.asarray(logits)
    if z.ndim not in (2, 3) or z.shape[-2] != CLASS_COUNT:
        raise ShapeError("softmax_classes channels", CLASS_COUNT,
                         z.shape[-2] if z.ndim >= 2 else z.shape)
    e = np.exp(z - z.max(axis=-2, keepdims=True))
    return e / e.sum(axis=-2, keepdims=True)


def softmax_adjoint(probs, d_out):
    """Jacobian-vector product of ``softmax_classes`` given its output."""
    return probs * (d_out - (probs * d_out).sum(axis=-2, keepdims=True))


def interp_linear(s, target_length: int):
    """Resample a series onto ``target_length`` evenly spaced points, endpoints kept."""
    s = np.asarray(s)
    if s.ndim != 1 or s.size < 1:
        raise ShapeError("interp_linear series", "1-D, length >= 1", s.shape)
    if target_length < 1:
        raise ValidationError(f"target_length must be >= 1, got {target_length}")
    if s.size == target_length:
        return s.copy()
    if s.size == 1:
        return np.full(target_length, s[0], dtype=s.dtype)
    pos = np.linspace(0.0, s.size - 1, target_length)
    return np.interp(pos, np.arange(s.size), s).astype(s.dtype, copy=False)
