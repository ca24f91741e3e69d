"""Slow, loop-based reference implementations used as test oracles."""

import numpy as np


def naive_conv(x, w, b, stride):
    """Symmetric zero "same" padding, ceil(L/s) outputs, left pad = total // 2."""
    c, length = x.shape
    k = w.shape[2]
    n_out = -(-length // stride)
    total = max((n_out - 1) * stride + k - length, 0)
    xp = np.zeros((c, length + total))
    xp[:, total // 2:total // 2 + length] = x
    y = np.zeros((w.shape[0], n_out))
    for o in range(w.shape[0]):
        for j in range(n_out):
            y[o, j] = b[o] + sum(w[o, ci, kk] * xp[ci, j * stride + kk]
                                 for ci in range(c) for kk in range(k))
    return y


def naive_tconv(x, w, b, stride, target):
    """Scatter form: each input sample j adds w[:, :, k] * x[:, j] at j*s + k - left."""
    n_out, n_in, k = w.shape
    natural = min(target, stride * x.shape[1])
    total = max((-(-natural // stride) - 1) * stride + k - natural, 0)
    left = total // 2
    y = np.zeros((n_out, target))
    for j in range(x.shape[1]):
        for kk in range(k):
            t = j * stride + kk - left
            if 0 <= t < natural:
                y[:, t] += w[:, :, kk] @ x[:, j]
    return y + b[:, None]


def naive_forward(model, x):
    """U-Net forward written out level by level from the layer names."""
    L = model.layers
    n = model.config.stages
    relu = lambda a: np.maximum(a, 0)  # noqa: E731
    W = {k: (p.weights.astype(np.float64), p.bias.astype(np.float64), p.stride) for k, p in L.items()}
    enc = [relu(naive_conv(x, *W["enc0"]))]
    for i in range(1, n + 1):
        enc.append(relu(naive_conv(enc[-1], *W[f"down{i}"])))
    h = enc[n]
    for i in range(n, 0, -1):
        w, b, s = W[f"up{i}"]
        h = relu(naive_tconv(h, w, b, s, enc[i - 1].shape[1]))
        h = relu(naive_conv(np.concatenate([enc[i - 1], h]), *W[f"merge{i - 1}"]))
    z = naive_conv(h, *W["out"])
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)
