"""Grad-CAM over the time axis of the picker's feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as net
from .errors import ValidationError
from .tensor_core import interp_linear, relu


@dataclass
class GradCamResult:
    heatmap: np.ndarray   # (input_length,), >= 0
    alphas: np.ndarray    # one weight per feature map
    layer_id: str
    cls: str
    score: float


def combine_maps(feature_maps, alphas, length: int) -> np.ndarray:
    """ReLU of the alpha-weighted sum of ``(K, T)`` maps, resampled to ``length``."""
    a = np.asarray(feature_maps, dtype=np.float64)
    raw = relu(np.tensordot(np.asarray(alphas, dtype=np.float64), a, axes=1))
    return interp_linear(raw, length)


def gradcam(model, window, cls: str = "P", layer_id: str | None = None) -> GradCamResult:
    """Heatmap for the max-over-time probability of ``cls`` at ``layer_id``.

    The layer defaults to the last convolution before the output projection.
    """
    if cls not in net.CLASS_INDEX:
        raise ValidationError(f"class must be one of {net.CLASSES}, got {cls!r}")
    layer_id = layer_id or model.default_cam_layer
    if layer_id not in model.specs:
        raise ValidationError(f"unknown layer {layer_id!r}; choose from {list(model.specs)}")
    probs, trace = net.forward(model, window)
    if trace.outputs[layer_id].ndim != 3 or trace.outputs[layer_id].shape[-1] < 1:
        raise ValidationError(f"layer {layer_id!r} has no time axis")
    grads = net.backward(model, trace, net.score_cotangent(probs, cls))
    maps = trace.outputs[layer_id][0]
    alphas = grads.features[layer_id][0].astype(np.float64).mean(axis=-1)
    heatmap = combine_maps(maps, alphas, model.config.input_length)
    return GradCamResult(heatmap, alphas, layer_id, cls,
                         float(net.detection_score(probs, cls)[0]))


def display_normalize(heatmap) -> np.ndarray:
    """Scale to [0, 1] for plotting; all-zero maps stay zero."""
    h = np.asarray(heatmap, dtype=np.float64)
    peak = h.max()
    return h / peak if peak > 0 else h.copy()


def concentration(heatmap, width: int = 200) -> float:
    """Largest fraction of heatmap mass inside any ``width``-sample window."""
    h = np.asarray(heatmap, dtype=np.float64)
    total = h.sum()
    if total <= 0:
        return 0.0
    width = min(width, len(h))
    sums = np.convolve(h, np.ones(width), mode="valid")
    return float(sums.max() / total)


def pick_locality(heatmap, picks, radius: int = 100, quantile: float = 0.9) -> float:
    """Fraction of the top-decile heatmap mass lying within ``radius`` samples of a pick."""
    h = np.asarray(heatmap, dtype=np.float64)
    top = h >= np.quantile(h, quantile)
    top &= h > 0
    mass = h[top].sum()
    if mass <= 0:
        return 0.0
    idx = np.arange(len(h))
    near = np.zeros(len(h), dtype=bool)
    for t in (picks.p_time, picks.s_time):
        if t is not None:
            near |= np.abs(idx - t) <= radius
    return float(h[top & near].sum() / mass)
