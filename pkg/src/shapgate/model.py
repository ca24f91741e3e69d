"""Encoder-decoder phase picker: assembly, forward/backward passes, scoring, weights IO.

Topology for ``stages = 4``::

    enc0  conv k7 s1        3      -> w0     L0 = 3001
    down1 conv k7 s4        w0     -> w1     L1 = 751
    ...
    down4 conv k7 s4        w3     -> w4     L4 = 12
    up4   deconv k7 s4      w4     -> w3     cropped to L3
    merge3 conv k7 s1       [enc3, up4] -> w3
    ...
    up1, merge0                              L0
    out   conv k1 s1        w0     -> 3      softmax over (N, P, S)

Every layer except ``out`` is followed by a ReLU.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import (BadMagicError, ShapeError, StorageError, TruncatedWeightsError,
                     ValidationError, WeightsVersionError)
from .tensor_core import ConvParams

CLASSES = ("N", "P", "S")
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}

WEIGHTS_MAGIC = b"PNW1"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_length: int = 3001
    input_channels: int = 3
    class_count: int = 3
    stages: int = 4
    kernel_size: int = 7
    stage_stride: int = 4
    channel_widths: tuple = (8, 11, 16, 22, 32)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel_widths", tuple(int(w) for w in self.channel_widths))

    def validate(self):
        if len(self.channel_widths) != self.stages + 1:
            raise ValidationError(
                f"channel_widths needs {self.stages + 1} entries, got {len(self.channel_widths)}")
        if any(w < 1 for w in self.channel_widths):
            raise ValidationError("channel widths must be positive")
        if self.input_channels != 3 or self.class_count != 3:
            raise ValidationError("the picker takes 3 input channels and emits 3 classes")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ValidationError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.stages < 1 or self.stage_stride < 1:
            raise ValidationError("stages and stage_stride must be >= 1")
        if self.input_length < self.stage_stride ** self.stages:
            raise ValidationError(
                f"input_length {self.input_length} shorter than "
                f"stage_stride**stages = {self.stage_stride ** self.stages}")

    def stage_lengths(self) -> list[int]:
        lengths = [self.input_length]
        for _ in range(self.stages):
            lengths.append(tc.output_length(lengths[-1], self.stage_stride))
        return lengths


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" or "deconv"
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int
    activation: bool


def layer_specs(config: ModelConfig) -> list[LayerSpec]:
    """Ordered layer list; also the execution order of the forward pass."""
    w, k, s = config.channel_widths, config.kernel_size, config.stage_stride
    specs = [LayerSpec("enc0", "conv", config.input_channels, w[0], k, 1, True)]
    for i in range(1, config.stages + 1):
        specs.append(LayerSpec(f"down{i}", "conv", w[i - 1], w[i], k, s, True))
    for i in range(config.stages, 0, -1):
        specs.append(LayerSpec(f"up{i}", "deconv", w[i], w[i - 1], k, s, True))
        specs.append(LayerSpec(f"merge{i - 1}", "conv", 2 * w[i - 1], w[i - 1], k, 1, True))
    specs.append(LayerSpec("out", "conv", w[0], config.class_count, 1, 1, False))
    return specs


@dataclass
class Model:
    config: ModelConfig
    layers: dict  # name -> ConvParams, in execution order
    dtype: type = np.float32

    def __post_init__(self):
        self.specs = {spec.name: spec for spec in layer_specs(self.config)}
        if list(self.layers) != list(self.specs):
            raise ValidationError("layer names do not match the configured topology")
        for name, spec in self.specs.items():
            p = self.layers[name]
            expected = (spec.out_channels, spec.in_channels, spec.kernel_size)
            if p.weights.shape != expected or p.stride != spec.stride:
                raise ShapeError(f"layer {name} weights", expected, p.weights.shape)
        self.stage_lengths = self.config.stage_lengths()

    @property
    def default_cam_layer(self) -> str:
        return "merge0"

    def astype(self, dtype) -> "Model":
        return Model(self.config, {n: p.astype(dtype) for n, p in self.layers.items()}, dtype)

    def copy(self) -> "Model":
        return Model(self.config, copy.deepcopy(self.layers), self.dtype)


@dataclass
class ActivationTrace:
    """Everything a forward pass retained for the backward pass and Grad-CAM."""

    inputs: dict = field(default_factory=dict)   # layer input
    pre: dict = field(default_factory=dict)      # pre-activation output
    outputs: dict = field(default_factory=dict)  # post-activation output
    probs: np.ndarray = None


@dataclass
class GradientRecord:
    params: dict      # name -> (d_weights, d_bias)
    features: dict    # name -> gradient w.r.t. that layer's post-activation output
    d_input: np.ndarray
    d_logits: np.ndarray


def assemble(config: ModelConfig = ModelConfig(), dtype=np.float32) -> Model:
    """Build a model with scaled-uniform fan-in initialization (deterministic per seed)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    layers = {}
    for spec in layer_specs(config):
        taps = spec.kernel_size
        if spec.kind == "deconv":
            taps = -(-spec.kernel_size // spec.stride)
        fan_in = spec.in_channels * taps
        bound = np.sqrt((6.0 if spec.activation else 3.0) / fan_in)
        w = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, spec.kernel_size))
        layers[spec.name] = ConvParams(w.astype(dtype), np.zeros(spec.out_channels, dtype=dtype),
                                       spec.stride)
    return Model(config, layers, dtype)


def as_batch(model: Model, windows) -> np.ndarray:
    """Stack windows (objects with ``.samples`` or raw arrays) into ``(B, 3, L)``."""
    if isinstance(windows, np.ndarray):
        x = windows
    elif hasattr(windows, "samples"):
        x = windows.samples
    else:
        x = np.stack([getattr(w, "samples", w) for w in windows])
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 2:
        x = x[None]
    expected = (model.config.input_channels, model.config.input_length)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise ShapeError("window shape", expected, x.shape[1:] if x.ndim == 3 else x.shape)
    return x


def forward(model: Model, windows, keep_trace: bool = True):
    """Run the network. Returns ``(probs, trace)``; probs is ``(B, 3, L)``.

    Single windows come back with a batch axis of 1. With ``keep_trace=False``
    the trace is ``None`` and intermediate maps are released as soon as possible.
    """
    x = as_batch(model, windows)
    trace = ActivationTrace() if keep_trace else None
    encoded = {}
    h = x
    for name, spec in model.specs.items():
        p = model.layers[name]
        if name.startswith("merge"):
            h = np.concatenate([encoded[int(name[5:])], h], axis=1)
        if spec.kind == "deconv":
            level = int(name[2:]) - 1
            z = tc.transposed_conv1d(h, p, model.stage_lengths[level])
        else:
            z = tc.conv1d(h, p)
        out = tc.relu(z) if spec.activation else z
        if trace is not None:
            trace.inputs[name] = h
            trace.pre[name] = z
            trace.outputs[name] = out
        if name == "enc0" or name.startswith("down"):
            encoded[0 if name == "enc0" else int(name[4:])] = out
        h = out
    probs = tc.softmax_classes(h)
    if trace is not None:
        trace.probs = probs
    return probs, trace


def backward(model: Model, trace: ActivationTrace, output_cotangent=None,
             logit_cotangent=None) -> GradientRecord:
    """Reverse pass for a cotangent on the probability traces.

    ``logit_cotangent`` instead starts the pass below the softmax.
    """
    if trace is None or trace.probs is None:
        raise ValidationError("backward needs a trace from forward(keep_trace=True)")
    if (output_cotangent is None) == (logit_cotangent is None):
        raise ValidationError("pass exactly one of output_cotangent / logit_cotangent")
    g = np.asarray(output_cotangent if logit_cotangent is None else logit_cotangent,
                   dtype=model.dtype)
    if g.ndim == 2:
        g = g[None]
    if g.shape != trace.probs.shape:
        raise ShapeError("output cotangent", trace.probs.shape, g.shape)
    if set(trace.inputs) != set(model.specs):
        raise ValidationError("trace was not produced by this model")

    d_logits = tc.softmax_adjoint(trace.probs, g) if logit_cotangent is None else g
    params, features = {}, {}
    skip_grads = {}
    upstream = d_logits
    for name in reversed(list(model.specs)):
        spec = model.specs[name]
        p = model.layers[name]
        if name in skip_grads:
            upstream = upstream + skip_grads.pop(name)
        features[name] = upstream
        d_z = tc.relu_adjoint(trace.pre[name], upstream) if spec.activation else upstream
        if spec.kind == "deconv":
            d_in, d_w, d_b = tc.transposed_conv1d_adjoint(trace.inputs[name], p, d_z)
        else:
            d_in, d_w, d_b = tc.conv1d_adjoint(trace.inputs[name], p, d_z)
        params[name] = (d_w, d_b)
        if name.startswith("merge"):
            level = int(name[5:])
            width = model.config.channel_widths[level]
            enc_name = "enc0" if level == 0 else f"down{level}"
            skip_grads[enc_name] = d_in[:, :width]
            d_in = d_in[:, width:]
        upstream = d_in
    params = {name: params[name] for name in model.specs}
    return GradientRecord(params, features, upstream, d_logits)


def detection_score(probs, cls: str = "P"):
    """Max over time of one class channel. Works on ``(3, L)`` or ``(B, 3, L)``."""
    return np.asarray(probs)[..., CLASS_INDEX[cls], :].max(axis=-1)


def event_score(probs):
    return np.maximum(detection_score(probs, "P"), detection_score(probs, "S"))


def score_cotangent(probs, cls: str = "P"):
    """Cotangent of ``detection_score``: all mass on the first argmax sample."""
    probs = np.asarray(probs)
    g = np.zeros_like(probs)
    idx = probs[..., CLASS_INDEX[cls], :].argmax(axis=-1)
    if probs.ndim == 2:
        g[CLASS_INDEX[cls], idx] = 1
    else:
        g[np.arange(probs.shape[0]), CLASS_INDEX[cls], idx] = 1
    return g


def predict_batches(model: Model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Probabilities for a large stack of windows, evaluated in chunks."""
    out = [forward(model, x[i:i + batch_size], keep_trace=False)[0]
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 3, model.config.input_length), model.dtype)


# -- weights file ------------------------------------------------------------

_CONFIG_HEAD = "<IHHHHHH"  # input_length, input_channels, class_count, stages, kernel, stride, n_widths
_LAYER_HEAD = "<BHHHH"     # kind, out, in, kernel, stride


def weights_bytes(model: Model) -> bytes:
    cfg = model.config
    parts = [WEIGHTS_MAGIC, struct.pack("<H", WEIGHTS_VERSION),
             struct.pack(_CONFIG_HEAD, cfg.input_length, cfg.input_channels, cfg.class_count,
                         cfg.stages, cfg.kernel_size, cfg.stage_stride, len(cfg.channel_widths)),
             struct.pack(f"<{len(cfg.channel_widths)}H", *cfg.channel_widths),
             struct.pack("<q", cfg.seed),
             struct.pack("<H", len(model.layers))]
    for name, p in model.layers.items():
        encoded = name.encode("ascii")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        kind = 1 if model.specs[name].kind == "deconv" else 0
        parts.append(struct.pack(_LAYER_HEAD, kind, p.out_channels, p.in_channels,
                                 p.kernel_size, p.stride))
        parts.append(np.ascontiguousarray(p.weights, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(p.bias, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(model: Model, path) -> Path:
    """Write weights as little-endian float32; float64 models are rounded on save."""
    path = Path(path)
    try:
        path.write_bytes(weights_bytes(model))
    except OSError as exc:
        raise StorageError(f"cannot write weights to {path}: {exc}") from exc
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedWeightsError(
                f"weights file truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_weights(data: bytes) -> Model:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != WEIGHTS_MAGIC:
        raise BadMagicError("not a weights file (bad magic bytes)")
    r.take(4)
    (version,) = r.unpack("<H")
    if version != WEIGHTS_VERSION:
        raise WeightsVersionError(
            f"weights format version {version} unsupported (this build reads {WEIGHTS_VERSION})")
    length, chans, classes, stages, kernel, stride, n_widths = r.unpack(_CONFIG_HEAD)
    widths = r.unpack(f"<{n_widths}H")
    (seed,) = r.unpack("<q")
    config = ModelConfig(length, chans, classes, stages, kernel, stride, widths, seed)
    config.validate()
    (n_layers,) = r.unpack("<H")
    layers = {}
    for _ in range(n_layers):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("ascii")
        _kind, out_c, in_c, k, s = r.unpack(_LAYER_HEAD)
        w = np.frombuffer(r.take(4 * out_c * in_c * k), dtype="<f4").reshape(out_c, in_c, k)
        b = np.frombuffer(r.take(4 * out_c), dtype="<f4")
        layers[name] = ConvParams(w.astype(np.float32), b.astype(np.float32), s)
    if r.pos != len(data):
        raise StorageError(f"{len(data) - r.pos} trailing bytes after weights records")
    return Model(config, layers, np.float32)


def load_weights(path) -> Model:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read weights from {path}: {exc}") from exc
    return parse_weights(data)
