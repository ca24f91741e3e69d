"""Supervised training: Gaussian pick targets, cross-entropy, Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError, StorageError, ValidationError
from .model import Model, as_batch, backward, forward

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    mask_sigma: float = 10.0  # samples; 0.1 s at 100 Hz
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    flip_augment: bool = False  # random per-channel polarity flips each epoch
    schedule: str = "constant"  # or "cosine": per-epoch decay from learning_rate to 0
    decay_start: float = 0.0    # cosine only: fraction of epochs run at the full rate first
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.mask_sigma <= 0:
            raise ValidationError("learning_rate must be >= 0 and mask_sigma > 0")
        if self.schedule not in ("constant", "cosine"):
            raise ValidationError(f"schedule must be constant or cosine, got {self.schedule!r}")
        if not 0 <= self.decay_start < 1:
            raise ValidationError("decay_start must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValidationError("Adam moments must lie in [0, 1) and eps > 0")
        return self


def label_masks(labels, length: int, sigma: float = 10.0) -> np.ndarray:
    """Target traces (N, P, S): unit-peak Gaussians at the picks, N fills the rest."""
    labels.validate(length)
    t = np.arange(length, dtype=np.float64)
    target = np.zeros((3, length))
    if labels.has_event:
        target[1] = np.exp(-0.5 * ((t - labels.p_time) / sigma) ** 2)
        target[2] = np.exp(-0.5 * ((t - labels.s_time) / sigma) ** 2)
        overlap = target[1] + target[2]
        over = overlap > 1
        target[1:, over] /= overlap[over]
    target[0] = np.clip(1.0 - target[1] - target[2], 0.0, None)
    return target


def cross_entropy(probs, targets):
    """Mean over samples (and batch) of ``-sum_c target_c * ln(prob_c)``.

    Probabilities are clipped to ``[1e-7, 1]`` first; the returned cotangent is
    the exact gradient of the clipped loss w.r.t. ``probs``.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets, dtype=probs.dtype)
    if probs.shape != targets.shape:
        raise ShapeError("cross_entropy targets", probs.shape, targets.shape)
    n = probs.size // probs.shape[-2]
    clipped = np.clip(probs, PROB_FLOOR, 1.0)
    loss = float(-(targets * np.log(clipped)).sum(dtype=np.float64) / n)
    inside = (probs >= PROB_FLOOR) & (probs <= 1.0)
    cotangent = np.where(inside, -targets / clipped / n, 0).astype(probs.dtype)
    return loss, cotangent


def cross_entropy_logit_grad(probs, targets):
    """Gradient of the unclipped mean cross-entropy w.r.t. the softmax logits.

    Training uses this instead of chaining the clipped cotangent through the
    softmax: once a probability falls under the clip floor the clipped
    gradient is exactly zero and that class can never recover.
    """
    n = probs.size // probs.shape[-2]
    t_sum = targets.sum(axis=-2, keepdims=True)
    return ((probs * t_sum - targets) / n).astype(probs.dtype)


class Adam:
    def __init__(self, model: Model, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = {n: (np.zeros_like(p.weights), np.zeros_like(p.bias)) for n, p in model.layers.items()}
        self.v = {n: (np.zeros_like(p.weights), np.zeros_like(p.bias)) for n, p in model.layers.items()}

    def step(self, model: Model, grads: dict, scale: float = 1.0):
        c = self.cfg
        self.step_count += 1
        t = self.step_count
        lr = scale * c.learning_rate * np.sqrt(1 - c.beta2 ** t) / (1 - c.beta1 ** t)
        for name, p in model.layers.items():
            for i, (param, g) in enumerate(zip((p.weights, p.bias), grads[name])):
                m, v = self.m[name][i], self.v[name][i]
                m *= c.beta1
                m += (1 - c.beta1) * g
                v *= c.beta2
                v += (1 - c.beta2) * g * g
                param -= (lr * m / (np.sqrt(v) + c.eps)).astype(param.dtype)


def window_targets(windows, length: int, sigma: float) -> np.ndarray:
    return np.stack([label_masks(w.picks, length, sigma) for w in windows])


def train(model: Model, windows, cfg: TrainConfig = TrainConfig(), on_epoch=None):
    """Train a private copy of ``model``; returns ``(trained_model, per_epoch_mean_loss)``.

    ``on_epoch(epoch, model, mean_loss)`` is called after every epoch if given.
    """
    cfg.validate()
    windows = list(windows)
    if not windows:
        raise ValidationError("training set is empty")
    model = model.copy()
    x = as_batch(model, windows)
    targets = window_targets(windows, model.config.input_length, cfg.mask_sigma).astype(model.dtype)
    opt = Adam(model, cfg)
    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(windows))
        if cfg.flip_augment:
            # a sign flip on any component is another valid source geometry; labels unchanged
            signs = np.random.default_rng([cfg.seed, epoch, 1]).choice(
                np.array([-1, 1], dtype=model.dtype), size=(len(windows), x.shape[1], 1))
        scale = 1.0
        flat = int(cfg.decay_start * cfg.epochs)
        if cfg.schedule == "cosine" and epoch >= flat:
            scale = 0.5 * (1 + np.cos(np.pi * (epoch - flat) / (cfg.epochs - flat)))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x[idx] * signs[idx] if cfg.flip_augment else x[idx]
            probs, trace = forward(model, xb)
            loss, _ = cross_entropy(probs, targets[idx])
            if not np.isfinite(loss):
                raise NumericError(f"loss became non-finite at epoch {epoch + 1}")
            total += loss * len(idx)
            if cfg.learning_rate > 0:
                g = cross_entropy_logit_grad(probs, targets[idx])
                opt.step(model, backward(model, trace, logit_cotangent=g).params, scale)
        history.append(total / len(windows))
        log.info("epoch %d mean loss %.5f", epoch + 1, history[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, model, history[-1])
    return model, history


def write_history(history, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss"])
            for i, loss in enumerate(history, start=1):
                w.writerow([i, repr(float(loss))])
    except OSError as exc:
        raise StorageError(f"cannot write loss history to {path}: {exc}") from exc
    return path
