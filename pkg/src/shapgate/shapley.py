"""Exact channel-level Shapley attribution over the E/N/Z coalitions.

A coalition keeps some channels and replaces the rest with a baseline; its
value is the detection score (max-over-time class probability) of the masked
window. With three players all eight coalitions are evaluated, so the
attributions are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as net
from .errors import ValidationError
from .synthgen import CHANNELS

# (m_E, m_N, m_Z); index = 4*m_E + 2*m_N + m_Z
MASKS = tuple((e, n, z) for e in (0, 1) for n in (0, 1) for z in (0, 1))
MASK_INDEX = {m: i for i, m in enumerate(MASKS)}
BASELINES = ("zeros", "channel_mean")


@dataclass
class CoalitionValues:
    v: dict  # mask tuple -> value
    cls: str

    def __getitem__(self, mask):
        return self.v[tuple(mask)]


@dataclass
class Attribution:
    phi_E: float
    phi_N: float
    phi_Z: float
    cls: str
    baseline: str = "zeros"
    values: CoalitionValues | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.phi_E, self.phi_N, self.phi_Z])


@dataclass
class ImportanceStats:
    cls: str
    population: str
    n: int
    mean_abs: np.ndarray    # per channel (E, N, Z)
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    dominance: np.ndarray   # percent, sums to 100
    abs_phi: np.ndarray = field(repr=False, default=None)  # (n, 3) raw |phi| table

    def rows(self):
        for j, ch in enumerate(CHANNELS):
            yield {"component": ch, "mean_abs_phi": float(self.mean_abs[j]),
                   "ci_lo": float(self.ci_lo[j]), "ci_hi": float(self.ci_hi[j]),
                   "pct_dominant": float(self.dominance[j]), "population": self.population,
                   "class": self.cls, "n": self.n}


def _check_baseline(baseline):
    if baseline not in BASELINES:
        raise ValidationError(f"baseline must be one of {BASELINES}, got {baseline!r}")


def mask_coalition(x, mask, baseline: str = "zeros"):
    """Keep channels where ``mask`` is 1; replace the others by the baseline.

    ``x`` may be a window object, a ``(3, L)`` array or a ``(B, 3, L)`` stack;
    arrays come back as arrays.
    """
    _check_baseline(baseline)
    samples = getattr(x, "samples", x)
    samples = np.asarray(samples)
    keep = np.asarray(mask, dtype=bool)[:, None]
    if baseline == "zeros":
        fill = np.zeros_like(samples)
    else:
        fill = np.broadcast_to(samples.mean(axis=-1, keepdims=True), samples.shape)
    out = np.where(keep, samples, fill).astype(samples.dtype, copy=False)
    if hasattr(x, "samples"):
        return replace(x, samples=out)
    return out


def shapley_from_values(v, cls: str | None = None, baseline: str = "zeros") -> Attribution:
    """Three-player Shapley values from the eight coalition values.

    Weights: 1/3 for the empty and two-player predecessors, 1/6 for each
    one-player predecessor.
    """
    if isinstance(v, CoalitionValues):
        cls = cls or v.cls
        values = v
    else:
        values = CoalitionValues({tuple(m): float(v[tuple(m)]) for m in MASKS}, cls)
    phi = shapley_matrix([[values[m] for m in MASKS]])[0]
    return Attribution(float(phi[0]), float(phi[1]), float(phi[2]), cls, baseline, values)


def shapley_matrix(values: np.ndarray) -> np.ndarray:
    """Vectorized form of :func:`shapley_from_values` for ``(n, 8)`` value rows.

    Columns follow ``MASKS`` order; returns ``(n, 3)`` attributions.
    """
    V = np.asarray(values, dtype=np.float64)
    c = {m: V[:, i] for i, m in enumerate(MASKS)}
    phi_E = ((c[1, 0, 0] - c[0, 0, 0]) / 3 + (c[1, 1, 0] - c[0, 1, 0]) / 6
             + (c[1, 0, 1] - c[0, 0, 1]) / 6 + (c[1, 1, 1] - c[0, 1, 1]) / 3)
    phi_N = ((c[0, 1, 0] - c[0, 0, 0]) / 3 + (c[1, 1, 0] - c[1, 0, 0]) / 6
             + (c[0, 1, 1] - c[0, 0, 1]) / 6 + (c[1, 1, 1] - c[1, 0, 1]) / 3)
    phi_Z = ((c[0, 0, 1] - c[0, 0, 0]) / 3 + (c[1, 0, 1] - c[1, 0, 0]) / 6
             + (c[0, 1, 1] - c[0, 1, 0]) / 6 + (c[1, 1, 1] - c[1, 1, 0]) / 3)
    return np.stack([phi_E, phi_N, phi_Z], axis=1)


def coalition_scores(model, windows, baseline: str = "zeros", batch_size: int = 32):
    """Coalition values for both phase classes.

    Returns ``(v_P, v_S)``, each ``(n_windows, 8)`` in ``MASKS`` order. One
    forward pass per (window, coalition) yields both classes, so each window
    costs exactly eight forward evaluations.
    """
    _check_baseline(baseline)
    x = net.as_batch(model, windows)
    n = len(x)
    masked = np.stack([mask_coalition(x, m, baseline) for m in MASKS], axis=1)
    masked = masked.reshape(n * len(MASKS), *x.shape[1:])
    v_p = np.empty(n * len(MASKS))
    v_s = np.empty(n * len(MASKS))
    for i in range(0, len(masked), batch_size):
        probs, _ = net.forward(model, masked[i:i + batch_size], keep_trace=False)
        v_p[i:i + batch_size] = net.detection_score(probs, "P")
        v_s[i:i + batch_size] = net.detection_score(probs, "S")
    return v_p.reshape(n, len(MASKS)), v_s.reshape(n, len(MASKS))


def coalition_values(model, window, cls: str = "P", baseline: str = "zeros") -> CoalitionValues:
    if cls not in ("P", "S"):
        raise ValidationError(f"class must be P or S, got {cls!r}")
    v_p, v_s = coalition_scores(model, window, baseline)
    row = (v_p if cls == "P" else v_s)[0]
    return CoalitionValues({m: float(row[i]) for i, m in enumerate(MASKS)}, cls)


def attribute(model, window, baseline: str = "zeros") -> tuple[Attribution, Attribution]:
    """P- and S-class attributions for one window (eight forward passes total)."""
    v_p, v_s = coalition_scores(model, window, baseline)
    out = []
    for cls, row in (("P", v_p[0]), ("S", v_s[0])):
        values = CoalitionValues({m: float(row[i]) for i, m in enumerate(MASKS)}, cls)
        out.append(shapley_from_values(values, cls, baseline))
    return out[0], out[1]


def importance_from_phi(phi, cls: str, population: str) -> ImportanceStats:
    """Mean |phi|, normal-approximation 95% CI and dominance percentages."""
    abs_phi = np.abs(np.asarray(phi, dtype=np.float64))
    if abs_phi.ndim != 2 or abs_phi.shape[1] != 3 or len(abs_phi) == 0:
        raise ValidationError("importance needs a non-empty (n, 3) attribution table")
    n = len(abs_phi)
    mean = abs_phi.mean(axis=0)
    sd = abs_phi.std(axis=0, ddof=1) if n > 1 else np.zeros(3)
    half = 1.96 * sd / np.sqrt(n)
    # argmax takes the first of tied channels (E, N, Z order)
    counts = np.bincount(abs_phi.argmax(axis=1), minlength=3)
    return ImportanceStats(cls, population, n, mean, mean - half, mean + half,
                           100.0 * counts / n, abs_phi)


def batch_importance(model, windows, cls: str, population: str,
                     baseline: str = "zeros") -> ImportanceStats:
    if cls not in ("P", "S"):
        raise ValidationError(f"class must be P or S, got {cls!r}")
    windows = list(windows) if not isinstance(windows, np.ndarray) else windows
    if len(windows) == 0:
        raise ValidationError("batch_importance needs at least one window")
    v_p, v_s = coalition_scores(model, windows, baseline)
    phi = shapley_matrix(v_p if cls == "P" else v_s)
    return importance_from_phi(phi, cls, population)
