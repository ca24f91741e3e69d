"""SHAP-gated decision rules and F1-maximizing threshold search."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import StorageError, ValidationError

DEFAULT_PROB_THRESHOLD = 0.87
DEFAULT_SHAP_THRESHOLD = 0.18
GRID_STEP = 0.01


class PolicyKind(str, Enum):
    PROB_ONLY = "ProbOnly"
    SHAP_ONLY = "ShapOnly"
    COMBINED = "Combined"


@dataclass(frozen=True)
class GatePolicy:
    kind: PolicyKind
    prob_threshold: float | None = DEFAULT_PROB_THRESHOLD
    shap_threshold: float | None = DEFAULT_SHAP_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        needs_prob = self.kind in (PolicyKind.PROB_ONLY, PolicyKind.COMBINED)
        needs_shap = self.kind in (PolicyKind.SHAP_ONLY, PolicyKind.COMBINED)
        for needed, value, name in ((needs_prob, self.prob_threshold, "prob_threshold"),
                                    (needs_shap, self.shap_threshold, "shap_threshold")):
            if needed and (value is None or not np.isfinite(value)):
                raise ValidationError(f"{self.kind.value} policy needs a finite {name}")
        if needs_prob and not 0 <= self.prob_threshold <= 1:
            raise ValidationError("prob_threshold must lie in [0, 1]")
        if needs_shap and self.shap_threshold < 0:
            raise ValidationError("shap_threshold must be >= 0")


@dataclass(frozen=True)
class GateInput:
    event_prob: float
    s6: float


def s6(att_p, att_s) -> float:
    """Mean of the six absolute channel attributions (P and S classes)."""
    vals = [att_p.phi_E, att_p.phi_N, att_p.phi_Z, att_s.phi_E, att_s.phi_N, att_s.phi_Z]
    return float(np.mean(np.abs(vals)))


def s6_matrix(phi_p, phi_s) -> np.ndarray:
    """Row-wise S6 for ``(n, 3)`` P and S attribution tables."""
    return np.abs(np.concatenate([phi_p, phi_s], axis=1)).mean(axis=1)


def decide_many(event_prob, s6_values, policy: GatePolicy) -> np.ndarray:
    """Boolean signal decisions; thresholds are inclusive."""
    p = np.asarray(event_prob, dtype=np.float64)
    s = np.asarray(s6_values, dtype=np.float64)
    if policy.kind is PolicyKind.PROB_ONLY:
        return p >= policy.prob_threshold
    if policy.kind is PolicyKind.SHAP_ONLY:
        return s >= policy.shap_threshold
    return (p >= policy.prob_threshold) | (s >= policy.shap_threshold)


def decide(inp: GateInput, policy: GatePolicy) -> str:
    return "signal" if bool(decide_many(inp.event_prob, inp.s6, policy)) else "noise"


def _grid(upper: float) -> np.ndarray:
    n = int(np.ceil(round(upper / GRID_STEP, 9)))
    return np.round(np.arange(n + 1) * GRID_STEP, 2)


def _counts(pred, labels):
    # pred: (..., n) bool; labels: (n,) bool
    tp = (pred & labels).sum(axis=-1)
    fp = (pred & ~labels).sum(axis=-1)
    fn = (~pred & labels).sum(axis=-1)
    return tp, fp, fn


def _f1_precision(tp, fp, fn):
    tp, fp, fn = (np.asarray(a, dtype=np.float64) for a in (tp, fp, fn))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return f1, precision


@dataclass(frozen=True)
class TunedPolicy:
    policy: GatePolicy
    train_f1: float
    train_precision: float


def tune_thresholds(event_prob, s6_values, labels, kind) -> TunedPolicy:
    """Grid-search thresholds maximizing train F1.

    Ties go to higher precision, then lower probability threshold, then lower
    SHAP threshold.
    """
    kind = PolicyKind(kind)
    p = np.asarray(event_prob, dtype=np.float64)
    s = np.asarray(s6_values, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if not (len(p) == len(s) == len(y)) or len(y) == 0:
        raise ValidationError("event_prob, s6 and labels must be equal-length and non-empty")
    if y.all() or not y.any():
        raise ValidationError("threshold tuning needs both signal and noise windows")

    prob_grid = _grid(1.0)
    shap_grid = _grid(max(float(s.max()), 0.0))
    if kind is PolicyKind.PROB_ONLY:
        pp, ss = prob_grid, np.full_like(prob_grid, np.nan)
        pred = p[None, :] >= pp[:, None]
    elif kind is PolicyKind.SHAP_ONLY:
        pp, ss = np.full_like(shap_grid, np.nan), shap_grid
        pred = s[None, :] >= ss[:, None]
    else:
        pp, ss = (g.ravel() for g in np.meshgrid(prob_grid, shap_grid, indexing="ij"))
        pred = (p[None, :] >= pp[:, None]) | (s[None, :] >= ss[:, None])
    f1, precision = _f1_precision(*_counts(pred, y))
    # lexsort: last key is primary
    order = np.lexsort((np.nan_to_num(ss), np.nan_to_num(pp), -precision, -f1))
    best = order[0]
    policy = GatePolicy(kind,
                        None if np.isnan(pp[best]) else float(pp[best]),
                        None if np.isnan(ss[best]) else float(ss[best]))
    return TunedPolicy(policy, float(f1[best]), float(precision[best]))


def policy_record(tuned: TunedPolicy) -> dict:
    pol = tuned.policy
    return {"kind": pol.kind.value, "prob_threshold": pol.prob_threshold,
            "shap_threshold": pol.shap_threshold, "train_f1": tuned.train_f1}


def save_policy(tuned: TunedPolicy, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(policy_record(tuned), indent=2) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write policy to {path}: {exc}") from exc
    return path


def load_policy(path) -> GatePolicy:
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read policy record {path}: {exc}") from exc
    try:
        return GatePolicy(rec["kind"], rec.get("prob_threshold"), rec.get("shap_threshold"))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"bad policy record {path}: {exc}") from exc
