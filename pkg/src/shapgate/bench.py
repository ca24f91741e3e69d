"""Noise-robustness benchmark: confusion metrics, per-split tuning, sweeps, reports."""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gate, shapley
from .errors import StorageError, ValidationError
from .synthgen import NoiseSpec, inject_noise

log = logging.getLogger(__name__)

DEFAULT_AMPLITUDES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0)
DEFAULT_KINDS = ("harmonic", "random")
ALL_POLICIES = (gate.PolicyKind.PROB_ONLY, gate.PolicyKind.SHAP_ONLY, gate.PolicyKind.COMBINED)
SWEEP_COLUMNS = ["kind", "amplitude", "split", "policy", "tp", "fp", "fn", "tn",
                 "precision", "recall", "f1"]
SUMMARY_COLUMNS = ["kind", "amplitude", "policy", "n_splits", "f1_mean", "f1_sd",
                   "precision_mean", "recall_mean"]
FULL_IDX = shapley.MASK_INDEX[(1, 1, 1)]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def metrics(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1 with every 0/0 taken as 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def confusion(pred, labels) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    return ConfusionCounts(int((pred & y).sum()), int((pred & ~y).sum()),
                           int((~pred & y).sum()), int((~pred & ~y).sum()))


@dataclass(frozen=True)
class SweepResult:
    kind: str
    amplitude: float
    split: int
    policy: str
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, kind, amplitude, split, policy, counts):
        return cls(kind, float(amplitude), int(split), str(policy), counts, *metrics(counts))


@dataclass
class ScoredSet:
    event_prob: np.ndarray
    s6: np.ndarray
    labels: np.ndarray  # True = signal


def score_windows(model, windows, baseline: str = "zeros") -> ScoredSet:
    """Event probability and S6 for each window from its eight coalition passes."""
    v_p, v_s = shapley.coalition_scores(model, windows, baseline)
    event_prob = np.maximum(v_p[:, FULL_IDX], v_s[:, FULL_IDX])
    s6 = gate.s6_matrix(shapley.shapley_matrix(v_p), shapley.shapley_matrix(v_s))
    labels = np.array([w.is_signal for w in windows], dtype=bool)
    return ScoredSet(event_prob, s6, labels)


def _fingerprint(w) -> str:
    return hashlib.sha1(np.ascontiguousarray(w.samples).tobytes()).hexdigest()


def check_disjoint(train, test):
    overlap = {_fingerprint(w) for w in train} & {_fingerprint(w) for w in test}
    if overlap:
        raise ValidationError(f"train and test splits share {len(overlap)} window(s)")


def _noisy(windows, spec: NoiseSpec, seed_key):
    return [inject_noise(w, spec, np.random.default_rng([*seed_key, i]))
            for i, w in enumerate(windows)]


def evaluate_policies(train: ScoredSet, test: ScoredSet, policies, kind, amplitude, split,
                      tuner=gate.tune_thresholds) -> list[SweepResult]:
    """Tune each policy on ``train`` only, then count outcomes on ``test``."""
    out = []
    for pk in policies:
        tuned = tuner(train.event_prob, train.s6, train.labels, pk)
        pred = gate.decide_many(test.event_prob, test.s6, tuned.policy)
        out.append(SweepResult.from_counts(kind, amplitude, split, gate.PolicyKind(pk).value,
                                           confusion(pred, test.labels)))
    return out


def run_split(model, train, test, spec: NoiseSpec, policies=ALL_POLICIES, seed=0, split=0,
              baseline="zeros", tuner=gate.tune_thresholds) -> list[SweepResult]:
    """Inject noise into both splits, tune thresholds on train, score on test."""
    check_disjoint(train, test)
    key = (seed, split) if np.isscalar(seed) else (*seed, split)
    train_s = score_windows(model, _noisy(train, spec, (*key, 0)), baseline)
    test_s = score_windows(model, _noisy(test, spec, (*key, 1)), baseline)
    return evaluate_policies(train_s, test_s, policies, spec.kind, spec.relative_amplitude,
                             split, tuner)


def draw_train_split(pool, size: int, rng):
    """Balanced subset of ``size`` windows (half signal, half noise) from ``pool``."""
    sig = [i for i, w in enumerate(pool) if w.is_signal]
    noi = [i for i, w in enumerate(pool) if not w.is_signal]
    half = size // 2
    if len(sig) < half or len(noi) < size - half:
        raise ValidationError(
            f"pool has {len(sig)} signal / {len(noi)} noise windows; need {half} / {size - half}")
    chosen = np.concatenate([rng.choice(sig, half, replace=False),
                             rng.choice(noi, size - half, replace=False)])
    return [pool[i] for i in np.sort(chosen)]


def noise_sweep(model, pool, test, amplitudes=DEFAULT_AMPLITUDES, kinds=DEFAULT_KINDS,
                n_splits: int = 5, train_size: int = 100, policies=ALL_POLICIES, seed: int = 0,
                baseline: str = "zeros", threads: int = 1) -> list[SweepResult]:
    """Full factorial over kind x amplitude x split x policy.

    Split ``k`` re-draws a balanced train set from ``pool``; the test set is
    shared. Noise realizations depend only on ``(seed, kind, amplitude, split)``
    so results do not depend on ``threads``.
    """
    if n_splits < 1 or not len(amplitudes) or not len(kinds):
        raise ValidationError("need n_splits >= 1 and non-empty amplitudes/kinds")
    check_disjoint(pool, test)
    trains = [draw_train_split(pool, train_size, np.random.default_rng([seed, 7, k]))
              for k in range(n_splits)]
    # injection at amplitude 0 is the identity: score the clean test set once
    clean_test = score_windows(model, test, baseline) if 0 in amplitudes else None

    def cell(job):
        ki, ai, k = job
        spec = NoiseSpec(kinds[ki], float(amplitudes[ai]))
        key = (seed, ki, ai, k)
        train_s = score_windows(model, _noisy(trains[k], spec, (*key, 0)), baseline)
        if spec.relative_amplitude == 0:
            test_s = clean_test
        else:
            test_s = score_windows(model, _noisy(test, spec, (*key, 1)), baseline)
        log.info("cell kind=%s amp=%g split=%d done", spec.kind, spec.relative_amplitude, k)
        return evaluate_policies(train_s, test_s, policies, spec.kind,
                                 spec.relative_amplitude, k)

    jobs = [(ki, ai, k) for ki in range(len(kinds)) for ai in range(len(amplitudes))
            for k in range(n_splits)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(cell, jobs))
    else:
        results = [cell(j) for j in jobs]
    return [r for cell_results in results for r in cell_results]


def summarize(table: list[SweepResult]) -> list[dict]:
    """Mean and sd over splits per (kind, amplitude, policy), in first-seen order."""
    groups: dict = {}
    for r in table:
        groups.setdefault((r.kind, r.amplitude, r.policy), []).append(r)
    rows = []
    for (kind, amp, policy), rs in groups.items():
        f1 = np.array([r.f1 for r in rs])
        rows.append({"kind": kind, "amplitude": amp, "policy": policy, "n_splits": len(rs),
                     "f1_mean": float(f1.mean()),
                     "f1_sd": float(f1.std(ddof=1)) if len(rs) > 1 else 0.0,
                     "precision_mean": float(np.mean([r.precision for r in rs])),
                     "recall_mean": float(np.mean([r.recall for r in rs]))})
    return rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_sweep_csv(table: list[SweepResult], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in table:
                c = r.counts
                w.writerow([r.kind, _fmt(r.amplitude), r.split, r.policy, c.tp, c.fp, c.fn, c.tn,
                            _fmt(r.precision), _fmt(r.recall), _fmt(r.f1)])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def read_sweep_csv(path) -> list[SweepResult]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    return [SweepResult(r["kind"], float(r["amplitude"]), int(r["split"]), r["policy"],
                        ConfusionCounts(int(r["tp"]), int(r["fp"]), int(r["fn"]), int(r["tn"])),
                        float(r["precision"]), float(r["recall"]), float(r["f1"]))
            for r in rows]


def write_summary_csv(summary: list[dict], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for row in summary:
                w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc
    return path


def report(table: list[SweepResult], out_dir, width: float = 6.4, height: float = 4.0,
           amp_range=None, f1_range=(0.0, 1.02)) -> dict:
    """Write ``sweep.csv``, ``sweep_summary.csv`` and ``f1_vs_amplitude.svg``."""
    from .plotting import plot_f1_vs_amplitude

    if not table:
        raise ValidationError("cannot report an empty sweep table")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out}: {exc}") from exc
    summary = summarize(table)
    paths = {"sweep": write_sweep_csv(table, out / "sweep.csv"),
             "summary": write_summary_csv(summary, out / "sweep_summary.csv")}
    paths["figure"] = plot_f1_vs_amplitude(summary, out / "f1_vs_amplitude.svg",
                                           size=(width, height), amp_range=amp_range,
                                           f1_range=f1_range)
    return paths
