"""Command-line entry point.

Every subcommand writes into ``--out`` (or ``$SHAPGATE_OUT``) and prints one
summary line. Option values resolve as flag > ``--config`` JSON > default.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, gate, gradcam, shapley, synthgen, trainer
from . import model as net
from .errors import ShapgateError, StorageError, ValidationError

OUT_ENV = "SHAPGATE_OUT"
FULL_SCALE_TEST = 9000

# defaults for options that may also come from a config file
DEFAULTS = {
    "seed": 0,
    "threads": os.cpu_count() or 1,
    "train": 100,
    "test": 1000,
    "scale": "desk",
    "epochs": trainer.TrainConfig.epochs,
    "batch_size": trainer.TrainConfig.batch_size,
    "learning_rate": trainer.TrainConfig.learning_rate,
    "mask_sigma": trainer.TrainConfig.mask_sigma,
    "flip": trainer.TrainConfig.flip_augment,
    "schedule": trainer.TrainConfig.schedule,
    "decay_start": trainer.TrainConfig.decay_start,
    "threshold": 0.5,
    "cls": "P",
    "layer": None,
    "index": "0",
    "baseline": "zeros",
    "limit": None,
    "kind": gate.PolicyKind.SHAP_ONLY.value,
    "kinds": ",".join(bench.DEFAULT_KINDS),
    "amplitudes": ",".join(str(a) for a in bench.DEFAULT_AMPLITUDES),
    "splits": 5,
    "train_size": 100,
    "width": 6.4,
    "height": 4.0,
    "amp_range": None,
    "f1_range": "0,1.02",
}


class UsageError(ShapgateError):
    exit_code = 2


def _csv_floats(text, name):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"--{name} expects comma-separated numbers, got {text!r}") from None


def _range(text, name):
    if text is None:
        return None
    vals = _csv_floats(text, name)
    if len(vals) != 2 or vals[0] >= vals[1]:
        raise ValidationError(f"--{name} expects 'lo,hi' with lo < hi, got {text!r}")
    return tuple(vals)


def _load_config(path, command):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    # flat keys apply everywhere; a section named after the subcommand wins
    flat = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    flat.update({k.replace("-", "_"): v for k, v in section.items()})
    if "class" in flat:
        flat["cls"] = flat.pop("class")
    return flat


def resolve(args, command):
    """Fill unset options from the config file, then from DEFAULTS."""
    cfg = _load_config(getattr(args, "config", None), command)
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, cfg.get(key, default))
    for key in ("data", "weights", "policy"):
        if hasattr(args, key) and getattr(args, key) is None and key in cfg:
            setattr(args, key, cfg[key])
    if args.out is None:
        args.out = os.environ.get(OUT_ENV) or cfg.get("out") or "out"
    args.out = Path(args.out)
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name} is required (flag or config file)")


def _mkdir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {path}: {exc}") from exc


def _split_dir(path, split):
    """A dataset root with train/ and test/ subdirectories, or a split itself."""
    path = Path(path)
    if (path / split / "manifest.json").exists():
        return path / split
    if (path / "manifest.json").exists():
        return path
    raise StorageError(f"no dataset found at {path} (expected manifest.json or {split}/)")


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _r(x):
    return repr(float(x))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args):
    n_test = FULL_SCALE_TEST if args.scale == "full" and args.test_flag is None else int(args.test)
    n_train = int(args.train)
    if n_train < 2 or n_test < 2:
        raise ValidationError("--train and --test need at least 2 windows each")
    cfg = synthgen.GenConfig()
    seeds = {"train": 2 * args.seed, "test": 2 * args.seed + 1}
    splits = {"train": synthgen.generate(cfg, n_train // 2, n_train - n_train // 2, seeds["train"]),
              "test": synthgen.generate(cfg, n_test // 2, n_test - n_test // 2, seeds["test"])}
    bench.check_disjoint(splits["train"], splits["test"])
    _mkdir(args.out)
    for name, windows in splits.items():
        synthgen.write_dataset(windows, args.out / name, seeds[name], cfg)
    manifest = {"seed": args.seed, "scale": args.scale,
                "splits": {k: {"count": len(v), "seed": seeds[k]} for k, v in splits.items()}}
    try:
        (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write manifest: {exc}") from exc
    return f"gen-data: {n_train} train / {n_test} test windows -> {args.out}"


def cmd_train(args):
    _require(args, "data")
    windows = synthgen.load_dataset(_split_dir(args.data, "train"))
    cfg = trainer.TrainConfig(epochs=int(args.epochs), batch_size=int(args.batch_size),
                              learning_rate=float(args.learning_rate),
                              mask_sigma=float(args.mask_sigma), flip_augment=bool(args.flip),
                              schedule=args.schedule, decay_start=float(args.decay_start),
                              seed=args.seed)
    model = net.assemble(net.ModelConfig(seed=args.seed))
    trained, history = trainer.train(model, windows, cfg)
    _mkdir(args.out)
    net.save_weights(trained, args.out / "weights.pnw")
    trainer.write_history(history, args.out / "loss.csv")
    return (f"train: {len(windows)} windows, {cfg.epochs} epochs, loss {history[0]:.4f} -> "
            f"{history[-1]:.4f}; weights {args.out / 'weights.pnw'}")


def _policy(args):
    if args.policy is not None:
        return gate.load_policy(args.policy)
    return gate.GatePolicy(gate.PolicyKind.PROB_ONLY, float(args.threshold), None)


def cmd_detect(args):
    _require(args, "weights", "data")
    model = net.load_weights(args.weights)
    windows = synthgen.load_dataset(_split_dir(args.data, "test"))
    policy = _policy(args)
    if policy.kind is gate.PolicyKind.PROB_ONLY and not args.shap:
        probs = net.predict_batches(model, net.as_batch(model, windows))
        p_sc, s_sc = net.detection_score(probs, "P"), net.detection_score(probs, "S")
        s6 = np.full(len(windows), np.nan)
    else:
        v_p, v_s = shapley.coalition_scores(model, windows, args.baseline)
        p_sc, s_sc = v_p[:, bench.FULL_IDX], v_s[:, bench.FULL_IDX]
        s6 = gate.s6_matrix(shapley.shapley_matrix(v_p), shapley.shapley_matrix(v_s))
    event = np.maximum(p_sc, s_sc)
    pred = gate.decide_many(event, s6, policy)
    labels = [w.is_signal for w in windows]
    _mkdir(args.out)
    _write_csv(args.out / "scored.csv",
               ["index", "label", "p_score", "s_score", "event_prob", "s6", "decision"],
               [[i, w.label, _r(p_sc[i]), _r(s_sc[i]), _r(event[i]), _r(s6[i]),
                 "signal" if pred[i] else "noise"] for i, w in enumerate(windows)])
    _, _, f1 = bench.metrics(bench.confusion(pred, labels))
    return (f"detect: {len(windows)} windows, {int(pred.sum())} flagged signal "
            f"({policy.kind.value}), F1 {f1:.3f}; {args.out / 'scored.csv'}")


def _indices(text, n):
    try:
        idx = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"--index expects comma-separated integers, got {text!r}") from None
    bad = [i for i in idx if not 0 <= i < n]
    if bad or not idx:
        raise ValidationError(f"window indices {bad or idx} out of range for {n} windows")
    return idx


def cmd_explain_gradcam(args):
    from .plotting import plot_gradcam_overlay

    _require(args, "weights", "data")
    model = net.load_weights(args.weights)
    windows = synthgen.load_dataset(_split_dir(args.data, "test"))
    _mkdir(args.out)
    locs = []
    for i in _indices(args.index, len(windows)):
        w = windows[i]
        res = gradcam.gradcam(model, w, args.cls, args.layer)
        stem = args.out / f"gradcam_{i}_{args.cls}"
        _write_csv(stem.with_suffix(".csv"), ["sample_index", "E", "N", "Z", "heatmap"],
                   [[t, *(_r(a) for a in w.samples[:, t]), _r(h)]
                    for t, h in enumerate(res.heatmap)])
        plot_gradcam_overlay(w.samples, gradcam.display_normalize(res.heatmap),
                             stem.with_suffix(".svg"), w.sample_rate, w.picks,
                             title=f"window {i} ({w.label}), {args.cls}-class, layer {res.layer_id}")
        if w.is_signal:
            locs.append(gradcam.pick_locality(res.heatmap, w.picks))
    extra = f", mean pick locality {np.mean(locs):.2f}" if locs else ""
    return f"explain gradcam: {len(_indices(args.index, len(windows)))} heatmap(s) -> {args.out}{extra}"


def cmd_explain_shap(args):
    from .plotting import plot_abs_phi_violins

    _require(args, "weights", "data")
    model = net.load_weights(args.weights)
    windows = synthgen.load_dataset(_split_dir(args.data, "test"))
    if args.limit is not None:
        windows = windows[:int(args.limit)]
    if not windows:
        raise ValidationError("no windows to explain")
    v_p, v_s = shapley.coalition_scores(model, windows, args.baseline)
    phi_p, phi_s = shapley.shapley_matrix(v_p), shapley.shapley_matrix(v_s)
    s6 = gate.s6_matrix(phi_p, phi_s)
    _mkdir(args.out)
    try:
        with open(args.out / "shap.jsonl", "w") as fh:
            for i, w in enumerate(windows):
                rec = {"index": i, "label": w.label, "baseline": args.baseline,
                       "phi_P": dict(zip(synthgen.CHANNELS, phi_p[i].tolist())),
                       "phi_S": dict(zip(synthgen.CHANNELS, phi_s[i].tolist())),
                       "v_P": v_p[i].tolist(), "v_S": v_s[i].tolist(), "s6": float(s6[i])}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write shap.jsonl: {exc}") from exc

    labels = np.array([w.is_signal for w in windows])
    stats = []
    for population, sel in (("signal", labels), ("noise", ~labels)):
        if sel.any():
            for cls, phi in (("P", phi_p), ("S", phi_s)):
                stats.append(shapley.importance_from_phi(phi[sel], cls, population))
    cols = ["class", "population", "component", "n", "mean_abs_phi", "ci_lo", "ci_hi",
            "pct_dominant"]
    _write_csv(args.out / "importance.csv", cols,
               [[row[c] if not isinstance(row[c], float) else _r(row[c]) for c in cols]
                for st in stats for row in st.rows()])
    _write_csv(args.out / "abs_phi.csv", ["index", "label", "class", "E", "N", "Z"],
               [[i, w.label, cls, *(_r(v) for v in np.abs(phi[i]))]
                for i, w in enumerate(windows) for cls, phi in (("P", phi_p), ("S", phi_s))])
    plot_abs_phi_violins(stats, args.out / "shap_violin.svg")
    parts = [f"S6 {pop} {s6[sel].mean():.3f}" for pop, sel in (("signal", labels), ("noise", ~labels))
             if sel.any()]
    return f"explain shap: {len(windows)} windows, {', '.join(parts)} -> {args.out}"


def read_scored(path) -> bench.ScoredSet:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    try:
        scored = bench.ScoredSet(np.array([float(r["event_prob"]) for r in rows]),
                                 np.array([float(r["s6"]) for r in rows]),
                                 np.array([r["label"] == "signal" for r in rows]))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path} is not a scored CSV from `detect`: {exc}") from exc
    return scored


def cmd_tune_gate(args):
    if args.scored is not None:
        scored = read_scored(args.scored)
        if args.kind != gate.PolicyKind.PROB_ONLY.value and np.isnan(scored.s6).any():
            raise ValidationError(f"{args.scored} has no S6 values; rerun `detect --shap`")
    else:
        _require(args, "weights", "data")
        model = net.load_weights(args.weights)
        windows = synthgen.load_dataset(_split_dir(args.data, "train"))
        scored = bench.score_windows(model, windows, args.baseline)
    tuned = gate.tune_thresholds(scored.event_prob, scored.s6, scored.labels, args.kind)
    _mkdir(args.out)
    gate.save_policy(tuned, args.out / "policy.json")
    pol = tuned.policy
    return (f"tune-gate: {pol.kind.value} prob>={pol.prob_threshold} shap>={pol.shap_threshold} "
            f"train F1 {tuned.train_f1:.3f}; {args.out / 'policy.json'}")


def cmd_bench_noise(args):
    _require(args, "weights", "data")
    model = net.load_weights(args.weights)
    pool = synthgen.load_dataset(_split_dir(args.data, "train"))
    test = synthgen.load_dataset(_split_dir(args.data, "test"))
    if args.limit is not None:
        test = test[:int(args.limit)]
    kinds = tuple(k.strip() for k in str(args.kinds).split(",") if k.strip())
    for k in kinds:
        synthgen.NoiseSpec(k)
    table = bench.noise_sweep(model, pool, test, _csv_floats(args.amplitudes, "amplitudes"), kinds,
                              n_splits=int(args.splits), train_size=int(args.train_size),
                              seed=args.seed, baseline=args.baseline, threads=int(args.threads))
    paths = bench.report(table, args.out, float(args.width), float(args.height),
                         _range(args.amp_range, "amp-range"), _range(args.f1_range, "f1-range"))
    return f"bench-noise: {len(table)} rows -> {paths['sweep']}, {paths['figure']}"


# -- parser ----------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, help="run seed (default 0)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_io(p, split_help="dataset directory"):
    p.add_argument("--weights", help="weights file from `train`")
    p.add_argument("--data", help=split_help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapgate",
                                     description="SHAP-gated seismic event detection toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", help="write synthetic train/test datasets")
    _common(p)
    p.add_argument("--train", type=int, help="train windows (default 100, half signal)")
    p.add_argument("--test", dest="test_flag", type=int, help="test windows (default 1000)")
    p.add_argument("--scale", choices=("desk", "full"), help=f"full = {FULL_SCALE_TEST} test windows")
    p.set_defaults(func=cmd_gen_data, test=None)

    p = sub.add_parser("train", help="train the picker on a dataset")
    _common(p)
    p.add_argument("--data", help="dataset root or train split")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", "--lr", type=float)
    p.add_argument("--mask-sigma", type=float, help="target width in samples")
    p.add_argument("--flip", action=argparse.BooleanOptionalAction,
                   help="random per-channel polarity flips during training")
    p.add_argument("--schedule", choices=("constant", "cosine"), help="learning-rate schedule")
    p.add_argument("--decay-start", type=float,
                   help="cosine: fraction of epochs at the full rate before decaying")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score windows and write scored.csv")
    _common(p)
    _model_io(p, "dataset root or test split")
    p.add_argument("--policy", help="policy.json from tune-gate (default ProbOnly)")
    p.add_argument("--threshold", type=float, help="ProbOnly threshold when no policy (0.5)")
    p.add_argument("--baseline", choices=shapley.BASELINES)
    p.add_argument("--shap", action="store_true", help="also compute S6 (8 passes per window)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("explain", help="Grad-CAM heatmaps or Shapley attributions")
    esub = p.add_subparsers(dest="method", metavar="METHOD")
    esub.required = True
    e = esub.add_parser("gradcam", help="heatmap CSV + overlay SVG per window")
    _common(e)
    _model_io(e, "dataset root or test split")
    e.add_argument("--index", help="comma-separated window indices (default 0)")
    e.add_argument("--class", dest="cls", choices=net.CLASSES)
    e.add_argument("--layer", help="layer id (default merge0)")
    e.set_defaults(func=cmd_explain_gradcam)
    e = esub.add_parser("shap", help="per-window attributions and importance table")
    _common(e)
    _model_io(e, "dataset root or test split")
    e.add_argument("--baseline", choices=shapley.BASELINES)
    e.add_argument("--limit", type=int, help="only the first N windows")
    e.set_defaults(func=cmd_explain_shap)

    p = sub.add_parser("tune-gate", help="fit gate thresholds on the train split")
    _common(p)
    _model_io(p, "dataset root or train split")
    p.add_argument("--scored", help="scored.csv from `detect` (instead of --weights/--data)")
    p.add_argument("--kind", choices=[k.value for k in gate.PolicyKind])
    p.add_argument("--baseline", choices=shapley.BASELINES)
    p.set_defaults(func=cmd_tune_gate)

    p = sub.add_parser("bench-noise", help="noise sweep: sweep.csv + f1_vs_amplitude.svg")
    _common(p)
    _model_io(p, "dataset root with train/ (pool) and test/")
    p.add_argument("--kinds", help="comma-separated: harmonic,random")
    p.add_argument("--amplitudes", help="comma-separated relative amplitudes")
    p.add_argument("--splits", type=int, help="CV splits (default 5)")
    p.add_argument("--train-size", type=int, help="train windows per split (default 100)")
    p.add_argument("--limit", type=int, help="only the first N test windows")
    p.add_argument("--baseline", choices=shapley.BASELINES)
    p.add_argument("--width", type=float, help="figure width, inches")
    p.add_argument("--height", type=float, help="figure height, inches")
    p.add_argument("--amp-range", help="x-axis 'lo,hi'")
    p.add_argument("--f1-range", help="y-axis 'lo,hi'")
    p.set_defaults(func=cmd_bench_noise)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "test_flag"):
        args.test = args.test_flag
    command = args.command if args.command != "explain" else f"explain-{args.method}"
    try:
        resolve(args, command)
        summary = args.func(args)
    except ShapgateError as exc:
        print(f"shapgate {command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"shapgate {command}: error: {exc}", file=sys.stderr)
        return 3
    print(summary)
    return 0


def main():
    sys.exit(run())
