import re

import numpy as np
import pytest

from shapgate import bench, gate
from shapgate import model as net
from shapgate.errors import ValidationError
from shapgate.synthgen import GenConfig, NoiseSpec, generate


@pytest.fixture(scope="module")
def tiny():
    m = net.assemble(net.ModelConfig(seed=4))
    pool = generate(GenConfig(), 6, 6, seed=21)
    test = generate(GenConfig(), 4, 4, seed=22)
    return m, pool, test


def test_metrics_reference_counts():
    p, r, f1 = bench.metrics(bench.ConfusionCounts(4360, 50, 140, 4450))
    assert (round(p, 4), round(r, 4), round(f1, 4)) == (0.9887, 0.9689, 0.9787)
    assert (round(p, 2), round(r, 2), round(f1, 2)) == (0.99, 0.97, 0.98)
    _, _, f1 = bench.metrics(bench.ConfusionCounts(4314, 45, 186, 4455))
    assert round(f1, 4) == 0.9739 and round(f1, 2) == 0.97


def test_metrics_zero_conventions():
    assert bench.metrics(bench.ConfusionCounts(0, 0, 5, 5)) == (0.0, 0.0, 0.0)
    assert bench.metrics(bench.ConfusionCounts(0, 0, 0, 9)) == (0.0, 0.0, 0.0)


def test_confusion_counts_total():
    c = bench.confusion([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 1) and c.total == 5


def test_overlap_rejected(tiny):
    m, pool, test = tiny
    with pytest.raises(ValidationError):
        bench.run_split(m, pool, pool[:3], NoiseSpec("random", 0.0))
    with pytest.raises(ValidationError):
        bench.noise_sweep(m, pool, test + pool[:1], [0.0], ["random"], n_splits=1, train_size=4)


def test_run_split_deterministic(tiny):
    m, pool, test = tiny
    a = bench.run_split(m, pool, test, NoiseSpec("harmonic", 1.0), seed=3)
    b = bench.run_split(m, pool, test, NoiseSpec("harmonic", 1.0), seed=3)
    assert a == b and len(a) == 3
    for r in a:
        assert r.counts.total == len(test)
        assert (r.precision, r.recall, r.f1) == bench.metrics(r.counts)


def test_tuning_only_sees_train(tiny):
    m, pool, test = tiny
    seen = []

    def spy(p, s, y, kind):
        seen.append((np.array(p), np.array(s), np.array(y)))
        return gate.tune_thresholds(p, s, y, kind)

    spec = NoiseSpec("random", 0.5)
    bench.run_split(m, pool, test, spec, seed=1, tuner=spy)
    train_scores = bench.score_windows(m, bench._noisy(pool, spec, (1, 0, 0)))
    assert len(seen) == 3
    for p, s, y in seen:
        assert len(p) == len(pool)
        np.testing.assert_array_equal(p, train_scores.event_prob)
        np.testing.assert_array_equal(s, train_scores.s6)


def test_sweep_shape_and_summary(tiny):
    m, pool, test = tiny
    amps, kinds = [0.0, 2.0], ["harmonic", "random"]
    table = bench.noise_sweep(m, pool, test, amps, kinds, n_splits=2, train_size=6, seed=5)
    assert len(table) == len(kinds) * len(amps) * 2 * 3
    keys = [(r.kind, r.amplitude, r.split, r.policy) for r in table]
    assert keys == sorted(keys, key=lambda k: (kinds.index(k[0]), amps.index(k[1]), k[2],
                                               ["ProbOnly", "ShapOnly", "Combined"].index(k[3])))
    summary = bench.summarize(table)
    assert len(summary) == len(kinds) * len(amps) * 3
    for row in summary:
        f1 = [r.f1 for r in table if (r.kind, r.amplitude, r.policy)
              == (row["kind"], row["amplitude"], row["policy"])]
        assert row["f1_mean"] == pytest.approx(np.mean(f1))
        assert row["f1_sd"] == pytest.approx(np.std(f1, ddof=1))
    threaded = bench.noise_sweep(m, pool, test, amps, kinds, n_splits=2, train_size=6, seed=5,
                                 threads=3)
    assert threaded == table


def test_draw_train_split_balanced(tiny):
    _, pool, _ = tiny
    sub = bench.draw_train_split(pool, 8, np.random.default_rng(0))
    assert len(sub) == 8 and sum(w.is_signal for w in sub) == 4
    with pytest.raises(ValidationError):
        bench.draw_train_split(pool, 40, np.random.default_rng(0))


def test_report_files_and_roundtrip(tiny, tmp_path):
    m, pool, test = tiny
    table = bench.noise_sweep(m, pool, test, [0.0, 1.0], ["harmonic", "random"], n_splits=2,
                              train_size=6)
    paths = bench.report(table, tmp_path, width=5, height=3, amp_range=(0, 1.2))
    assert bench.read_sweep_csv(paths["sweep"]) == table
    header = paths["sweep"].read_text().splitlines()[0]
    assert header == "kind,amplitude,split,policy,tp,fp,fn,tn,precision,recall,f1"
    svg = paths["figure"].read_text()
    curves = re.findall(r'<g id="(curve-[^"]+)"', svg)
    assert sorted(curves) == sorted(f"curve-{k}-{p}" for k in ("harmonic", "random")
                                    for p in ("ProbOnly", "ShapOnly", "Combined"))
    for c in curves:
        # each line group holds exactly one clipped polyline path (markers live in <defs>)
        block = svg.split(f'<g id="{c}">', 1)[1].split("</g>", 1)[0]
        assert len(re.findall(r'<path d="M[^"]*"\s+clip-path', block)) == 1
    assert 'width="360pt"' in svg and 'height="216pt"' in svg
    # deterministic bytes
    again = bench.report(table, tmp_path / "again", width=5, height=3, amp_range=(0, 1.2))
    assert again["figure"].read_bytes() == paths["figure"].read_bytes()
    assert again["sweep"].read_bytes() == paths["sweep"].read_bytes()


def test_report_empty(tmp_path):
    with pytest.raises(ValidationError):
        bench.report([], tmp_path)
