import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapgate import model as net
from shapgate import shapley
from shapgate.errors import ValidationError
from shapgate.synthgen import Window

from conftest import TOY


def brute_shapley(v):
    """Permutation-average definition over the three players."""
    phi = np.zeros(3)
    for order in itertools.permutations(range(3)):
        mask = [0, 0, 0]
        for player in order:
            before = v[tuple(mask)]
            mask[player] = 1
            phi[player] += v[tuple(mask)] - before
    return phi / factorial(3)


def test_masks_order():
    assert shapley.MASKS[0] == (0, 0, 0) and shapley.MASKS[7] == (1, 1, 1)
    assert shapley.MASK_INDEX[(1, 0, 1)] == 5


def test_mask_coalition_examples(rng):
    x = rng.normal(size=(3, 50)).astype(np.float32)
    w = Window(x, "noise")
    assert np.array_equal(shapley.mask_coalition(w, (1, 1, 1)).samples, x)
    assert not shapley.mask_coalition(w, (0, 0, 0)).samples.any()
    once = shapley.mask_coalition(x, (1, 0, 1), "channel_mean")
    twice = shapley.mask_coalition(once, (1, 0, 1), "channel_mean")
    np.testing.assert_allclose(once, twice, atol=1e-7)
    np.testing.assert_allclose(once[1], x[1].mean(), rtol=1e-6)
    assert np.array_equal(once[0], x[0])
    with pytest.raises(ValidationError):
        shapley.mask_coalition(x, (1, 1, 1), "median")


def test_carrier_game():
    v = {m: float(m[2]) for m in shapley.MASKS}
    a = shapley.shapley_from_values(v, "P")
    assert (a.phi_E, a.phi_N, a.phi_Z) == (0.0, 0.0, 1.0)


def test_additive_game():
    v = {m: 0.2 * m[0] + 0.3 * m[1] + 0.5 * m[2] for m in shapley.MASKS}
    np.testing.assert_allclose(shapley.shapley_from_values(v, "P").as_array(), [0.2, 0.3, 0.5],
                               atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_formulas_match_permutation_definition(values):
    v = dict(zip(shapley.MASKS, values))
    phi = shapley.shapley_from_values(v, "S").as_array()
    np.testing.assert_allclose(phi, brute_shapley(v), atol=1e-12)
    assert abs(phi.sum() - (v[1, 1, 1] - v[0, 0, 0])) <= 1e-12


def test_matrix_matches_scalar(rng):
    V = rng.random((20, 8))
    mat = shapley.shapley_matrix(V)
    for i in range(20):
        np.testing.assert_allclose(mat[i], brute_shapley(dict(zip(shapley.MASKS, V[i]))), atol=1e-12)


def test_coalition_values_identity(toy32, rng):
    x = rng.normal(size=(3, 64)).astype(np.float32)
    probs, _ = net.forward(toy32, x)
    for cls in ("P", "S"):
        cv = shapley.coalition_values(toy32, x, cls)
        assert cv[(1, 1, 1)] == pytest.approx(float(net.detection_score(probs, cls)[0]), abs=1e-7)
        assert all(0 <= cv[m] <= 1 for m in shapley.MASKS)


def _null_e(model):
    m = model.copy()
    m.layers["enc0"].weights[:, 0, :] = 0
    return m


def test_null_player(toy64, rng):
    m = _null_e(toy64)
    for _ in range(5):
        x = rng.normal(size=(3, 64))
        for cls in ("P", "S"):
            cv = shapley.coalition_values(m, x, cls)
            for mask in shapley.MASKS:
                assert cv[mask] == cv[(0, *mask[1:])]
            att = shapley.shapley_from_values(cv)
            assert att.phi_E == 0.0


def test_symmetry(toy64, rng):
    # identical first-layer weights for E and N, fed identical channels: phi_E == phi_N
    m = toy64.copy()
    m.layers["enc0"].weights[:, 1, :] = m.layers["enc0"].weights[:, 0, :]
    x = rng.normal(size=(3, 64))
    x[1] = x[0]
    p, s = shapley.attribute(m, x)
    assert p.phi_E == pytest.approx(p.phi_N, abs=1e-12)
    assert s.phi_E == pytest.approx(s.phi_N, abs=1e-12)
    # swapping the two channels (and their weights) swaps attributions
    m2 = toy64.copy()
    w = m2.layers["enc0"].weights
    w[:, [0, 1], :] = w[:, [1, 0], :]
    y = rng.normal(size=(3, 64))
    a, _ = shapley.attribute(toy64, y)
    b, _ = shapley.attribute(m2, y[[1, 0, 2]])
    assert a.phi_E == pytest.approx(b.phi_N, abs=1e-12)
    assert a.phi_N == pytest.approx(b.phi_E, abs=1e-12)


def test_eight_forwards_per_window(toy32, rng, monkeypatch):
    calls = []
    real = net.forward

    def counting(model, windows, keep_trace=True):
        calls.append(len(net.as_batch(model, windows)))
        return real(model, windows, keep_trace)

    monkeypatch.setattr(shapley.net, "forward", counting)
    shapley.attribute(toy32, rng.normal(size=(3, 64)).astype(np.float32))
    assert sum(calls) == 8
    calls.clear()
    shapley.coalition_scores(toy32, rng.normal(size=(5, 3, 64)).astype(np.float32), batch_size=7)
    assert sum(calls) == 40


def test_efficiency_many_windows():
    m = net.assemble(TOY)
    x = np.random.default_rng(3).normal(size=(1000, 3, 64)).astype(np.float32)
    v_p, v_s = shapley.coalition_scores(m, x, batch_size=256)
    for v in (v_p, v_s):
        phi = shapley.shapley_matrix(v)
        assert np.max(np.abs(phi.sum(axis=1) - (v[:, 7] - v[:, 0]))) <= 1e-6


def test_importance_single_window():
    st_ = shapley.importance_from_phi(np.array([[0.1, -0.4, 0.2]]), "P", "signal")
    np.testing.assert_allclose(st_.mean_abs, [0.1, 0.4, 0.2])
    np.testing.assert_array_equal(st_.ci_lo, st_.mean_abs)
    np.testing.assert_array_equal(st_.ci_hi, st_.mean_abs)
    np.testing.assert_array_equal(st_.dominance, [0, 100, 0])


def test_importance_identical_and_ties():
    st_ = shapley.importance_from_phi(np.tile([0.3, 0.1, 0.2], (7, 1)), "S", "noise")
    np.testing.assert_array_equal(st_.dominance, [100, 0, 0])
    tie = shapley.importance_from_phi(np.array([[0.2, 0.2, -0.2]]), "S", "noise")
    np.testing.assert_array_equal(tie.dominance, [100, 0, 0])


def test_importance_ci_oracle(rng):
    phi = rng.normal(size=(40, 3))
    st_ = shapley.importance_from_phi(phi, "P", "signal")
    a = np.abs(phi)
    half = 1.96 * a.std(axis=0, ddof=1) / np.sqrt(40)
    np.testing.assert_allclose(st_.ci_lo, a.mean(axis=0) - half)
    np.testing.assert_allclose(st_.ci_hi, a.mean(axis=0) + half)
    assert st_.dominance.sum() == pytest.approx(100)
    assert np.all(st_.ci_lo <= st_.mean_abs) and np.all(st_.mean_abs <= st_.ci_hi)
    rows = list(st_.rows())
    assert [r["component"] for r in rows] == ["E", "N", "Z"]


def test_batch_importance(toy32, small_windows):
    m = net.assemble(net.ModelConfig(seed=2))
    st_ = shapley.batch_importance(m, small_windows, "P", "mixed")
    assert st_.n == len(small_windows) and st_.abs_phi.shape == (len(small_windows), 3)
    with pytest.raises(ValidationError):
        shapley.batch_importance(m, [], "P", "signal")
    with pytest.raises(ValidationError):
        shapley.batch_importance(m, small_windows, "N", "signal")
