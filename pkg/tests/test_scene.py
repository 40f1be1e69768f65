import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetsplat.scene import (DYNAMIC, STATIC, GaussianSet, evaluate_dynamic_state,
                               normalize_quaternions, random_set, to_dynamic, to_static,
                               window_weight)


def test_linear_midpoint_of_two_keyframes():
    tp = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    tr = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]])
    s = evaluate_dynamic_state(tp, tr, -0.25, 1.25, 20.0, 0.5)
    np.testing.assert_allclose(s.position, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(s.rotation, [1.0, 0, 0, 0])


def test_wide_window_saturates():
    assert window_weight(0.5, -1.0, 2.0, 1e4) >= 0.999


def test_window_at_start_edge():
    # sigmoid(0) * sigmoid(4) worked by hand: 0.5 * 0.98201379 = 0.4910069
    assert window_weight(0.4, 0.4, 0.6, 20.0) == pytest.approx(0.49100689, abs=1e-7)


def test_keyframe_hits_are_exact():
    rng = np.random.default_rng(0)
    tp = rng.normal(size=(4, 3))
    tr = normalize_quaternions(rng.normal(size=(4, 4)))
    for k, t in enumerate(np.linspace(0, 1, 4)):
        s = evaluate_dynamic_state(tp, tr, -0.25, 1.25, 20.0, t)
        np.testing.assert_allclose(s.position, tp[k], atol=1e-12)
        np.testing.assert_allclose(s.rotation, tr[k], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0, 1), ts=st.floats(-0.5, 1.5), te=st.floats(-0.5, 1.5),
       k=st.floats(0.1, 100))
def test_window_weight_in_unit_interval(t, ts, te, k):
    w = window_weight(t, ts, te, k)
    assert 0.0 <= w <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0, 1))
def test_dynamic_rotation_is_unit(seed, t):
    rng = np.random.default_rng(seed)
    s = evaluate_dynamic_state(rng.normal(size=(4, 3)), rng.normal(size=(4, 4)),
                               0.0, 1.0, 20.0, t)
    assert np.linalg.norm(s.rotation) == pytest.approx(1.0)


def test_kind_counts_and_side_rows():
    gs = random_set(10, np.random.default_rng(1), n_dynamic=4)
    assert gs.n_static == 6 and gs.n_dynamic == 4 and len(gs) == 10
    assert gs.translation.shape == (6, 3)
    assert gs.traj_position.shape == (4, gs.keyframes, 3)
    rows = gs.side_rows()
    assert sorted(rows[gs.kind == STATIC]) == list(range(6))
    assert sorted(rows[gs.kind == DYNAMIC]) == list(range(4))
    gs.check()


def test_take_keeps_side_arrays_aligned():
    gs = random_set(12, np.random.default_rng(2), n_dynamic=5)
    idx = np.array([11, 3, 0, 7, 7])
    sub = gs.take(idx)
    rows, srows = gs.side_rows(), sub.side_rows()
    for j, i in enumerate(idx):
        if gs.kind[i] == STATIC:
            np.testing.assert_array_equal(sub.translation[srows[j]], gs.translation[rows[i]])
        else:
            np.testing.assert_array_equal(sub.traj_position[srows[j]],
                                          gs.traj_position[rows[i]])
        np.testing.assert_array_equal(sub.color[j], gs.color[i])


def test_static_dynamic_roundtrip_preserves_motion():
    gs = random_set(8, np.random.default_rng(3))
    dyn = to_dynamic(gs, np.arange(8))
    back = to_static(dyn, np.arange(8))
    np.testing.assert_allclose(dyn.motion_magnitude(), gs.motion_magnitude(), rtol=1e-5)
    np.testing.assert_allclose(back.translation, gs.translation, atol=1e-6)
    np.testing.assert_allclose(back.position, gs.position, atol=1e-6)


def test_static_motion_magnitude_is_translation_norm():
    gs = GaussianSet.from_static([[0, 0, 0]], [1, 1, 1], [0, 0, 0],
                                 translation=[[0.3, 0.0, 0.4]])
    assert gs.motion_magnitude()[0] == pytest.approx(0.5)


def test_empty_set_is_valid():
    gs = GaussianSet.empty()
    gs.check()
    assert len(gs) == 0 and gs.motion_magnitude().size == 0
