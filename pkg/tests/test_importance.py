import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetsplat.camera import look_at, pinhole
from budgetsplat.importance import (VAR_EPS, CueAccumulator, CueTable, ScorerConfig, fuse,
                                    inverse_variance, leave_one_out, max_eigenvalue,
                                    minmax, motion_cue, score)
from budgetsplat.render import render
from budgetsplat.scene import GaussianSet, random_set


def camera_at(dist, size=16):
    R, t = look_at([0.0, 0.0, -dist], [0.0, 0.0, 0.0])
    return pinhole(size, size, 50.0, R, t)


def test_static_motion_cue_is_translation_norm():
    gs = GaussianSet.from_static([[0, 0, 0]], [1, 1, 1], [0, 0, 0],
                                 translation=[[0.3, 0.0, 0.4]])
    assert motion_cue(gs)[0] == pytest.approx(0.5)


def test_max_eigenvalue_of_axis_aligned_gaussian():
    gs = GaussianSet.from_static([[0, 0, 0]], [1, 1, 1], np.log([[2.0, 1.0, 1.0]]))
    assert max_eigenvalue(gs)[0] == pytest.approx(4.0)


def test_inverse_depth_is_mean_over_views():
    gs = GaussianSet.from_static([[0, 0, 0]], [1, 1, 1], [-1.5] * 3, dtype=np.float64)
    acc = CueAccumulator(1)
    for d in (2.0, 4.0):
        acc.add(render(gs, camera_at(d), 0.0, training_mode=True))
    assert acc.geom(gs)[0, 2] == pytest.approx(0.375)


def test_identical_contributions_give_inverse_epsilon():
    assert inverse_variance([np.array([0.3, 0.7])] * 4, 2) == pytest.approx(1 / VAR_EPS)


def test_variance_needs_two_samples():
    np.testing.assert_array_equal(inverse_variance([np.ones(3)], 3), np.zeros(3))


def test_closed_gate_has_zero_loo_residual():
    gs = random_set(4, np.random.default_rng(0), extent=0.4, dtype=np.float64)
    gs.gate[:] = 1.0
    gs.gate[1] = 0.0
    loo = leave_one_out(gs, [camera_at(3.0)], [0.0])
    assert loo[1] == 0.0
    assert np.all(loo[[0, 2, 3]] >= 0.0)


def test_loo_matches_brute_force_rebuild():
    rng = np.random.default_rng(1)
    pos = rng.uniform(-0.3, 0.3, (2, 3))
    col = rng.uniform(0.2, 1.0, (2, 3))
    gs = GaussianSet.from_static(pos, col, [[-1.2] * 3] * 2, opacity=[0.7, 0.6],
                                 dtype=np.float64)
    views = [camera_at(3.0), camera_at(2.5)]
    loo = leave_one_out(gs, views, [0.0, 0.0])
    for i in range(2):
        j = 1 - i
        alone = GaussianSet.from_static(pos[j:j + 1], col[j], [-1.2] * 3,
                                        opacity=[0.7, 0.6][j], dtype=np.float64)
        expect = sum(np.sum(np.abs(render(gs, v, 0.0).image - render(alone, v, 0.0).image))
                     for v in views)
        assert loo[i] == pytest.approx(expect, rel=1e-12)


def test_single_gaussian_fuses_to_half():
    t = CueTable(np.ones((1, 5)), np.ones((1, 3)))
    np.testing.assert_array_equal(fuse(t), [0.5])


def test_dominating_gaussian_fuses_to_endpoints():
    t = CueTable(np.array([[5.0, 1, 3, 2, 9], [1.0, 0, 1, 1, 0]]),
                 np.array([[4.0, 7, 2], [0.0, 1, 1]]))
    np.testing.assert_allclose(fuse(t), [1.0, 0.0])


def _fuse_oracle(geom, perc, w1, w2, lam):
    def norm(col):
        lo, hi = min(col), max(col)
        return [0.5 if hi == lo else (x - lo) / (hi - lo) for x in col]
    n = len(geom)
    gcols = [norm([geom[i][k] for i in range(n)]) for k in range(5)]
    pcols = [norm([perc[i][k] for i in range(n)]) for k in range(3)]
    raw = [lam * sum(w1[k] * gcols[k][i] for k in range(5))
           + sum(w2[k] * pcols[k][i] for k in range(3)) for i in range(n)]
    return norm(raw)


def test_fuse_matches_independent_recomputation():
    rng = np.random.default_rng(2)
    geom, perc = rng.exponential(size=(100, 5)), rng.exponential(size=(100, 3))
    cfg = ScorerConfig(w1=(1.0, 0.5, 2.0, 0.3, 1.2), w2=(0.7, 1.0, 0.1), lambda_gm=1.7)
    got = fuse(CueTable(geom, perc), cfg)
    expect = _fuse_oracle(geom.tolist(), perc.tolist(), cfg.w1, cfg.w2, cfg.lambda_gm)
    np.testing.assert_allclose(got, expect, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1),
       scale=st.lists(st.floats(0.01, 100.0), min_size=8, max_size=8),
       shift=st.lists(st.floats(-10.0, 10.0), min_size=8, max_size=8))
def test_fuse_is_invariant_to_affine_cue_units(seed, scale, shift):
    rng = np.random.default_rng(seed)
    g, p = rng.uniform(size=(30, 5)), rng.uniform(size=(30, 3))
    s, b = np.asarray(scale), np.asarray(shift)
    a = fuse(CueTable(g, p))
    c = fuse(CueTable(g * s[:5] + b[:5], p * s[5:] + b[5:]))
    np.testing.assert_allclose(a, c, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 50))
def test_fused_scores_in_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    m = fuse(CueTable(rng.normal(size=(n, 5)), rng.normal(size=(n, 3))))
    assert m.shape == (n,) and np.all((m >= 0) & (m <= 1))


def test_minmax_constant_column():
    np.testing.assert_array_equal(minmax(np.array([[2.0, 1.0], [2.0, 3.0]])),
                                  [[0.5, 0.0], [0.5, 1.0]])


def test_weights_validation():
    with pytest.raises(ValueError):
        ScorerConfig(w1=(1, 1, 1))
    with pytest.raises(ValueError):
        ScorerConfig(lambda_gm=0)


def test_score_ranks_occluded_gaussian_low():
    front = GaussianSet.from_static([[0, 0, -0.5]], [0.9, 0.2, 0.1], [-1.0] * 3,
                                    opacity=0.99, dtype=np.float64)
    hidden = GaussianSet.from_static([[0, 0, 0.5]], [0.1, 0.8, 0.1], [-2.5] * 3,
                                     opacity=0.3, dtype=np.float64)
    gs = front.concat(hidden)
    views = [camera_at(3.0), camera_at(3.2)]
    gts = [render(front, v, 0.0).image for v in views]
    M, table = score(gs, views, [0.0, 0.0], gts, ScorerConfig(exact_loo=True))
    assert M[0] > M[1]
    assert len(table) == 2
