import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from budgetsplat.allocation import (FALLBACK_ALPHA, AllocationReport, AllUniform, allocate,
                                    analyze, build_histogram, find_threshold, local_maxima,
                                    significant_peaks, smooth)
from budgetsplat.scene import DYNAMIC, STATIC, random_set


def bimodal(seed, n=1000):
    rng = np.random.default_rng(seed)
    k = int(0.8 * n)
    m = np.abs(np.concatenate([rng.normal(0.05, 0.01, k), rng.normal(0.5, 0.05, n - k)]))
    return m, np.r_[np.zeros(k), np.ones(n - k)]


def test_histogram_direct_binning():
    m = np.zeros(50)
    m[17] = 1.0
    raw, sm, edges = build_histogram(m, 10)
    assert raw[0] == 49 and raw[9] == 1 and raw[1:9].sum() == 0
    assert edges[0] == 0.0 and edges[-1] == 1.0


@settings(max_examples=100)
@given(h=st.lists(st.integers(0, 10_000), min_size=8, max_size=128))
def test_smoothing_preserves_total(h):
    assert abs(smooth(h).sum() - sum(h)) <= 1e-9 * max(1, sum(h))


def test_all_equal_magnitudes_raise_for_histogram():
    with pytest.raises(AllUniform):
        build_histogram(np.full(10, 0.3))


def test_bimodal_sample_has_two_modes():
    m, _ = bimodal(0)
    _, sm, _ = build_histogram(m)
    peaks, _ = significant_peaks(sm)
    assert peaks.size == 2


def test_twin_peaks_valley_is_centre():
    h = np.array([0, 2, 6, 10, 6, 2, 1, 2, 6, 10, 6, 2, 0], dtype=float)
    res = find_threshold(h, np.linspace(0, 1, 100), np.linspace(0, 1, h.size + 1))
    assert res["chosen_pair"] == [3, 9]
    assert res["valley_bin"] == 6
    assert not res["fallback"]


def test_bimodal_threshold_splits_modes():
    m, _ = bimodal(1)
    rep = analyze(m)
    assert 0.1 < rep.tau_motion < 0.4
    assert abs(np.mean(m < rep.tau_motion) - 0.8) <= 0.02
    assert not rep.fallback


def test_unimodal_uses_fallback_quantile():
    m = np.abs(np.random.default_rng(2).normal(0.0, 0.02, 2000))
    rep = analyze(m)
    assert rep.fallback and rep.alpha_t == FALLBACK_ALPHA
    assert np.mean(m > rep.tau_motion) == pytest.approx(0.1, abs=0.01)


def test_plateau_counts_as_one_peak():
    assert list(local_maxima([0, 1, 3, 3, 3, 1, 0])) == [3]
    assert list(local_maxima([5, 5, 5])) == [1]


@settings(max_examples=60, deadline=None)
@given(m=st.lists(st.floats(0, 10, allow_nan=False), min_size=0, max_size=300))
def test_analyze_never_crashes(m):
    rep = analyze(np.asarray(m, dtype=float))
    assert isinstance(rep, AllocationReport)
    assert np.isfinite(rep.tau_motion)


def test_threshold_above_everything_makes_all_static():
    gs = random_set(20, np.random.default_rng(0), n_dynamic=7)
    rep = analyze(gs.motion_magnitude())
    rep.tau_motion = float(gs.motion_magnitude().max() + 1)
    out = allocate(gs, rep)
    assert out.n_dynamic == 0 and rep.n_static == 20


def test_threshold_below_everything_makes_all_dynamic():
    gs = random_set(20, np.random.default_rng(1), n_dynamic=7)
    rep = analyze(gs.motion_magnitude())
    rep.tau_motion = -1e-9
    out = allocate(gs, rep)
    assert out.n_static == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.floats(0.05, 0.95))
def test_partition_matches_elementwise_threshold(seed, q):
    gs = random_set(60, np.random.default_rng(seed), n_dynamic=20)
    mag = gs.motion_magnitude()
    rep = analyze(mag)
    rep.tau_motion = float(np.quantile(mag, q))
    out = allocate(gs, rep)
    expect = np.where(mag > rep.tau_motion, DYNAMIC, STATIC)
    np.testing.assert_array_equal(out.kind, expect)
    # a linear static motion keeps its magnitude when sampled into keyframes
    was_static = gs.kind == STATIC
    np.testing.assert_allclose(out.motion_magnitude()[was_static], mag[was_static],
                               rtol=1e-4, atol=1e-6)


def test_report_json_roundtrip():
    rep = analyze(bimodal(3)[0])
    back = AllocationReport.from_json(rep.to_json())
    assert back == rep
