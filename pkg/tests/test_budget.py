import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from budgetsplat.budget import (BudgetConfig, anneal_temperature, binarize, budget_loss,
                                gate, gate_grad, proxy_count)
from budgetsplat.scene import random_set

taus = st.floats(1e-3, 10.0)
scores = st.floats(0.0, 1.0)


@pytest.mark.parametrize("tau", [0.01, 0.3, 1.0, 7.0])
def test_gate_symmetry_point(tau):
    assert gate(0.5, tau) == 0.5


def test_gate_table():
    assert gate(1.0, 1.0) == 1.0
    assert gate(0.2, 0.01) == 0.0
    assert gate(0.0, 1.0) == 0.0
    assert gate(0.6, 0.5) == pytest.approx(0.7)


@settings(max_examples=200)
@given(m=scores, tau=taus)
def test_gate_in_unit_interval(m, tau):
    assert 0.0 <= float(gate(m, tau)) <= 1.0


@settings(max_examples=200)
@given(a=scores, b=scores, tau=taus)
def test_gate_monotone(a, b, tau):
    lo, hi = min(a, b), max(a, b)
    assert gate(lo, tau) <= gate(hi, tau)


@settings(max_examples=200)
@given(m=scores, tau=taus)
def test_gate_grad_matches_fd_off_kinks(m, tau):
    h = 1e-3 * tau
    raw = (m - 0.5) / tau + 0.5
    assume(min(abs(raw), abs(raw - 1.0)) > 2e-3)
    fd = (gate(m + h, tau) - gate(m - h, tau)) / (2 * h)
    assert gate_grad(m, tau) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_proxy_count_table():
    assert proxy_count([1.0, 0.5, 0.0, 0.25]) == 1.75
    assert proxy_count(np.ones(37)) == 37
    assert proxy_count([]) == 0


def test_budget_loss_table():
    assert budget_loss(500, 500) == (0.0, 0.0)
    loss, grad = budget_loss(110_000, 100_000)
    assert loss == 1e8 and grad == 2e4


def test_budget_loss_gradient_fd():
    h = 1e-4
    fd = (budget_loss(123.4 + h, 100)[0] - budget_loss(123.4 - h, 100)[0]) / (2 * h)
    assert budget_loss(123.4, 100)[1] == pytest.approx(fd, rel=1e-6)


def test_anneal_endpoints_and_midpoint():
    cfg = BudgetConfig(100, 1.0, 0.01, 10, 110)
    assert abs(anneal_temperature(10, cfg) - 1.0) <= 1e-12
    assert abs(anneal_temperature(110, cfg) - 0.01) <= 1e-12
    assert anneal_temperature(60, cfg) == pytest.approx(0.1, rel=1e-12)
    assert anneal_temperature(0, cfg) == 1.0
    assert anneal_temperature(500, cfg) == 0.01


@settings(max_examples=100)
@given(k1=st.integers(0, 200), k2=st.integers(0, 200))
def test_anneal_monotone_non_increasing(k1, k2):
    cfg = BudgetConfig(100, 1.0, 0.01, 20, 180)
    lo, hi = min(k1, k2), max(k1, k2)
    assert anneal_temperature(hi, cfg) <= anneal_temperature(lo, cfg)


@pytest.mark.parametrize("kw", [dict(tau_init=0.01, tau_end=1.0), dict(tau_end=0.0),
                                dict(k_start=5, k_end=5), dict(n_target=0)])
def test_budget_config_validation(kw):
    base = dict(n_target=10, tau_init=1.0, tau_end=0.01, k_start=0, k_end=10)
    base.update(kw)
    with pytest.raises(ValueError):
        BudgetConfig(**base)


def test_binarize_table():
    gs = random_set(3, np.random.default_rng(0))
    gs.gate[:] = [0.9, 0.1, 0.5]
    out, keep = binarize(gs)
    assert list(keep) == [0, 2]
    assert np.all(out.gate == 1.0)
    np.testing.assert_array_equal(out.position, gs.position[[0, 2]])


def test_binarize_all_open_is_identity():
    gs = random_set(5, np.random.default_rng(1), n_dynamic=2)
    gs.gate[:] = 1.0
    out, keep = binarize(gs)
    assert list(keep) == list(range(5))
    for k, v in gs.arrays().items():
        np.testing.assert_array_equal(v, getattr(out, k))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), thr=st.floats(0.05, 0.95))
def test_binarize_matches_filter(seed, thr):
    gs = random_set(40, np.random.default_rng(seed), n_dynamic=8)
    out, keep = binarize(gs, thr)
    expect = [i for i in range(40) if gs.gate[i] >= thr]
    assert list(keep) == expect
    assert len(out) == len(expect)
    assert out.n_dynamic == sum(gs.kind[i] for i in expect)
