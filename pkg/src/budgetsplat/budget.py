"""Differentiable counting gate, budget loss and gate-temperature schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import GaussianSet


@dataclass
class BudgetConfig:
    n_target: int
    tau_init: float = 1.0
    tau_end: float = 0.01
    k_start: int = 0
    k_end: int = 1
    lambda_b: float = 1e-7

    def __post_init__(self):
        if not self.tau_init > self.tau_end > 0:
            raise ValueError("need tau_init > tau_end > 0")
        if not self.k_start < self.k_end:
            raise ValueError("need k_start < k_end")
        if self.n_target < 1:
            raise ValueError("n_target must be >= 1")


def gate(M, tau):
    """Hard-sigmoid gate ``clamp((M - 0.5) / tau + 0.5, 0, 1)``."""
    return np.clip((np.asarray(M, dtype=np.float64) - 0.5) / tau + 0.5, 0.0, 1.0)


def gate_grad(M, tau):
    """Subgradient of :func:`gate`: ``1/tau`` inside the band, 0 where clamped."""
    raw = (np.asarray(M, dtype=np.float64) - 0.5) / tau + 0.5
    return np.where((raw > 0.0) & (raw < 1.0), 1.0 / tau, 0.0)


def proxy_count(activations):
    return float(np.sum(np.asarray(activations, dtype=np.float64)))


def budget_loss(n_proxy, n_target):
    """Quadratic budget penalty and its derivative with respect to the proxy count."""
    d = float(n_proxy) - float(n_target)
    return d * d, 2.0 * d


def anneal_temperature(k, cfg: BudgetConfig):
    """Exponential decay from tau_init at k_start to tau_end at k_end, clamped outside."""
    frac = (min(max(k, cfg.k_start), cfg.k_end) - cfg.k_start) / (cfg.k_end - cfg.k_start)
    if frac <= 0.0:
        return float(cfg.tau_init)
    if frac >= 1.0:
        return float(cfg.tau_end)
    return float(cfg.tau_init * (cfg.tau_end / cfg.tau_init) ** frac)


def binarize(gs: GaussianSet, threshold=0.5):
    """Drop Gaussians whose gate is below ``threshold``; survivors get gate 1."""
    keep = np.flatnonzero(gs.gate >= threshold)
    out = gs.take(keep)
    out.gate[:] = 1.0
    return out, keep
