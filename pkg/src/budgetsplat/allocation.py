"""Static/dynamic partition from the motion-magnitude histogram."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .scene import DYNAMIC, STATIC, GaussianSet, to_dynamic, to_static

DEFAULT_BINS = 64
SMOOTH_WIDTH = 5
FALLBACK_ALPHA = 0.9
# a local maximum counts as a mode only if it clears these relative bars
MIN_PROMINENCE = 0.5
MIN_HEIGHT = 0.02
NOISE_SIGMAS = 2.0


class AllUniform(ValueError):
    """All magnitudes are equal; no histogram can be formed."""


@dataclass
class AllocationReport:
    histogram: list
    smoothed: list
    edges: list
    peaks: list
    chosen_pair: list | None
    valley_bin: int | None
    alpha_t: float
    tau_motion: float
    fallback: bool
    n_static: int = 0
    n_dynamic: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def smooth(hist, width=SMOOTH_WIDTH):
    """Centered moving average over a half-sample mirrored border.

    Mirroring about the outer bin edges (``h1 h0 | h0 h1 ...``) gives every
    bin total weight one, so the smoothed histogram keeps the raw count.
    """
    h = np.asarray(hist, dtype=np.float64)
    r = width // 2
    if width % 2 == 0 or r > h.size:
        raise ValueError("smoothing width must be odd and at most twice the bin count")
    padded = np.pad(h, r, mode="symmetric")
    return np.convolve(padded, np.ones(width) / width, mode="valid")


def build_histogram(magnitudes, bins=DEFAULT_BINS):
    """Raw counts, smoothed counts and bin edges over [min, max]."""
    m = np.asarray(magnitudes, dtype=np.float64)
    if bins < 8:
        raise ValueError("need at least 8 bins")
    if m.size < 2 or m.min() == m.max():
        raise AllUniform("magnitudes are all equal")
    raw, edges = np.histogram(m, bins=bins, range=(m.min(), m.max()))
    return raw.astype(np.int64), smooth(raw), edges


def local_maxima(smoothed):
    """Bins higher than both neighbours; a flat top counts once, at its centre."""
    h = np.asarray(smoothed, dtype=np.float64)
    if h.size == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.flatnonzero(np.concatenate([[True], h[1:] != h[:-1]]))
    ends = np.concatenate([starts[1:], [h.size]]) - 1
    out = []
    for s, e in zip(starts, ends):
        left = h[s - 1] if s > 0 else -np.inf
        right = h[e + 1] if e + 1 < h.size else -np.inf
        if h[s] > left and h[s] > right:
            out.append((s + e) // 2)
    return np.asarray(out, dtype=np.int64)


def _prominence(h, p):
    """Height of peak ``p`` above the higher of its two bounding minima.

    The histogram is zero outside its range, so a side with no taller bin
    bottoms out at 0. Among equal-height peaks the leftmost counts as taller.
    """
    start = p
    while start > 0 and h[start - 1] == h[p]:
        start -= 1
    idx = np.arange(h.size)
    higher = np.flatnonzero((h > h[p]) | ((h == h[p]) & (idx < start)))
    lo = higher[higher < p]
    hi = higher[higher > p]
    left_min = h[lo[-1]:p + 1].min() if lo.size else 0.0
    right_min = h[p:hi[0] + 1].min() if hi.size else 0.0
    return h[p] - max(left_min, right_min)


def significant_peaks(smoothed):
    """Local maxima that stand out from both their neighbourhood and count noise.

    A peak needs prominence of at least half its height and at least
    ``NOISE_SIGMAS`` Poisson standard deviations of its height.
    """
    h = np.asarray(smoothed, dtype=np.float64)
    peaks = local_maxima(h)
    top = h.max() if h.size else 0.0
    keep = []
    for p in peaks:
        prom = _prominence(h, p)
        if (h[p] >= MIN_HEIGHT * top and prom >= MIN_PROMINENCE * h[p]
                and prom >= NOISE_SIGMAS * np.sqrt(h[p])):
            keep.append(p)
    return np.asarray(keep, dtype=np.int64), peaks


def find_threshold(smoothed, magnitudes, edges=None, fallback_alpha=FALLBACK_ALPHA):
    """Valley between the two tallest modes and the matching motion threshold.

    Returns a dict with ``peaks``, ``chosen_pair``, ``valley_bin``,
    ``alpha_t``, ``tau_motion`` and ``fallback``.
    """
    m = np.asarray(magnitudes, dtype=np.float64)
    h = np.asarray(smoothed, dtype=np.float64)
    if edges is None:
        edges = np.linspace(m.min(), m.max(), h.size + 1)
    peaks, all_peaks = significant_peaks(h)
    res = {"peaks": [int(p) for p in all_peaks], "chosen_pair": None,
           "valley_bin": None, "fallback": False}
    if peaks.size >= 2:
        best, pair = -np.inf, None
        for i in range(peaks.size):
            for j in range(i + 1, peaks.size):
                s = h[peaks[i]] + h[peaks[j]]
                if s > best:
                    best, pair = s, (int(peaks[i]), int(peaks[j]))
        lo, hi = pair
        if hi - lo >= 2:
            valley = lo + 1 + int(np.argmin(h[lo + 1:hi]))
            alpha = float(np.count_nonzero(m < edges[valley]) / m.size)
            res.update(chosen_pair=list(pair), valley_bin=valley, alpha_t=alpha,
                       tau_motion=float(np.quantile(m, alpha)))
            return res
    res.update(fallback=True, alpha_t=float(fallback_alpha),
               tau_motion=float(np.quantile(m, fallback_alpha)))
    return res


def analyze(magnitudes, bins=DEFAULT_BINS, fallback_alpha=FALLBACK_ALPHA):
    """Full histogram analysis; degenerate inputs produce a fallback report."""
    m = np.asarray(magnitudes, dtype=np.float64)
    try:
        raw, sm, edges = build_histogram(m, bins)
    except AllUniform:
        tau = float(m[0]) if m.size else 0.0
        return AllocationReport([], [], [], [], None, None, float(fallback_alpha),
                                tau, True, extra={"reason": "all magnitudes equal"})
    res = find_threshold(sm, m, edges, fallback_alpha)
    return AllocationReport(raw.tolist(), sm.tolist(), edges.tolist(), res["peaks"],
                            res["chosen_pair"], res["valley_bin"], res["alpha_t"],
                            res["tau_motion"], res["fallback"])


def allocate(gs: GaussianSet, report: AllocationReport, magnitudes=None):
    """Re-tag by a single threshold: magnitude > tau is dynamic, else static."""
    m = gs.motion_magnitude() if magnitudes is None else np.asarray(magnitudes)
    dyn = m > report.tau_motion
    out = to_dynamic(gs, np.flatnonzero(dyn & (gs.kind == STATIC)))
    out = to_static(out, np.flatnonzero(~dyn & (out.kind == DYNAMIC)))
    report.n_static, report.n_dynamic = out.n_static, out.n_dynamic
    return out
