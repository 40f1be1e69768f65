"""Median-split KD ordering of point sets."""
import numpy as np


def kd_reorder(points):
    """Depth-first, left-to-right leaf order of a median-split KD tree.

    Each node splits along its largest-extent axis (lowest axis on ties) at
    the median of a stable sort, so the first half keeps lower coordinates.
    """
    p = np.asarray(points, dtype=np.float64)
    n = p.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    out = []
    stack = [np.arange(n)]
    while stack:
        idx = stack.pop()
        if idx.size <= 1:
            out.append(idx)
            continue
        sub = p[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        srt = idx[np.argsort(sub[:, axis], kind="stable")]
        half = srt.size // 2
        # right pushed first so the left half is emitted first
        stack.append(srt[half:])
        stack.append(srt[:half])
    return np.concatenate(out)
