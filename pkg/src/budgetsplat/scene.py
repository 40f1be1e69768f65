"""Gaussian containers, per-frame dynamic state and quaternion helpers.

A :class:`GaussianSet` is a structure-of-arrays: core attributes cover every
Gaussian, while the static and dynamic side tables hold one row per Gaussian of
that kind, in the same relative order as the global index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATIC = 0
DYNAMIC = 1

CORE_FIELDS = ("position", "rotation", "log_scale", "opacity_logit", "color",
               "importance", "gate")
STATIC_FIELDS = ("translation",)
DYNAMIC_FIELDS = ("traj_position", "traj_rotation", "window_start",
                  "window_end", "window_sharpness")

DEFAULT_KEYFRAMES = 4
DEFAULT_SHARPNESS = 20.0
# full-span window; endpoints sit outside [0, 1] so sequence ends stay lit
FULL_WINDOW = (-0.25, 1.25)
WINDOW_LIMITS = (-0.5, 1.5)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-6, 1 - 1e-6)
    return np.log(p / (1.0 - p))


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    n = np.where(n > 0, n, 1.0)
    return q / n


def quaternion_to_matrix(q):
    """Rotation matrices for unit quaternions ``(w, x, y, z)``, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quaternion_matrix_vjp(q, dR):
    """Pull a gradient on ``R(q)`` back to the (unit) quaternion ``q``."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = np.empty(q.shape)
    g[..., 0] = (2 * (-z * dR[..., 0, 1] + y * dR[..., 0, 2] + z * dR[..., 1, 0]
                      - x * dR[..., 1, 2] - y * dR[..., 2, 0] + x * dR[..., 2, 1]))
    g[..., 1] = (2 * (y * dR[..., 0, 1] + z * dR[..., 0, 2] + y * dR[..., 1, 0]
                      - w * dR[..., 1, 2] + z * dR[..., 2, 0] + w * dR[..., 2, 1])
                 - 4 * x * (dR[..., 1, 1] + dR[..., 2, 2]))
    g[..., 2] = (2 * (x * dR[..., 0, 1] + w * dR[..., 0, 2] + x * dR[..., 1, 0]
                      + z * dR[..., 1, 2] - w * dR[..., 2, 0] + z * dR[..., 2, 1])
                 - 4 * y * (dR[..., 0, 0] + dR[..., 2, 2]))
    g[..., 3] = (2 * (-w * dR[..., 0, 1] + x * dR[..., 0, 2] + w * dR[..., 1, 0]
                      + y * dR[..., 1, 2] + x * dR[..., 2, 0] + y * dR[..., 2, 1])
                 - 4 * z * (dR[..., 0, 0] + dR[..., 1, 1]))
    return g


def normalize_vjp(q_raw, g_unit):
    """Gradient through ``q_raw / |q_raw|``."""
    n = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    u = q_raw / n
    return (g_unit - u * np.sum(u * g_unit, axis=-1, keepdims=True)) / n


def keyframe_weights(t, k):
    """Index of the left keyframe and blend fraction for uniform keyframes on [0, 1]."""
    s = float(np.clip(t, 0.0, 1.0)) * (k - 1)
    i = min(int(np.floor(s)), k - 2)
    return i, s - i


def window_weight(t, start, end, sharpness):
    """Product-of-logistics activation window."""
    return sigmoid((t - start) * sharpness) * sigmoid((end - t) * sharpness)


@dataclass
class DynamicState:
    position: np.ndarray
    rotation: np.ndarray
    window_weight: float


def evaluate_dynamic_state(traj_position, traj_rotation, window_start,
                           window_end, window_sharpness, t):
    """Instantaneous position, unit rotation and window weight of one dynamic Gaussian."""
    traj_position = np.asarray(traj_position, dtype=np.float64)
    traj_rotation = np.asarray(traj_rotation, dtype=np.float64)
    i, f = keyframe_weights(t, traj_position.shape[0])
    pos = (1 - f) * traj_position[i] + f * traj_position[i + 1]
    rot = normalize_quaternions((1 - f) * traj_rotation[i] + f * traj_rotation[i + 1])
    w = float(window_weight(t, window_start, window_end, window_sharpness))
    return DynamicState(pos, rot, w)


def _empty(shape, dtype):
    return np.zeros(shape, dtype=dtype)


@dataclass
class GaussianSet:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    importance: np.ndarray
    gate: np.ndarray
    kind: np.ndarray
    translation: np.ndarray
    traj_position: np.ndarray
    traj_rotation: np.ndarray
    window_start: np.ndarray
    window_end: np.ndarray
    window_sharpness: np.ndarray
    sh_degree: int = 0
    keyframes: int = DEFAULT_KEYFRAMES
    meta: dict = field(default_factory=dict, compare=False)

    # -- construction ---------------------------------------------------
    @classmethod
    def empty(cls, sh_degree=0, keyframes=DEFAULT_KEYFRAMES, dtype=np.float32):
        nc = 1 if sh_degree == 0 else 4
        return cls(
            position=_empty((0, 3), dtype), rotation=_empty((0, 4), dtype),
            log_scale=_empty((0, 3), dtype), opacity_logit=_empty((0,), dtype),
            color=_empty((0, nc, 3), dtype), importance=_empty((0,), dtype),
            gate=_empty((0,), dtype), kind=_empty((0,), np.uint8),
            translation=_empty((0, 3), dtype),
            traj_position=_empty((0, keyframes, 3), dtype),
            traj_rotation=_empty((0, keyframes, 4), dtype),
            window_start=_empty((0,), dtype), window_end=_empty((0,), dtype),
            window_sharpness=_empty((0,), dtype),
            sh_degree=sh_degree, keyframes=keyframes,
        )

    @classmethod
    def from_static(cls, position, color, log_scale, opacity=0.5, rotation=None,
                    translation=None, sh_degree=0, keyframes=DEFAULT_KEYFRAMES,
                    dtype=np.float32):
        """Build an all-static set; scalars broadcast over the population."""
        position = np.atleast_2d(np.asarray(position, dtype=np.float64))
        n = position.shape[0]
        nc = 1 if sh_degree == 0 else 4
        col = np.zeros((n, nc, 3))
        col[:, 0, :] = np.broadcast_to(np.asarray(color, dtype=np.float64), (n, 3))
        rot = np.tile([1.0, 0, 0, 0], (n, 1)) if rotation is None else rotation
        return cls(
            position=position.astype(dtype),
            rotation=np.broadcast_to(np.asarray(rot, dtype=np.float64), (n, 4)).astype(dtype),
            log_scale=np.broadcast_to(np.asarray(log_scale, dtype=np.float64), (n, 3)).astype(dtype),
            opacity_logit=np.broadcast_to(logit(opacity), (n,)).astype(dtype),
            color=col.astype(dtype),
            importance=np.full(n, 1.0, dtype), gate=np.full(n, 1.0, dtype),
            kind=np.zeros(n, np.uint8),
            translation=(np.zeros((n, 3)) if translation is None
                         else np.broadcast_to(translation, (n, 3))).astype(dtype),
            traj_position=_empty((0, keyframes, 3), dtype),
            traj_rotation=_empty((0, keyframes, 4), dtype),
            window_start=_empty((0,), dtype), window_end=_empty((0,), dtype),
            window_sharpness=_empty((0,), dtype),
            sh_degree=sh_degree, keyframes=keyframes,
        )

    # -- bookkeeping ----------------------------------------------------
    def __len__(self):
        return int(self.kind.shape[0])

    @property
    def n_total(self):
        return len(self)

    @property
    def n_static(self):
        return int(np.count_nonzero(self.kind == STATIC))

    @property
    def n_dynamic(self):
        return int(np.count_nonzero(self.kind == DYNAMIC))

    @property
    def dtype(self):
        return self.position.dtype

    def static_index(self):
        return np.flatnonzero(self.kind == STATIC)

    def dynamic_index(self):
        return np.flatnonzero(self.kind == DYNAMIC)

    def side_rows(self):
        """Row of each Gaussian inside its kind's side table."""
        rows = np.empty(len(self), dtype=np.int64)
        s = self.kind == STATIC
        rows[s] = np.arange(np.count_nonzero(s))
        rows[~s] = np.arange(np.count_nonzero(~s))
        return rows

    def check(self):
        n = len(self)
        for name in CORE_FIELDS:
            assert getattr(self, name).shape[0] == n, name
        for name in STATIC_FIELDS:
            assert getattr(self, name).shape[0] == self.n_static, name
        for name in DYNAMIC_FIELDS:
            assert getattr(self, name).shape[0] == self.n_dynamic, name
        assert set(np.unique(self.kind)) <= {STATIC, DYNAMIC}

    def arrays(self):
        names = CORE_FIELDS + ("kind",) + STATIC_FIELDS + DYNAMIC_FIELDS
        return {k: getattr(self, k) for k in names}

    def copy(self):
        return self.replace(**{k: v.copy() for k, v in self.arrays().items()})

    def replace(self, **changes):
        kw = self.arrays()
        kw.update(changes)
        return GaussianSet(sh_degree=self.sh_degree, keyframes=self.keyframes,
                           meta=dict(self.meta), **kw)

    def astype(self, dtype):
        kw = {k: (v if k == "kind" else v.astype(dtype)) for k, v in self.arrays().items()}
        return self.replace(**kw)

    def take(self, idx):
        """Subset/reorder/duplicate by global index; side tables follow."""
        idx = np.asarray(idx, dtype=np.int64)
        rows = self.side_rows()
        kind = self.kind[idx]
        s_idx = idx[kind == STATIC]
        d_idx = idx[kind == DYNAMIC]
        kw = {k: getattr(self, k)[idx] for k in CORE_FIELDS}
        kw["kind"] = kind
        for k in STATIC_FIELDS:
            kw[k] = getattr(self, k)[rows[s_idx]]
        for k in DYNAMIC_FIELDS:
            kw[k] = getattr(self, k)[rows[d_idx]]
        return self.replace(**kw)

    def concat(self, other):
        """Append ``other``; resulting global order is self then other."""
        # self's rows precede other's, so side tables concatenate in order too
        return self.replace(**{
            k: np.concatenate([v, getattr(other, k).astype(v.dtype)])
            for k, v in self.arrays().items()})

    # -- derived quantities ---------------------------------------------
    def opacity(self):
        return sigmoid(self.opacity_logit)

    def scales(self):
        return np.exp(self.log_scale.astype(np.float64))

    def motion_magnitude(self):
        """Equivalent translation magnitude per Gaussian.

        Static: |T|. Dynamic: twice the largest keyframe deviation from the
        keyframe mean, which equals |T| for a trajectory built from T.
        """
        out = np.zeros(len(self))
        s = self.static_index()
        d = self.dynamic_index()
        if s.size:
            out[s] = np.linalg.norm(self.translation.astype(np.float64), axis=1)
        if d.size:
            tp = self.traj_position.astype(np.float64)
            dev = tp - tp.mean(axis=1, keepdims=True)
            out[d] = 2.0 * np.linalg.norm(dev, axis=2).max(axis=1)
        return out

    def sync_dynamic_cores(self):
        """Keep core position/rotation of dynamic Gaussians at their keyframe mean."""
        d = self.dynamic_index()
        if d.size:
            self.position[d] = self.traj_position.astype(np.float64).mean(axis=1)
            self.rotation[d] = normalize_quaternions(self.traj_rotation[:, 0])

    def renormalize(self):
        self.rotation[:] = normalize_quaternions(self.rotation)
        if self.traj_rotation.size:
            self.traj_rotation[:] = normalize_quaternions(self.traj_rotation)
        np.clip(self.gate, 0.0, 1.0, out=self.gate)
        np.clip(self.importance, 0.0, 1.0, out=self.importance)
        if self.window_start.size:
            lo, hi = WINDOW_LIMITS
            np.clip(self.window_start, lo, hi, out=self.window_start)
            np.clip(self.window_end, lo, hi, out=self.window_end)
            bad = self.window_start > self.window_end
            if np.any(bad):
                mid = 0.5 * (self.window_start[bad] + self.window_end[bad])
                self.window_start[bad] = mid
                self.window_end[bad] = mid


def to_dynamic(gs: GaussianSet, idx, times=None) -> GaussianSet:
    """Convert static Gaussians ``idx`` to dynamic ones.

    Keyframes sample the linear motion ``mu + (t - 1/2) T``; rotation is held
    constant and the window spans the whole sequence.
    """
    idx = np.asarray(idx, dtype=np.int64)
    idx = idx[gs.kind[idx] == STATIC]
    if idx.size == 0:
        return gs.copy()
    K = gs.keyframes
    tk = np.linspace(0.0, 1.0, K)
    rows = gs.side_rows()
    out = gs.copy()
    mu = gs.position[idx].astype(np.float64)
    T = gs.translation[rows[idx]].astype(np.float64)
    new_traj = mu[:, None, :] + (tk[None, :, None] - 0.5) * T[:, None, :]
    new_rot = np.repeat(gs.rotation[idx][:, None, :].astype(np.float64), K, axis=1)
    return _retag(out, idx, DYNAMIC, dict(
        traj_position=new_traj, traj_rotation=new_rot,
        window_start=np.full(idx.size, FULL_WINDOW[0]),
        window_end=np.full(idx.size, FULL_WINDOW[1]),
        window_sharpness=np.full(idx.size, DEFAULT_SHARPNESS)))


def to_static(gs: GaussianSet, idx) -> GaussianSet:
    """Collapse dynamic Gaussians ``idx`` onto a mean position plus linear translation."""
    idx = np.asarray(idx, dtype=np.int64)
    idx = idx[gs.kind[idx] == DYNAMIC]
    if idx.size == 0:
        return gs.copy()
    K = gs.keyframes
    tk = np.linspace(0.0, 1.0, K) - 0.5
    rows = gs.side_rows()
    r = rows[idx]
    tp = gs.traj_position[r].astype(np.float64)
    mean = tp.mean(axis=1)
    slope = np.einsum("k,nkc->nc", tk, tp - mean[:, None, :]) / np.sum(tk * tk)
    q = gs.traj_rotation[r].astype(np.float64)
    # align hemispheres before averaging
    sign = np.sign(np.einsum("nkc,nc->nk", q, q[:, 0]))
    sign[sign == 0] = 1
    qm = normalize_quaternions((q * sign[..., None]).mean(axis=1))
    out = gs.copy()
    out.position[idx] = mean
    out.rotation[idx] = qm
    return _retag(out, idx, STATIC, dict(translation=slope))


def _retag(gs, idx, new_kind, new_rows):
    """Flip ``kind`` for ``idx`` and rebuild both side tables in global order."""
    old_rows = gs.side_rows()
    kind = gs.kind.copy()
    kind[idx] = new_kind
    moved = np.zeros(len(gs), dtype=bool)
    moved[idx] = True
    pos_in_idx = np.full(len(gs), -1, dtype=np.int64)
    pos_in_idx[idx] = np.arange(idx.size)

    def rebuild(names, target_kind):
        members = np.flatnonzero(kind == target_kind)
        tables = {}
        for name in names:
            src = getattr(gs, name)
            shape = (members.size,) + src.shape[1:]
            dst = np.zeros(shape, dtype=src.dtype)
            keep = ~moved[members]
            dst[keep] = src[old_rows[members[keep]]]
            mv = moved[members]
            if np.any(mv):
                dst[mv] = np.asarray(new_rows[name])[pos_in_idx[members[mv]]]
            tables[name] = dst
        return tables

    static_names, dynamic_names = STATIC_FIELDS, DYNAMIC_FIELDS
    kw = {"kind": kind}
    if new_kind == DYNAMIC:
        kw.update(rebuild(dynamic_names, DYNAMIC))
        members = np.flatnonzero(kind == STATIC)
        kw.update({n: getattr(gs, n)[old_rows[members]] for n in static_names})
    else:
        kw.update(rebuild(static_names, STATIC))
        members = np.flatnonzero(kind == DYNAMIC)
        kw.update({n: getattr(gs, n)[old_rows[members]] for n in dynamic_names})
    out = gs.replace(**kw)
    out.sync_dynamic_cores()
    return out


def random_set(n, rng, n_dynamic=0, sh_degree=0, keyframes=DEFAULT_KEYFRAMES,
               extent=1.0, dtype=np.float32):
    """Random Gaussians for tests and fixtures."""
    gs = GaussianSet.from_static(
        position=rng.uniform(-extent, extent, (n, 3)),
        color=rng.uniform(0, 1, (n, 3)),
        log_scale=rng.uniform(-3, -1, (n, 3)),
        opacity=rng.uniform(0.2, 0.9, n),
        rotation=normalize_quaternions(rng.normal(size=(n, 4))),
        translation=rng.normal(scale=0.05, size=(n, 3)),
        sh_degree=sh_degree, keyframes=keyframes, dtype=dtype)
    if sh_degree > 0:
        gs.color[:, 1:] = rng.normal(scale=0.1, size=(n, gs.color.shape[1] - 1, 3))
    gs.importance[:] = rng.uniform(0, 1, n)
    gs.gate[:] = rng.uniform(0, 1, n)
    if n_dynamic:
        idx = rng.choice(n, size=n_dynamic, replace=False)
        gs = to_dynamic(gs, np.sort(idx))
        gs.traj_position[:] += rng.normal(scale=0.05, size=gs.traj_position.shape)
        gs.traj_rotation[:] = normalize_quaternions(
            gs.traj_rotation + rng.normal(scale=0.05, size=gs.traj_rotation.shape))
        gs.window_start[:] = rng.uniform(-0.2, 0.3, n_dynamic)
        gs.window_end[:] = rng.uniform(0.7, 1.2, n_dynamic)
        gs.sync_dynamic_cores()
    return gs.astype(dtype)
