"""``CDGC`` compressed stream: static and dynamic branches in one container.

Static Gaussians: far outliers are split off and stored raw; the rest are
quantized, put in KD order of their quantized positions and delta coded.
Dynamic Gaussians: per channel, the 5% of values farthest from the channel
median are stored raw; the remaining codes fill square planes that are
coded against the previous sample or the previous plane of the same
attribute. The decoded set lists static Gaussians (KD order, then outliers)
followed by dynamic ones (KD order). Byte layout: docs/formats.md.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..scene import GaussianSet
from .entropy import entropy_decode, entropy_encode, unzigzag, zigzag
from .kdtree import kd_reorder
from .quant import (ChannelSpec, center, dequantize, predictive_decode,
                    predictive_encode, quantize)

MAGIC = b"CDGC"
VERSION = 1
HEADER = struct.Struct("<4sHHIIQQQI")
SECTION = struct.Struct("<IQQ")
CHANNEL = struct.Struct("<BBff")

STATIC_OUTLIERS, STATIC_MAIN, DYNAMIC_OUTLIERS, DYNAMIC_MAIN = 1, 2, 3, 4
FLAG_CONSTANT, FLAG_INTER = 1, 2
OUTLIER_SIGMAS = 3.0
DYNAMIC_OUTLIER_FRACTION = 0.05


class StreamError(ValueError):
    pass


def static_layout(gs):
    """(field, width, bits) of every static attribute, in stream order."""
    nc = gs.color.shape[1] * 3
    return [("position", 3, 16), ("translation", 3, 16), ("rotation", 4, 8),
            ("log_scale", 3, 8), ("opacity_logit", 1, 8), ("color", nc, 8),
            ("importance", 1, 8), ("gate", 1, 8)]


def dynamic_layout(gs):
    """(field, width, bits, group width) for dynamic attributes.

    Channels of one field that share a group are quantized over a common
    range so a plane can be predicted from its predecessor.
    """
    K, nc = gs.keyframes, gs.color.shape[1] * 3
    return [("traj_position", 3 * K, 16, 3), ("traj_rotation", 4 * K, 8, 4),
            ("window_start", 1, 8, 1), ("window_end", 1, 8, 1),
            ("window_sharpness", 1, 8, 1), ("log_scale", 3, 8, 3),
            ("opacity_logit", 1, 8, 1), ("color", nc, 8, nc),
            ("importance", 1, 8, 1), ("gate", 1, 8, 1)]


def _static_matrix(gs, field, idx, rows):
    arr = getattr(gs, field)
    sel = rows[idx] if field == "translation" else idx
    return arr[sel].reshape(idx.size, -1).astype(np.float32)


def _dynamic_matrix(gs, field, idx, rows):
    arr = getattr(gs, field)
    sel = idx if field in ("log_scale", "opacity_logit", "color", "importance", "gate") \
        else rows[idx]
    return arr[sel].reshape(idx.size, -1).astype(np.float32)


# -- static branch ------------------------------------------------------------

def split_static_outliers(positions):
    """Indices beyond mean + 3 std of the centroid distance are background."""
    p = np.asarray(positions, dtype=np.float64)
    if p.shape[0] < 2:
        return np.arange(p.shape[0]), np.zeros(0, dtype=np.int64), 0.0, 0.0
    d = np.linalg.norm(p - p.mean(axis=0), axis=1)
    mu, sd = float(d.mean()), float(d.std())
    bg = d > mu + OUTLIER_SIGMAS * sd
    return np.flatnonzero(~bg), np.flatnonzero(bg), mu, sd


def _pack_channels(specs, flags):
    return b"".join(CHANNEL.pack(s.bits, f, s.lo, s.hi) for s, f in zip(specs, flags))


def _unpack_channels(buf, off, n):
    specs, flags = [], []
    for _ in range(n):
        bits, f, lo, hi = CHANNEL.unpack_from(buf, off)
        off += CHANNEL.size
        specs.append(ChannelSpec(bits, lo, hi))
        flags.append(f)
    return specs, flags, off


def _bit_cost(sym):
    s = np.asarray(sym, dtype=np.int64)
    return int(np.sum(np.floor(np.log2(s + 1)) + 1))


def _encode_static(gs, s_idx, rows):
    layout = static_layout(gs)
    pos = gs.position[s_idx].astype(np.float32)
    fg, bg, _, _ = split_static_outliers(pos)
    mats = [_static_matrix(gs, f, s_idx, rows) for f, _, _ in layout]
    outlier = b"".join(m[bg].astype("<f4").tobytes() for m in mats)
    specs, codes = [], []
    for (f, w, bits), m in zip(layout, mats):
        for c in range(w):
            spec = ChannelSpec.fit(m[fg, c], bits)
            specs.append(spec)
            codes.append(quantize(m[fg, c], spec))
    order = kd_reorder(np.stack(codes[:3], axis=1)) if fg.size else fg
    syms = []
    for spec, code in zip(specs, codes):
        if spec.constant:
            continue
        r = center(predictive_encode(code[order], spec.bits), spec.bits)
        syms.append(zigzag(r))
    flags = [FLAG_CONSTANT if s.constant else 0 for s in specs]
    payload = entropy_encode(np.concatenate(syms) if syms else [])
    main = (struct.pack("<II", fg.size, len(specs)) + _pack_channels(specs, flags)
            + struct.pack("<I", len(payload)) + payload)
    perm = np.concatenate([fg[order], bg])
    return main, struct.pack("<I", bg.size) + outlier, perm


def _decode_static(main, outlier, ns, layout):
    n_fg, n_ch = struct.unpack_from("<II", main, 0)
    specs, flags, off = _unpack_channels(main, 8, n_ch)
    (plen,) = struct.unpack_from("<I", main, off)
    off += 4
    n_coded = sum(not s.constant for s in specs)
    sym = entropy_decode(main[off:off + plen], n_coded * n_fg)
    n_bg = ns - n_fg
    (n_bg_stored,) = struct.unpack_from("<I", outlier, 0) if outlier else (0,)
    if n_bg_stored != n_bg:
        raise StreamError("static outlier count mismatch")
    cols = []
    pos = 0
    for k, spec in enumerate(specs):
        if spec.constant:
            cols.append(np.full(n_fg, spec.lo))
            continue
        r = unzigzag(sym[pos:pos + n_fg]) % (1 << spec.bits)
        pos += n_fg
        cols.append(dequantize(predictive_decode(r, spec.bits), spec))
    out = {}
    c0, roff = 0, 4
    for f, w, _ in layout:
        fgv = np.stack(cols[c0:c0 + w], axis=1) if n_fg else np.zeros((0, w))
        c0 += w
        bgv = np.frombuffer(outlier, dtype="<f4", count=n_bg * w, offset=roff).reshape(n_bg, w)
        roff += 4 * n_bg * w
        out[f] = np.concatenate([fgv, bgv]).astype(np.float32)
    return out


# -- dynamic branch -----------------------------------------------------------

def split_dynamic_outliers(values, fraction=DYNAMIC_OUTLIER_FRACTION):
    """Indices of the ``fraction`` of values farthest from the median."""
    v = np.asarray(values, dtype=np.float64)
    k = int(np.floor(fraction * v.size))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    dev = np.abs(v - np.median(v))
    return np.sort(np.argsort(-dev, kind="stable")[:k])


def plane_side(n):
    return int(np.ceil(np.sqrt(n))) if n else 0


def to_plane(codes, n, outliers):
    """Row-major square plane; outlier and pad slots repeat the previous code."""
    side = plane_side(n)
    flat = np.zeros(side * side, dtype=np.int64)
    flat[:n] = codes
    hole = np.zeros(side * side, dtype=bool)
    hole[outliers] = True
    hole[n:] = True
    last = 0
    for i in np.flatnonzero(hole):
        # carry the nearest preceding real code forward
        j = i - 1
        while j >= 0 and hole[j]:
            j -= 1
        last = flat[j] if j >= 0 else 0
        flat[i] = last
    return flat.reshape(side, side)


def _dynamic_planes(gs, d_idx, rows):
    layout = dynamic_layout(gs)
    nd = d_idx.size
    tp = gs.traj_position[rows[d_idx]].astype(np.float64)
    order = kd_reorder(tp.mean(axis=1))
    idx = d_idx[order]
    specs, planes, out_parts = [], [], []
    for f, w, bits, group in layout:
        m = _dynamic_matrix(gs, f, idx, rows)
        outl = [split_dynamic_outliers(m[:, c]) for c in range(w)]
        for g in range(group):
            chans = list(range(g, w, group))
            inl = [np.delete(m[:, c], outl[c]) for c in chans]
            spec = ChannelSpec.fit(np.concatenate(inl), bits)
            for c in chans:
                specs.append((c, f, spec))
        for c in range(w):
            spec = next(s for cc, ff, s in specs if ff == f and cc == c)
            code = quantize(m[:, c], spec)
            planes.append((f, c, spec, to_plane(code, nd, outl[c])))
            o = outl[c]
            out_parts.append(struct.pack("<I", o.size) + o.astype("<u4").tobytes()
                             + m[o, c].astype("<f4").tobytes())
    return planes, out_parts, order


def dynamic_planes(gs: GaussianSet):
    """``(plane, bits)`` for every dynamic attribute channel, in stream order."""
    d_idx = gs.dynamic_index()
    if d_idx.size == 0:
        return []
    planes, _, _ = _dynamic_planes(gs, d_idx, gs.side_rows())
    return [(plane, spec.bits) for _, _, spec, plane in planes]


def _encode_dynamic(gs, d_idx, rows):
    nd = d_idx.size
    planes, out_parts, order = _dynamic_planes(gs, d_idx, rows)
    syms, chan_specs, flags = [], [], []
    for k, (f, c, spec, plane) in enumerate(planes):
        chan_specs.append(spec)
        if spec.constant:
            flags.append(FLAG_CONSTANT)
            continue
        intra = center(predictive_encode(plane.reshape(-1), spec.bits), spec.bits)
        best, flag = intra, 0
        if k > 0 and planes[k - 1][0] == f and planes[k - 1][2] == spec:
            prev = planes[k - 1][3].reshape(-1)
            inter = center((plane.reshape(-1) - prev) % (1 << spec.bits), spec.bits)
            if _bit_cost(zigzag(inter)) < _bit_cost(zigzag(intra)):
                best, flag = inter, FLAG_INTER
        flags.append(flag)
        syms.append(zigzag(best))
    payload = entropy_encode(np.concatenate(syms) if syms else [])
    main = (struct.pack("<III", nd, plane_side(nd), len(planes))
            + _pack_channels(chan_specs, flags) + struct.pack("<I", len(payload)) + payload)
    return main, b"".join(out_parts), order


def _decode_dynamic(main, outlier, layout):
    nd, side, n_ch = struct.unpack_from("<III", main, 0)
    specs, flags, off = _unpack_channels(main, 12, n_ch)
    (plen,) = struct.unpack_from("<I", main, off)
    off += 4
    area = side * side
    n_coded = sum(not f & FLAG_CONSTANT for f in flags)
    sym = entropy_decode(main[off:off + plen], n_coded * area)
    cols, pos, prev, roff = [], 0, None, 0
    for k, spec in enumerate(specs):
        if flags[k] & FLAG_CONSTANT:
            codes = np.zeros(area, dtype=np.int64)
        else:
            r = unzigzag(sym[pos:pos + area]) % (1 << spec.bits)
            pos += area
            if flags[k] & FLAG_INTER:
                codes = (prev + r) % (1 << spec.bits)
            else:
                codes = predictive_decode(r, spec.bits)
        prev = codes
        vals = dequantize(codes[:nd], spec)
        (no,) = struct.unpack_from("<I", outlier, roff)
        roff += 4
        oi = np.frombuffer(outlier, dtype="<u4", count=no, offset=roff).astype(np.int64)
        roff += 4 * no
        ov = np.frombuffer(outlier, dtype="<f4", count=no, offset=roff)
        roff += 4 * no
        vals = vals.astype(np.float32)
        vals[oi] = ov
        cols.append(vals)
    out, c0 = {}, 0
    for f, w, _, _ in layout:
        out[f] = np.stack(cols[c0:c0 + w], axis=1) if nd else np.zeros((0, w), np.float32)
        c0 += w
    return out


# -- container ----------------------------------------------------------------

@dataclass
class CompressedStream:
    data: bytes
    order: np.ndarray

    def __len__(self):
        return len(self.data)


def compress(gs: GaussianSet) -> CompressedStream:
    """Encode ``gs``; ``order`` maps decoded positions to input indices."""
    gs = gs.astype(np.float32)
    gs.check()
    rows = gs.side_rows()
    s_idx, d_idx = gs.static_index(), gs.dynamic_index()
    sections = []
    order = []
    n_bg = 0
    if s_idx.size:
        main, outl, perm = _encode_static(gs, s_idx, rows)
        n_bg = struct.unpack_from("<I", outl, 0)[0]
        sections += [(STATIC_OUTLIERS, outl), (STATIC_MAIN, main)]
        order.append(s_idx[perm])
    if d_idx.size:
        main, outl, perm = _encode_dynamic(gs, d_idx, rows)
        sections += [(DYNAMIC_OUTLIERS, outl), (DYNAMIC_MAIN, main)]
        order.append(d_idx[perm])
    head = HEADER.pack(MAGIC, VERSION, 0, gs.sh_degree, gs.keyframes, s_idx.size,
                       d_idx.size, n_bg, len(sections))
    off = len(head) + SECTION.size * len(sections)
    table = []
    for sid, body in sections:
        table.append(SECTION.pack(sid, off, len(body)))
        off += len(body)
    blob = head + b"".join(table) + b"".join(b for _, b in sections)
    blob += struct.pack("<I", zlib.crc32(blob))
    order = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
    return CompressedStream(blob, order)


def read_sections(data: bytes):
    if len(data) < HEADER.size + 4:
        raise StreamError("stream truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise StreamError("stream checksum mismatch")
    magic, version, _, sh, kf, ns, nd, n_bg, n_sec = HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise StreamError("not a CDGC stream")
    if version != VERSION:
        raise StreamError(f"unsupported stream version {version}")
    sections, last = {}, HEADER.size + SECTION.size * n_sec
    for i in range(n_sec):
        sid, off, length = SECTION.unpack_from(body, HEADER.size + SECTION.size * i)
        if off < last or off + length > len(body):
            raise StreamError("section offsets out of order")
        last = off + length
        sections[sid] = body[off:off + length]
    header = {"sh_degree": sh, "keyframes": kf, "n_static": ns, "n_dynamic": nd,
              "n_static_outliers": n_bg}
    return header, sections


def decompress(data) -> GaussianSet:
    if isinstance(data, CompressedStream):
        data = data.data
    header, sec = read_sections(bytes(data))
    ns, nd = header["n_static"], header["n_dynamic"]
    template = GaussianSet.empty(sh_degree=header["sh_degree"], keyframes=header["keyframes"])
    n = ns + nd
    cols = {}
    try:
        if ns:
            cols["s"] = _decode_static(sec[STATIC_MAIN], sec.get(STATIC_OUTLIERS, b""),
                                       ns, static_layout(template))
        if nd:
            cols["d"] = _decode_dynamic(sec[DYNAMIC_MAIN], sec[DYNAMIC_OUTLIERS],
                                        dynamic_layout(template))
    except (KeyError, struct.error) as exc:
        raise StreamError(f"malformed stream: {exc}") from exc
    kw = {"kind": np.concatenate([np.zeros(ns, np.uint8), np.ones(nd, np.uint8)])}
    for name in ("position", "rotation", "log_scale", "opacity_logit", "color",
                 "importance", "gate", "translation", "traj_position", "traj_rotation",
                 "window_start", "window_end", "window_sharpness"):
        shape = getattr(template, name).shape[1:]
        parts = []
        for key, count in (("s", ns), ("d", nd)):
            src = cols.get(key, {})
            if name in src:
                parts.append(src[name].reshape((count,) + shape))
            elif name in ("position", "rotation") and key == "d":
                parts.append(np.zeros((count,) + shape, np.float32))
        kw[name] = (np.concatenate(parts).astype(np.float32) if parts
                    else np.zeros((0,) + shape, np.float32))
    out = template.replace(**kw)
    out.sync_dynamic_cores()
    assert len(out) == n
    return out
