"""Adapter that hands quantized attribute planes to an external video encoder.

Planes are grouped three at a time into planar YUV 4:4:4 frames (16-bit
planes are split into high and low bytes) and piped to an x264-compatible
command. The built-in coder stays authoritative; the adapter output is a
side file for comparison.
"""
from __future__ import annotations

import shlex
import subprocess
from pathlib import Path

import numpy as np

X264_ARGS = ("--input-csp", "i444", "--output-csp", "i444", "--preset", "medium",
             "--qp", "20", "--bframes", "0", "--ref", "3")


def build_command(cmd, width, height, out_path):
    """Argument vector for an x264-like binary reading raw frames from stdin."""
    base = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
    return base + list(X264_ARGS) + ["--input-res", f"{width}x{height}",
                                     "--demuxer", "raw", "-o", str(out_path), "-"]


def planes_to_frames(planes):
    """Stack 8-bit code planes (16-bit ones as two byte planes) into 4:4:4 frames."""
    bytes_planes = []
    for plane, bits in planes:
        p = np.asarray(plane, dtype=np.int64)
        if bits == 16:
            bytes_planes += [(p >> 8).astype(np.uint8), (p & 0xFF).astype(np.uint8)]
        else:
            bytes_planes.append(p.astype(np.uint8))
    while len(bytes_planes) % 3:
        bytes_planes.append(np.zeros_like(bytes_planes[0]))
    return [np.stack(bytes_planes[i:i + 3]) for i in range(0, len(bytes_planes), 3)]


def encode_planes(cmd, planes, out_path):
    frames = planes_to_frames(planes)
    if not frames:
        return None
    h, w = frames[0].shape[1:]
    argv = build_command(cmd, w, h, out_path)
    raw = b"".join(f.tobytes() for f in frames)
    proc = subprocess.run(argv, input=raw, capture_output=True, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"external encoder failed: {proc.stderr.decode(errors='replace')}")
    return Path(out_path)
