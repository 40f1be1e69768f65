"""Uniform per-channel quantization and ring-wrapped delta prediction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelSpec:
    bits: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.bits not in (8, 16):
            raise ValueError("bit depth must be 8 or 16")
        if not self.hi >= self.lo:
            raise ValueError("channel range is inverted")

    @property
    def constant(self):
        return self.hi == self.lo

    @property
    def levels(self):
        return (1 << self.bits) - 1

    @property
    def step(self):
        return (self.hi - self.lo) / self.levels

    @classmethod
    def fit(cls, values, bits):
        v = np.asarray(values, dtype=np.float32)
        if v.size == 0:
            return cls(bits, 0.0, 0.0)
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot quantize non-finite values")
        return cls(bits, float(v.min()), float(v.max()))


def quantize(values, spec: ChannelSpec):
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    if spec.constant:
        return np.zeros(v.shape, dtype=np.int64)
    codes = np.rint((v - spec.lo) / (spec.hi - spec.lo) * spec.levels)
    return np.clip(codes, 0, spec.levels).astype(np.int64)


def dequantize(codes, spec: ChannelSpec):
    c = np.asarray(codes, dtype=np.float64)
    if spec.constant:
        return np.full(c.shape, spec.lo)
    return spec.lo + c * ((spec.hi - spec.lo) / spec.levels)


def predictive_encode(codes, bits):
    """First code verbatim, then successive differences modulo 2**bits."""
    c = np.asarray(codes, dtype=np.int64)
    if c.size == 0:
        return c.copy()
    r = np.empty_like(c)
    r[0] = c[0]
    r[1:] = np.diff(c) % (1 << bits)
    return r


def predictive_decode(residuals, bits):
    r = np.asarray(residuals, dtype=np.int64)
    return np.cumsum(r) % (1 << bits)


def center(residuals, bits):
    """Map ring residuals to signed values in [-2**(bits-1), 2**(bits-1))."""
    r = np.asarray(residuals, dtype=np.int64)
    half = 1 << (bits - 1)
    return np.where(r >= half, r - (1 << bits), r)
