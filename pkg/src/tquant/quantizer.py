"""Uniform mid-tread scalar quantizer with a 2**R level clip range."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_BITS = 32


@dataclass(frozen=True)
class QuantParams:
    bits: int
    step: float = 1.0

    def __post_init__(self):
        if int(self.bits) != self.bits or not 0 <= self.bits <= MAX_BITS:
            raise ValueError(f"bit-depth must be an integer in [0, {MAX_BITS}], got {self.bits}")
        if self.bits > 0 and not (np.isfinite(self.step) and self.step > 0):
            raise ValueError(f"step-size must be positive, got {self.step}")
        object.__setattr__(self, "bits", int(self.bits))


def index_range(bits: int) -> tuple[int, int]:
    """Smallest and largest index emitted at ``bits`` bits."""
    if bits <= 0:
        return 0, 0
    half = 1 << (bits - 1)
    return -half, half - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero.

    ``x - trunc(x)`` is exact in binary floating point, so the tie test is
    exact too (``floor(|x| + 0.5)`` is not, e.g. for 0.49999999999999994).
    """
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    return whole + np.where(np.abs(frac) >= 0.5, np.sign(x), 0.0)


def quantize_indices(values, bits: int, step: float) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if bits == 0:
        return np.zeros(values.shape, dtype=np.int64)
    lo, hi = index_range(bits)
    return np.clip(round_half_away(values / step), lo, hi).astype(np.int64)


def dequantize(indices, step: float) -> np.ndarray:
    return step * np.asarray(indices, dtype=np.float64)


def quantize(values, p: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(indices, dequantized)``; both are all zero when ``p.bits == 0``."""
    idx = quantize_indices(values, p.bits, p.step)
    if p.bits == 0:
        return idx, np.zeros(idx.shape)
    return idx, dequantize(idx, p.step)


def source_distortion(original, dequantized) -> float:
    """Mean squared difference between a source and its reconstruction."""
    a = np.asarray(original, dtype=np.float64).ravel()
    b = np.asarray(dequantized, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("cannot measure distortion of an empty array")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))
