"""Lagrangian bit-depth allocation and bit-budget bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def allocate_bits(curves: Sequence, lam: float, weights_per_unit: Sequence[int] | None = None
                  ) -> list[tuple[int, float]]:
    """Per unit, ``R* = argmin_R D(R) + lam * w * R`` over ``R = 0..M``.

    ``curves`` holds :class:`RDCurve` objects, or bare distortion arrays
    when ``weights_per_unit`` is given. Ties go to the smaller ``R``.
    Returns ``(R, step)`` per unit; the step is 0 for ``R = 0`` and for bare
    arrays.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    out = []
    for i, c in enumerate(curves):
        if weights_per_unit is None:
            d, steps, w = np.asarray(c.distortion, float), np.asarray(c.step, float), c.weights
        else:
            d, steps, w = np.asarray(c, float), None, weights_per_unit[i]
        # J starts at inf and is replaced only on strict improvement
        best_j, best_r = np.inf, 0
        for r in range(len(d)):
            j = d[r] + lam * w * r
            if best_j > j:
                best_j, best_r = j, r
        out.append((best_r, 0.0 if steps is None or best_r == 0 else float(steps[best_r])))
    return out


def lambda_ceiling(curves: Sequence) -> float:
    """Smallest ``lam`` at which every unit is allocated zero bits."""
    top = 0.0
    for c in curves:
        d = np.asarray(c.distortion, float)
        r = np.arange(1, len(d))
        if r.size:
            top = max(top, float(np.max((d[0] - d[1:]) / (c.weights * r))))
    return top


@dataclass
class BitBudget:
    """Rate in bits per original weight, basis bits included."""

    total_bits: int
    weights_count: int
    layer_bits: list = field(default_factory=list)
    layer_weights: list = field(default_factory=list)
    basis_bits: int = 0

    @property
    def rate(self) -> float:
        return self.total_bits / self.weights_count

    @property
    def index_bits(self) -> int:
        return self.total_bits - self.basis_bits

    @property
    def layer_fractions(self) -> list[float]:
        """``mu_l``: fraction of the weights held by each layer."""
        return [w / self.weights_count for w in self.layer_weights]

    @property
    def compression_ratio(self) -> float:
        return 32.0 / self.rate if self.total_bits else np.inf
