"""Block partitions and the ``S_out . T . S_in^t`` synthesis shared by rdopt and the codec."""

from __future__ import annotations

import numpy as np


def split_blocks(count: int, blocks: int) -> list[tuple[int, int]]:
    """Contiguous near-equal partition of ``range(count)``; larger blocks first."""
    blocks = max(1, min(int(blocks), count))
    base, extra = divmod(count, blocks)
    out, start = [], 0
    for i in range(blocks):
        stop = start + base + (1 if i < extra else 0)
        out.append((start, stop))
        start = stop
    return out


def reconstruct(coeffs: np.ndarray, out_basis: np.ndarray | None, in_basis: np.ndarray | None) -> np.ndarray:
    """``S_out . T . S_in^t`` as an ``(n, m, a, b)`` array."""
    w = coeffs
    if out_basis is not None:
        w = np.einsum("kr,rjab->kjab", out_basis, w)
    if in_basis is not None:
        w = np.einsum("kiab,ji->kjab", w, in_basis)
    return w
