"""Basis overhead, factored inference and multiplication counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..model import Network, WeightTensor, as_signal, conv_forward


def overhead_elements(shape, axis: str = "column", transform: str = "klt") -> int:
    """Extra stored elements relative to quantizing the weights directly.

    ``min(n**2, (mab)**2)`` for a column transform, ``min(m**2, (nab)**2)``
    for a row transform, the sum of both for a 2-d transform, 0 for none.
    """
    n, m, a, b = shape
    if transform == "none":
        return 0
    col = min(n * n, (m * a * b) ** 2)
    row = min(m * m, (n * a * b) ** 2)
    if transform == "2d":
        return col + row
    return col if axis == "column" else row


def overhead_bits(shape, axis: str = "column", basis_blocks: Sequence[tuple[int, int]] = (),
                  transform: str = "klt") -> tuple[int, int]:
    """``(overhead element count, basis bits)``.

    ``basis_blocks`` lists ``(element count, bit-depth)`` for each stored
    basis block.
    """
    if transform == "none":
        return 0, 0
    return overhead_elements(shape, axis, transform), int(sum(c * r for c, r in basis_blocks))


def acceleration(shape, k: int, axis: str = "column") -> float:
    """Multiplication ratio of factored to direct evaluation.

    Column: ``(n k + a b m k) / (a b m n)``. Row is the same with ``n`` and
    ``m`` swapped (exact when input and output maps have equal size).
    """
    n, m, a, b = shape
    if not 0 <= k <= (n if axis == "column" else m):
        raise ValueError(f"k = {k} out of range")
    if axis == "column":
        return (n * k + a * b * m * k) / (a * b * m * n)
    return (m * k + a * b * n * k) / (a * b * m * n)


def direct_multiplications(shape, in_hw) -> int:
    n, m, a, b = shape
    h, w = in_hw
    return n * m * a * b * (h - a + 1) * (w - b + 1)


def factored_multiplications(shape, k: int, axis: str, in_hw, r_in: int | None = None) -> int:
    """Exact per-sample multiplication count of :func:`factored_forward`.

    ``axis`` is ``"column"``, ``"row"`` or ``"2d"`` (``r_in`` kept input
    channels, required for 2d).
    """
    n, m, a, b = shape
    h, w = in_hw
    out_px = (h - a + 1) * (w - b + 1)
    if axis == "column":
        return k * m * a * b * out_px + n * k * out_px
    if axis == "row":
        return m * k * h * w + n * k * a * b * out_px
    if axis == "2d":
        return m * r_in * h * w + k * r_in * a * b * out_px + n * k * out_px
    raise ValueError(f"unknown axis {axis!r}")


class FlopCounter:
    """Tally of per-sample multiplications of the convolutions it sees."""

    def __init__(self):
        self.count = 0

    def conv(self, data: np.ndarray, x: np.ndarray) -> np.ndarray:
        if data.size == 0:
            # a pruned-away factor: zero output channels, or zero input channels
            return np.zeros((x.shape[0], data.shape[0]) + _out_hw(x, data.shape))
        layer = WeightTensor(data, kind="conv")
        y = conv_forward(layer, x)
        self.count += int(data.size) * int(y.shape[2] * y.shape[3])
        return y


def factored_forward(layer_code, x, counter: FlopCounter | None = None) -> np.ndarray:
    """Evaluate one layer through its transform-domain factors.

    ``layer_code`` is a :class:`~tquant.codec.tqz.LayerCode` (or anything
    with the same ``sections``/``bias``). Only transformed channels whose
    block has a non-zero bit-depth take part. Output includes the bias.
    """
    counter = counter if counter is not None else FlopCounter()
    x = as_signal(x)
    bias = np.zeros(layer_code.shape[0]) if layer_code.bias is None else np.asarray(layer_code.bias, float)
    secs = layer_code.sections
    if layer_code.fallback is not None:
        return counter.conv(layer_code.fallback.astype(np.float64), x) + bias[None, :, None, None]
    t_sec = secs["T"]
    t = t_sec.dequantized()
    active = active_channels(t_sec)
    s_out = secs["S_out"].dequantized() if "S_out" in secs else None
    s_in = secs["S_in"].dequantized() if "S_in" in secs else None
    if t_sec.channel_axis == 1:
        t = t[:, active]
        if s_in is not None:
            s_in = s_in[:, active]
    else:
        t = t[active]
        if s_out is not None:
            s_out = s_out[:, active]
    h = x
    if s_in is not None:
        h = counter.conv(s_in.T[:, :, None, None], h)
    h = counter.conv(t, h)
    if s_out is not None:
        h = counter.conv(s_out[:, :, None, None], h)
    return h + bias[None, :, None, None]


def _out_hw(x: np.ndarray, t_shape) -> tuple[int, int]:
    return x.shape[2] - t_shape[2] + 1, x.shape[3] - t_shape[3] + 1


def active_channels(t_section) -> np.ndarray:
    """Indices of transformed channels that sit in a block with R > 0."""
    idx = [np.arange(lo, hi) for (lo, hi), code in zip(t_section.blocks, t_section.codes) if code.bits > 0]
    return np.concatenate(idx) if idx else np.zeros(0, dtype=int)


def layer_k(layer_code) -> int:
    if layer_code.fallback is not None:
        return layer_code.shape[0]
    return int(active_channels(layer_code.sections["T"]).size)


@dataclass
class AccelerationReport:
    per_layer: list
    overall: float
    exact_ratio: float


def network_acceleration(net: Network, layer_codes: Sequence, axis: str) -> AccelerationReport:
    """Per-layer multiplication ratios and their network-wide average.

    ``overall`` weights each layer's ratio by the size of its input
    activation; ``exact_ratio`` is total factored over total direct
    multiplications.
    """
    shapes = net.shapes()
    per, weights, fact, direct = [], [], 0, 0
    for idx, (lc, in_shape) in enumerate(zip(layer_codes, shapes[:-1])):
        c, h, w = in_shape
        shape = tuple(lc.shape)
        k = layer_k(lc)
        d = direct_multiplications(shape, (h, w))
        if lc.fallback is not None:
            f = d
        elif "S_out" not in lc.sections and "S_in" not in lc.sections:
            f = d * k // shape[0]  # untransformed: only pruned output channels are saved
        elif "S_out" in lc.sections and "S_in" in lc.sections:
            f = factored_multiplications(shape, k, "2d", (h, w), lc.sections["T"].shape[1])
        elif "S_in" in lc.sections:
            f = factored_multiplications(shape, k, "row", (h, w))
        else:
            f = factored_multiplications(shape, k, "column", (h, w))
        per.append(f / d)
        weights.append(c * h * w)
        fact += f
        direct += d
    overall = float(np.dot(per, weights) / np.sum(weights))
    return AccelerationReport(per, overall, fact / direct)
