"""Step-size search and bit-depth/distortion curves for transform blocks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..model import Network, forward_from, layer_inputs, squared_error
from ..quantizer import dequantize, quantize_indices
from .layout import LayerTransform, put_block, take_block


@dataclass
class LayerProblem:
    """Everything needed to measure output distortion while one layer changes.

    ``h_in`` caches the calibration activations entering the layer, so only
    the suffix of the network is re-evaluated per candidate.
    """

    net: Network
    index: int
    lt: LayerTransform
    h_in: np.ndarray
    y_ref: np.ndarray

    @classmethod
    def create(cls, net: Network, index: int, lt: LayerTransform, calib, acts=None) -> "LayerProblem":
        acts = layer_inputs(net, calib) if acts is None else acts
        return cls(net, index, lt, acts[index], acts[-1])

    def distortion(self, overrides: dict | None = None) -> float:
        w = self.lt.reconstruct(overrides)
        layer = self.net.layers[self.index].with_data(w)
        y = forward_from(self.net, self.index, self.h_in, layer)
        return squared_error(self.y_ref, y)

    def quantized_block(self, role: str, block: int, bits: int, step: float) -> dict:
        arr = self.lt.arrays()[role]
        section = self.lt.sections[role]
        vals = take_block(arr, section, block)
        if bits == 0:
            q = np.zeros_like(vals)
        else:
            q = dequantize(quantize_indices(vals, bits, step), step)
        return {role: put_block(arr, section, block, q)}

    def block_values(self, role: str, block: int) -> np.ndarray:
        return take_block(self.lt.arrays()[role], self.lt.sections[role], block)


def step_grid(max_abs: float, bits: int, steps: int = 2) -> np.ndarray:
    """Geometric step-size candidates, ``steps`` points per octave.

    The grid descends from ``4 * max_abs`` to ``max_abs * 2**-(bits + 4)``.
    The span grows with ``bits`` so each grid contains the previous one,
    and the smallest step at one bit nearly zeroes the block.
    """
    if bits < 1:
        raise ValueError("step grid needs bits >= 1")
    if steps < 1:
        raise ValueError("step grid needs steps >= 1")
    if not max_abs > 0:
        return np.array([1.0])
    k = np.arange(steps * (bits + 6) + 1)
    return max_abs * 2.0 ** (2.0 - k / steps)


def step_size_search(problem: LayerProblem, role: str, block: int, bits: int,
                     grid=None, steps: int = 2) -> tuple[float, float]:
    """Grid minimizer of output distortion with only one block quantized.

    Returns ``(step, distortion)``; the first grid point wins ties.
    """
    if bits < 1:
        raise ValueError("step-size search needs bits >= 1")
    if grid is None:
        grid = step_grid(float(np.max(np.abs(problem.block_values(role, block)), initial=0.0)), bits, steps)
    grid = np.atleast_1d(np.asarray(grid, dtype=np.float64))
    if grid.size == 0:
        raise ValueError("step-size grid is empty")
    best_d, best_step = np.inf, float(grid[0])
    for step in grid:
        d = problem.distortion(problem.quantized_block(role, block, bits, float(step)))
        if d < best_d:
            best_d, best_step = d, float(step)
    return best_step, best_d


@dataclass
class RDCurve:
    """Distortion ``D(R)`` and optimal step ``step(R)`` of one block, ``R = 0..M``.

    ``step[0]`` is 0 (nothing is stored at zero bits).
    """

    layer: int
    role: str
    block: int
    distortion: np.ndarray
    step: np.ndarray
    weights: int

    @property
    def max_bits(self) -> int:
        return len(self.distortion) - 1


def build_rd_curves(problem: LayerProblem, role: str, max_bits: int = 16, steps: int = 2,
                    workers: int = 1, grids: dict | None = None) -> list[RDCurve]:
    """One curve per block of a section.

    ``(block, R)`` evaluations are independent; with ``workers > 1`` they
    run on a thread pool and are collected by key, so results do not depend
    on completion order. ``grids`` may map ``(block, R)`` to an explicit
    step grid.
    """
    section = problem.lt.sections[role]
    nblocks = section.block_count()
    tasks = [(blk, r) for blk in range(nblocks) for r in range(1, max_bits + 1)]

    def run(task):
        blk, r = task
        grid = None if grids is None else grids.get(task)
        return task, step_size_search(problem, role, blk, r, grid=grid, steps=steps)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run, tasks))
    else:
        results = dict(map(run, tasks))

    curves = []
    for blk in range(nblocks):
        d = np.empty(max_bits + 1)
        st = np.zeros(max_bits + 1)
        d[0] = problem.distortion(problem.quantized_block(role, blk, 0, 1.0))
        for r in range(1, max_bits + 1):
            st[r], d[r] = results[(blk, r)]
        curves.append(RDCurve(problem.index, role, blk, d, st, problem.block_values(role, blk).size))
    return curves
