"""End-to-end pipeline: transforms, curves, allocation, realization, sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..codec.tqz import BlockCode, CompressedModel, LayerCode, SectionCode
from ..covariance import covariance_pair
from ..model import Network, as_signal, layer_inputs, network_forward, squared_error, top1_agreement
from ..quantizer import quantize_indices
from .allocate import BitBudget, allocate_bits, lambda_ceiling
from .inference import network_acceleration
from .layout import aligned_basis, build_layer_transform, parse_transform, take_block
from .search import LayerProblem, RDCurve, build_rd_curves


@dataclass(frozen=True)
class RDConfig:
    """Pipeline parameters. ``steps`` counts step-size candidates per octave."""

    transform: str = "none"
    blocks: int = 8
    max_bits: int = 16
    steps: int = 2
    ridge: float = 1e-8
    probes: int | None = None
    workers: int = 1
    seed: int = 0
    link_pruning: bool = True

    def __post_init__(self):
        parse_transform(self.transform)
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if not 1 <= self.max_bits <= 16:
            raise ValueError("max_bits must be in [1, 16]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class LayerQuant:
    """Allocation of one layer: ``(R, step)`` per block of every section."""

    index: int
    kind: str
    axis: str
    blocks: int
    alloc: dict
    k: int


@dataclass
class QuantPlan:
    lam: float
    transform: str
    layers: list

    @property
    def ks(self) -> list[int]:
        return [lq.k for lq in self.layers]


@dataclass
class SweepPoint:
    lam: float
    plan: QuantPlan
    budget: BitBudget
    distortion: float
    accuracy: float
    flop_ratio: float
    model: CompressedModel = field(repr=False, default=None)

    @property
    def rate(self) -> float:
        return self.budget.rate


@dataclass
class CompressionProblem:
    """Transforms and rate-distortion curves of every layer of a network.

    Built once by :meth:`prepare`; :meth:`plan` and :meth:`evaluate` are
    then cheap per lambda.
    """

    net: Network
    calib: np.ndarray
    config: RDConfig
    transforms: list
    curves: list  # per layer: {role: [RDCurve]}
    y_ref: np.ndarray

    @classmethod
    def prepare(cls, net: Network, calib, config: RDConfig) -> "CompressionProblem":
        calib = as_signal(calib)
        kind, axis = parse_transform(config.transform)
        acts = layer_inputs(net, calib)
        transforms, curves = [], []
        for idx, layer in enumerate(net.layers):
            c_gamma = None
            if kind == "elt":
                pair = covariance_pair(net, idx, calib, axis, config.ridge, config.probes, config.seed + idx)
                c_gamma = pair.gamma_reg
            lt = build_layer_transform(layer, config.transform, c_gamma, config.blocks)
            problem = LayerProblem(net, idx, lt, acts[idx], acts[-1])
            curves.append({role: build_rd_curves(problem, role, config.max_bits, config.steps, config.workers)
                           for role in lt.sections})
            transforms.append(lt)
        return cls(net, calib, config, transforms, curves, acts[-1])

    @property
    def all_curves(self) -> list[RDCurve]:
        return [c for layer in self.curves for role in layer.values() for c in role]

    def lambda_ceiling(self) -> float:
        return lambda_ceiling(self.all_curves)

    def plan(self, lam: float) -> QuantPlan:
        layers = []
        for idx, (lt, curves) in enumerate(zip(self.transforms, self.curves)):
            alloc = {role: allocate_bits(cs, lam) for role, cs in curves.items()}
            partner = aligned_basis(lt)
            if self.config.link_pruning and partner is not None:
                # a transformed channel is useless without its basis vector and vice versa
                t, s = alloc["T"], alloc[partner]
                for blk in range(len(t)):
                    if t[blk][0] == 0 or s[blk][0] == 0:
                        t[blk] = s[blk] = (0, 0.0)
            t_blocks = lt.sections["T"].blocks
            k = sum(hi - lo for (lo, hi), (r, _) in zip(t_blocks, alloc["T"]) if r > 0)
            layers.append(LayerQuant(idx, lt.kind, lt.axis, self.config.blocks, alloc, k))
        return QuantPlan(lam, self.config.transform, layers)

    def budget(self, plan: QuantPlan) -> BitBudget:
        layer_bits, basis = [], 0
        for lt, lq in zip(self.transforms, plan.layers):
            bits = 0
            for role, section in lt.sections.items():
                arr = lt.arrays()[role]
                for blk, (r, _) in enumerate(lq.alloc[role]):
                    count = take_block(arr, section, blk).size
                    bits += count * r
                    if role != "T":
                        basis += count * r
            layer_bits.append(bits)
        layer_weights = [layer.size for layer in self.net.layers]
        return BitBudget(sum(layer_bits), sum(layer_weights), layer_bits, layer_weights, basis)

    def realize(self, plan: QuantPlan) -> CompressedModel:
        """Quantize every section and package the result for the codec."""
        codes = []
        for lt, lq in zip(self.transforms, plan.layers):
            layer = lt.layer
            sections = {}
            for role, section in lt.sections.items():
                arr = lt.arrays()[role]
                block_codes = []
                for blk, (r, step) in enumerate(lq.alloc[role]):
                    vals = take_block(arr, section, blk)
                    if r == 0:
                        block_codes.append(BlockCode(0, 0.0, np.zeros(vals.shape, dtype=np.int64)))
                    else:
                        block_codes.append(BlockCode(r, step, quantize_indices(vals, r, step)))
                sections[role] = SectionCode(role, tuple(arr.shape), section.channel_axis,
                                             list(section.blocks), block_codes)
            bias = layer.bias.astype(np.float32).astype(np.float64)  # as stored in the container
            codes.append(LayerCode(layer.kind, layer.shape, bias, lq.blocks, lq.k, sections))
        kind, axis = parse_transform(self.config.transform)
        return CompressedModel(kind, axis, float(plan.lam), codes)

    def evaluate(self, lam: float) -> SweepPoint:
        plan = self.plan(lam)
        model = self.realize(plan)
        qnet = quantized_network(self.net, model)
        y = network_forward(qnet, self.calib)
        accel = network_acceleration(self.net, model.layers, parse_transform(self.config.transform)[1])
        return SweepPoint(lam, plan, self.budget(plan), squared_error(self.y_ref, y),
                          top1_agreement(self.y_ref, y), accel.exact_ratio, model)

    def sweep(self, lambdas: Sequence[float]) -> list[SweepPoint]:
        if len(lambdas) == 0:
            raise ValueError("lambda list is empty")
        return [self.evaluate(float(lam)) for lam in lambdas]

    def default_lambdas(self, count: int = 5, low: float = 1e-9, high: float = 1e-3) -> np.ndarray:
        """Log-spaced lambdas between ``low`` and ``high`` times the ceiling."""
        top = self.lambda_ceiling()
        return top * np.geomspace(low, high, count)

    def compress_to_rate(self, target: float, tol: float = 0.02, max_iter: int = 200) -> tuple[SweepPoint, bool]:
        """Bisect lambda (log domain) until the realized rate is within ``tol``.

        Rate is a non-increasing step function of lambda, so the target may
        be unreachable; the closest point found is returned with ``False``.
        """
        if target <= 0:
            raise ValueError("target rate must be positive")
        best = self.evaluate(0.0)
        if abs(best.rate - target) <= tol * target:
            return best, True
        if best.rate < target:
            return best, False
        hi = self.lambda_ceiling() * 2.0
        lo = hi * 1e-12
        for _ in range(max_iter):
            mid = math.sqrt(lo * hi)
            budget = self.budget(self.plan(mid))
            if abs(budget.rate - target) < abs(best.rate - target):
                best = self.evaluate(mid)
            if abs(budget.rate - target) <= tol * target:
                return best, True
            if budget.rate > target:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1 + 1e-12:
                break
        return best, abs(best.rate - target) <= tol * target


def quantized_network(net: Network, model: CompressedModel) -> Network:
    """The reference network with every layer replaced by its decoded weights."""
    layers = [lc.to_layer(layer.name) for lc, layer in zip(model.layers, net.layers)]
    return net.with_layers(layers)


def lagrangian_sweep(net: Network, calib, lambdas: Sequence[float], config: RDConfig) -> list[SweepPoint]:
    return CompressionProblem.prepare(net, calib, config).sweep(lambdas)


def frontier(points: Sequence[SweepPoint]) -> list[SweepPoint]:
    """Points sorted by realized rate."""
    return sorted(points, key=lambda p: (p.rate, -p.distortion))
