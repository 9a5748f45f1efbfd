"""Transform-domain representation of one layer.

Every transform kind is written as ``Theta = S_out . T . S_in^t`` in the
layer algebra, with ``T`` of shape ``(r_out, r_in, a, b)`` and the bases
being plain matrices (1x1 layers):

* none:          ``T = Theta``, no bases
* column KLT/ELT: ``S_out = S[:, :r]``, every output channel transformed
* row KLT/ELT:    ``S_in = S[:, :r]``, every input channel transformed
* 2d:             both, orthogonal

Only the first ``r = min(channels, vector length)`` transformed channels
are kept; the remaining rows of ``T`` are zero because the covariance has
rank at most ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..blocks import reconstruct, split_blocks
from ..covariance import channel_count, matricize, vector_length, weight_covariance
from ..model import WeightTensor
from ..transforms import TransformPlan, apply_2d, elt, klt, transform_2d

TRANSFORM_CHOICES = ("none", "row-klt", "row-elt", "col-klt", "col-elt", "2d")


def parse_transform(name: str) -> tuple[str, str]:
    """``"row-elt"`` -> ``("elt", "row")``."""
    if name not in TRANSFORM_CHOICES:
        raise ValueError(f"transform must be one of {TRANSFORM_CHOICES}, got {name!r}")
    if name in ("none", "2d"):
        return name, "column"
    side, kind = name.split("-")
    return kind, "row" if side == "row" else "column"


@dataclass(frozen=True)
class Section:
    """A quantizable matrix of a transformed layer, split into channel blocks.

    ``role`` is ``"T"``, ``"S_out"`` or ``"S_in"``. For ``T`` the blocks run
    along ``channel_axis`` of the ``(r_out, r_in, a, b)`` array; for a basis
    they run along its columns.
    """

    role: str
    channel_axis: int
    blocks: tuple

    def block_count(self) -> int:
        return len(self.blocks)


def take_block(array: np.ndarray, section: Section, block: int) -> np.ndarray:
    lo, hi = section.blocks[block]
    if section.role == "T":
        return np.take(array, np.arange(lo, hi), axis=section.channel_axis)
    return array[:, lo:hi]


def put_block(array: np.ndarray, section: Section, block: int, values: np.ndarray) -> np.ndarray:
    out = array.copy()
    lo, hi = section.blocks[block]
    if section.role == "T":
        idx = [slice(None)] * out.ndim
        idx[section.channel_axis] = slice(lo, hi)
        out[tuple(idx)] = values
    else:
        out[:, lo:hi] = values
    return out


@dataclass
class LayerTransform:
    layer: WeightTensor
    kind: str
    axis: str
    coeffs: np.ndarray
    out_basis: np.ndarray | None
    in_basis: np.ndarray | None
    plan: TransformPlan | None = None
    sections: dict = field(default_factory=dict)

    @property
    def channel_axis(self) -> int:
        return 1 if (self.kind in ("klt", "elt") and self.axis == "row") else 0

    @property
    def stored_channels(self) -> int:
        return self.coeffs.shape[self.channel_axis]

    def arrays(self) -> dict:
        out = {"T": self.coeffs}
        if self.out_basis is not None:
            out["S_out"] = self.out_basis
        if self.in_basis is not None:
            out["S_in"] = self.in_basis
        return out

    def reconstruct(self, overrides: dict | None = None) -> np.ndarray:
        arrs = self.arrays()
        if overrides:
            arrs.update(overrides)
        return reconstruct(arrs["T"], arrs.get("S_out"), arrs.get("S_in"))

    def basis_elements(self) -> int:
        return sum(a.size for role, a in self.arrays().items() if role != "T")


def build_layer_transform(layer: WeightTensor, transform: str, c_gamma: np.ndarray | None = None,
                          blocks: int = 8) -> LayerTransform:
    """Transform a layer and lay out its quantization sections.

    ``c_gamma`` (already regularized) is required for the ELT.
    """
    kind, axis = parse_transform(transform)
    shape = layer.shape
    n, m, a, b = shape
    if kind == "none":
        lt = LayerTransform(layer, kind, axis, layer.data.copy(), None, None)
    elif kind in ("klt", "elt"):
        c_theta = weight_covariance(layer, axis)
        if kind == "klt":
            plan = klt(c_theta, axis)
        else:
            if c_gamma is None:
                raise ValueError("the ELT needs a gradient covariance")
            plan = elt(c_theta, c_gamma, axis)
        r = min(channel_count(shape, axis), vector_length(shape, axis))
        t = plan.forward(matricize(layer.data, axis))
        if axis == "column":
            coeffs = t[:r].reshape(r, m, a, b)
            lt = LayerTransform(layer, kind, axis, coeffs, plan.synthesis[:, :r].copy(), None, plan)
        else:
            coeffs = np.swapaxes(t[:r].reshape(r, n, a, b), 0, 1).copy()
            lt = LayerTransform(layer, kind, axis, coeffs, None, plan.synthesis[:, :r].copy(), plan)
    else:  # 2d
        plan = transform_2d(layer)
        r_out = min(n, m * a * b)
        r_in = min(m, n * a * b)
        coeffs = apply_2d(layer.data, plan)[:r_out, :r_in].copy()
        lt = LayerTransform(layer, kind, axis, coeffs, plan.synthesis[:, :r_out].copy(),
                            plan.second_synthesis[:, :r_in].copy(), plan)

    t_blocks = tuple(split_blocks(lt.stored_channels, blocks))
    lt.sections["T"] = Section("T", lt.channel_axis, t_blocks)
    if lt.out_basis is not None:
        lt.sections["S_out"] = Section("S_out", 1, t_blocks if lt.channel_axis == 0
                                       else tuple(split_blocks(lt.out_basis.shape[1], blocks)))
    if lt.in_basis is not None:
        lt.sections["S_in"] = Section("S_in", 1, t_blocks if lt.channel_axis == 1
                                      else tuple(split_blocks(lt.in_basis.shape[1], blocks)))
    return lt


def aligned_basis(lt: LayerTransform) -> str | None:
    """The basis whose column blocks coincide with the blocks of ``T``."""
    if lt.kind == "none":
        return None
    return "S_in" if lt.channel_axis == 1 else "S_out"


__all__ = [
    "TRANSFORM_CHOICES", "parse_transform", "split_blocks", "Section", "LayerTransform",
    "build_layer_transform", "take_block", "put_block", "reconstruct", "aligned_basis",
]
