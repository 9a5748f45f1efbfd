"""TQZ1 compressed-model container.

Layout (little-endian)::

    "TQZ1" u8 version=1, u8 transform (0 none, 1 klt, 2 elt, 3 2d),
           u8 axis (0 column, 1 row), u32 layer_count, f64 lambda
    layer: u8 kind (0 dense, 1 conv), u32 n, m, a, b,
           u8 has_bias, [f32[n] bias],
           u8 fallback; fallback=1 -> f32[n*m*a*b] raw weights, layer ends
           u32 B, u32 k, u32 r_out, u32 r_in, u8 channel_axis,
           u8 basis_flags (bit 0: S_out n x r_out, bit 1: S_in m x r_in)
           T blocks, then S_out blocks, then S_in blocks
    block: u8 R, f64 step, ceil(count*R/8) bytes of R-bit fields

``T`` has shape ``(r_out, r_in, a, b)``; its blocks split ``channel_axis``,
basis blocks split columns, both with :func:`split_blocks` into
``min(B, channels)`` parts. Fields hold ``index + 2**(R-1)`` LSB-first in
C order of the block; R = 0 blocks carry no payload and decode to zeros.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from ..model import Network, WeightTensor
from ..quantizer import dequantize, index_range
from ..blocks import reconstruct, split_blocks
from .bitpack import MAX_PACK_BITS, from_offsets, pack, packed_size, to_offsets, unpack
from .nwt import FormatError, _Reader

MAGIC = b"TQZ1"
VERSION = 1
TRANSFORM_CODES = {"none": 0, "klt": 1, "elt": 2, "2d": 3}
TRANSFORM_NAMES = {v: k for k, v in TRANSFORM_CODES.items()}
AXIS_CODES = {"column": 0, "row": 1}
AXIS_NAMES = {v: k for k, v in AXIS_CODES.items()}
ROLES = ("T", "S_out", "S_in")


class TqzFormatError(FormatError):
    pass


@dataclass
class BlockCode:
    bits: int
    step: float
    indices: np.ndarray  # int64, shape of the block

    def dequantized(self) -> np.ndarray:
        if self.bits == 0:
            return np.zeros(self.indices.shape)
        return dequantize(self.indices, self.step)

    @property
    def payload_bits(self) -> int:
        return self.indices.size * self.bits


@dataclass
class SectionCode:
    role: str
    shape: tuple
    channel_axis: int
    blocks: list
    codes: list

    def _index(self, lo: int, hi: int):
        idx = [slice(None)] * len(self.shape)
        idx[self.channel_axis] = slice(lo, hi)
        return tuple(idx)

    def block_shape(self, lo: int, hi: int) -> tuple:
        shp = list(self.shape)
        shp[self.channel_axis] = hi - lo
        return tuple(shp)

    def dequantized(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for (lo, hi), code in zip(self.blocks, self.codes):
            out[self._index(lo, hi)] = code.dequantized()
        return out

    @property
    def payload_bits(self) -> int:
        return sum(c.payload_bits for c in self.codes)


@dataclass
class LayerCode:
    kind: str
    shape: tuple
    bias: np.ndarray | None
    blocks: int = 1
    k: int = 0
    sections: dict = field(default_factory=dict)
    fallback: np.ndarray | None = None  # float32 weights stored unquantized

    def weights(self) -> np.ndarray:
        """Reconstructed ``S_out^q . T^q . S_in^q^t``."""
        if self.fallback is not None:
            return self.fallback.astype(np.float64)
        t = self.sections["T"].dequantized()
        s_out = self.sections["S_out"].dequantized() if "S_out" in self.sections else None
        s_in = self.sections["S_in"].dequantized() if "S_in" in self.sections else None
        return reconstruct(t, s_out, s_in)

    @property
    def payload_bits(self) -> int:
        if self.fallback is not None:
            return 32 * self.fallback.size
        return sum(s.payload_bits for s in self.sections.values())

    @property
    def basis_bits(self) -> int:
        return sum(s.payload_bits for r, s in self.sections.items() if r != "T")

    def to_layer(self, name: str = "") -> WeightTensor:
        bias = None if self.bias is None else self.bias.astype(np.float64)
        return WeightTensor(self.weights(), bias, self.kind, name)


@dataclass
class CompressedModel:
    transform: str
    axis: str
    lam: float
    layers: list

    @property
    def payload_bits(self) -> int:
        return sum(l.payload_bits for l in self.layers)

    @property
    def basis_bits(self) -> int:
        return sum(l.basis_bits for l in self.layers if l.fallback is None)

    @property
    def weight_count(self) -> int:
        return sum(int(np.prod(l.shape)) for l in self.layers)

    @property
    def rate(self) -> float:
        return self.payload_bits / self.weight_count

    def to_network(self, input_shape=None, activations=None) -> Network:
        layers = [lc.to_layer(f"layer{i}") for i, lc in enumerate(self.layers)]
        if input_shape is None:
            from .nwt import infer_input_shape
            input_shape = infer_input_shape(layers)
        if activations is None:
            return Network.chain(layers, input_shape)
        return Network(tuple(layers), tuple(activations), tuple(input_shape))


def _write_blocks(out: io.BytesIO, section: SectionCode) -> None:
    for (lo, hi), code in zip(section.blocks, section.codes):
        if not 0 <= code.bits <= MAX_PACK_BITS:
            raise ValueError(f"bit-depth {code.bits} exceeds the {MAX_PACK_BITS}-bit limit")
        if code.indices.shape != section.block_shape(lo, hi):
            raise ValueError(f"{section.role} block {lo}:{hi} has shape {code.indices.shape}")
        out.write(struct.pack("<Bd", code.bits, code.step))
        if code.bits:
            lo_i, hi_i = index_range(code.bits)
            if code.indices.size and (code.indices.min() < lo_i or code.indices.max() > hi_i):
                raise ValueError(f"index out of range for {code.bits} bits in {section.role}")
            out.write(pack(to_offsets(code.indices, code.bits), code.bits))


def encode_tqz(model: CompressedModel) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<BBBId", VERSION, TRANSFORM_CODES[model.transform], AXIS_CODES[model.axis],
                          len(model.layers), model.lam))
    for lc in model.layers:
        n, m, a, b = lc.shape
        out.write(struct.pack("<B4I", 0 if lc.kind == "dense" else 1, n, m, a, b))
        if lc.bias is None:
            out.write(b"\x00")
        else:
            out.write(b"\x01" + np.ascontiguousarray(lc.bias, "<f4").tobytes())
        if lc.fallback is not None:
            out.write(b"\x01" + np.ascontiguousarray(lc.fallback, "<f4").tobytes())
            continue
        out.write(b"\x00")
        t = lc.sections["T"]
        flags = (1 if "S_out" in lc.sections else 0) | (2 if "S_in" in lc.sections else 0)
        out.write(struct.pack("<4IBB", lc.blocks, lc.k, t.shape[0], t.shape[1], t.channel_axis, flags))
        for role in ROLES:
            if role in lc.sections:
                sec = lc.sections[role]
                if [tuple(b) for b in sec.blocks] != split_blocks(sec.shape[sec.channel_axis], lc.blocks):
                    raise ValueError(f"{role} blocks do not follow the layer block count {lc.blocks}")
                _write_blocks(out, sec)
    return out.getvalue()


def _read_section(r: _Reader, role: str, shape: tuple, axis: int, nblocks: int) -> SectionCode:
    blocks = split_blocks(shape[axis], nblocks)
    sec = SectionCode(role, shape, axis, blocks, [])
    for lo, hi in blocks:
        pos = r.pos
        bits, step = r.unpack("<Bd", f"{role} block header")
        if bits > MAX_PACK_BITS:
            raise TqzFormatError(f"bit-depth {bits} exceeds {MAX_PACK_BITS}", pos)
        bshape = sec.block_shape(lo, hi)
        count = int(np.prod(bshape))
        if bits:
            if not (np.isfinite(step) and step > 0):
                raise TqzFormatError(f"invalid step-size {step}", pos + 1)
            raw = r.take(packed_size(count, bits), f"{role} block payload")
            idx = from_offsets(unpack(raw, count, bits), bits).reshape(bshape)
        else:
            idx = np.zeros(bshape, dtype=np.int64)
        sec.codes.append(BlockCode(bits, step, idx))
    return sec


def decode_tqz(buf: bytes) -> CompressedModel:
    r = _Reader(buf, TqzFormatError)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise TqzFormatError(f"bad magic {magic!r}, expected 'TQZ1'", 0)
    version, tcode, acode, nlayers, lam = r.unpack("<BBBId", "header")
    if version != VERSION:
        raise TqzFormatError(f"unsupported version {version}", 4)
    if tcode not in TRANSFORM_NAMES or acode not in AXIS_NAMES:
        raise TqzFormatError("unknown transform or axis code", 5)
    layers = []
    for _ in range(nlayers):
        kind_code, n, m, a, b = r.unpack("<B4I", "layer header")
        shape = (n, m, a, b)
        (has_bias,) = r.unpack("<B", "bias flag")
        bias = r.floats(n, "bias").astype(np.float64) if has_bias else None
        (fb,) = r.unpack("<B", "fallback flag")
        kind = "dense" if kind_code == 0 else "conv"
        if fb:
            layers.append(LayerCode(kind, shape, bias, fallback=r.floats(n * m * a * b, "raw weights").reshape(shape)))
            continue
        nb, k, r_out, r_in, caxis, flags = r.unpack("<4IBB", "layer layout")
        if nb < 1 or caxis not in (0, 1):
            raise TqzFormatError("invalid block count or channel axis", r.pos - 2)
        lc = LayerCode(kind, shape, bias, nb, k)
        lc.sections["T"] = _read_section(r, "T", (r_out, r_in, a, b), caxis, nb)
        if flags & 1:
            lc.sections["S_out"] = _read_section(r, "S_out", (n, r_out), 1, nb)
        if flags & 2:
            lc.sections["S_in"] = _read_section(r, "S_in", (m, r_in), 1, nb)
        layers.append(lc)
    if r.pos != len(buf):
        raise TqzFormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return CompressedModel(TRANSFORM_NAMES[tcode], AXIS_NAMES[acode], lam, layers)


def write_tqz(path: str, model: CompressedModel) -> int:
    buf = encode_tqz(model)
    with open(path, "wb") as fh:
        fh.write(buf)
    return len(buf)


def read_tqz(path: str) -> CompressedModel:
    with open(path, "rb") as fh:
        return decode_tqz(fh.read())
