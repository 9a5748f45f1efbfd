"""NWT1 tensor/model container.

Layout (little-endian)::

    "NWT1"  u32 record_count
    record: u16 name_len, name (UTF-8), u8 kind (0 dense, 1 conv, 2 tensor),
            u32 n, m, a, b, f32[n*m*a*b] payload (row-major),
            u8 has_bias, [f32[n] bias]

Tensors use ``n = count, m = channels, a = H, b = W``. A model file is a
sequence of dense/conv records read as a chain with ReLU between layers
and identity after the last one.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from ..model import Network, WeightTensor

MAGIC = b"NWT1"
KIND_CODES = {"dense": 0, "conv": 1, "tensor": 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class FormatError(ValueError):
    """Malformed container; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class NwtFormatError(FormatError):
    pass


@dataclass
class NwtRecord:
    name: str
    kind: str
    data: np.ndarray  # float32, (n, m, a, b)
    bias: np.ndarray | None = None

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)


class _Reader:
    def __init__(self, buf: bytes, error=NwtFormatError):
        self.buf = buf
        self.pos = 0
        self.error = error

    def take(self, size: int, what: str) -> bytes:
        if size < 0 or self.pos + size > len(self.buf):
            raise self.error(f"truncated {what}: need {size} bytes, {len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count: int, what: str, dtype="<f4") -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        remaining = len(self.buf) - self.pos
        if count * itemsize > remaining:
            raise self.error(f"{what} declares {count} values ({count * itemsize} bytes) "
                             f"but only {remaining} bytes remain", self.pos)
        return np.frombuffer(self.take(count * itemsize, what), dtype=dtype).copy()


def parse_nwt(buf: bytes) -> list[NwtRecord]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise NwtFormatError(f"bad magic {magic!r}, expected 'NWT1'", 0)
    (count,) = r.unpack("<I", "record count")
    records = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        start = r.pos
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NwtFormatError("record name is not UTF-8", start) from exc
        kind_pos = r.pos
        (code,) = r.unpack("<B", "kind")
        if code not in KIND_NAMES:
            raise NwtFormatError(f"unknown record kind {code}", kind_pos)
        dims_pos = r.pos
        dims = r.unpack("<4I", "dims")
        if 0 in dims:
            raise NwtFormatError(f"record {name!r} has a zero dimension {dims}", dims_pos)
        total = int(np.prod(dims, dtype=object))
        data = r.floats(total, f"payload of {name!r}").reshape(dims)
        (has_bias,) = r.unpack("<B", "bias flag")
        bias = None
        if has_bias == 1:
            bias = r.floats(dims[0], f"bias of {name!r}")
        elif has_bias != 0:
            raise NwtFormatError(f"bias flag must be 0 or 1, got {has_bias}", r.pos - 1)
        records.append(NwtRecord(name, KIND_NAMES[code], data, bias))
    if r.pos != len(buf):
        raise NwtFormatError(f"{len(buf) - r.pos} trailing bytes after last record", r.pos)
    return records


def serialize_nwt(records: Sequence[NwtRecord]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(records)))
    for rec in records:
        name = rec.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ValueError("record name too long")
        data = np.ascontiguousarray(rec.data, dtype="<f4")
        if data.ndim != 4:
            raise ValueError(f"record {rec.name!r} must be 4-d")
        out.write(struct.pack("<H", len(name)))
        out.write(name)
        out.write(struct.pack("<B", KIND_CODES[rec.kind]))
        out.write(struct.pack("<4I", *data.shape))
        out.write(data.tobytes())
        if rec.bias is None:
            out.write(b"\x00")
        else:
            out.write(b"\x01")
            out.write(np.ascontiguousarray(rec.bias, dtype="<f4").tobytes())
    return out.getvalue()


def read_nwt(source: str | BinaryIO) -> list[NwtRecord]:
    if hasattr(source, "read"):
        return parse_nwt(source.read())
    with open(source, "rb") as fh:
        return parse_nwt(fh.read())


def write_nwt(target: str | BinaryIO, records: Sequence[NwtRecord]) -> None:
    buf = serialize_nwt(records)
    if hasattr(target, "write"):
        target.write(buf)
    else:
        with open(target, "wb") as fh:
            fh.write(buf)


def network_to_records(net: Network) -> list[NwtRecord]:
    for idx, act in enumerate(net.activations[:-1]):
        if act != "relu":
            raise ValueError(f"NWT models assume ReLU between layers; layer {idx} has {act!r}")
    return [NwtRecord(layer.name or f"layer{idx}", layer.kind, layer.data.astype("<f4"),
                      layer.bias.astype("<f4"))
            for idx, layer in enumerate(net.layers)]


def infer_input_shape(layers: Sequence[WeightTensor]) -> tuple[int, int, int]:
    """Input shape for which the chain ends in a 1x1 output map."""
    h = 1 + sum(layer.a - 1 for layer in layers)
    w = 1 + sum(layer.b - 1 for layer in layers)
    return layers[0].m, h, w


def records_to_network(records: Sequence[NwtRecord], input_shape=None) -> Network:
    layers = [WeightTensor(rec.data.astype(np.float64), None if rec.bias is None else rec.bias.astype(np.float64),
                           rec.kind, rec.name)
              for rec in records if rec.kind in ("dense", "conv")]
    if not layers:
        raise NwtFormatError("model file contains no layer records")
    if input_shape is None:
        input_shape = infer_input_shape(layers)
    return Network.chain(layers, input_shape)


def tensor_record(name: str, data: np.ndarray) -> NwtRecord:
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None, None]
    return NwtRecord(name, "tensor", data.astype("<f4"), None)


def load_model(path: str, input_shape=None) -> Network:
    return records_to_network(read_nwt(path), input_shape)


def load_tensor(path: str) -> np.ndarray:
    """First tensor record of a file, as float64."""
    for rec in read_nwt(path):
        if rec.kind == "tensor":
            return rec.data.astype(np.float64)
    raise NwtFormatError(f"{path} contains no tensor record")
