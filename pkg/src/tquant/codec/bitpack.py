"""Fixed-width little-endian bit packing of quantization indices."""

from __future__ import annotations

import numpy as np

MAX_PACK_BITS = 16


def packed_size(count: int, bits: int) -> int:
    """Bytes needed for ``count`` fields of ``bits`` bits."""
    return (count * bits + 7) // 8


def pack(values, bits: int) -> bytes:
    """Pack unsigned integers into ``bits``-wide fields, LSB first.

    Field ``i`` occupies stream bits ``i*bits .. i*bits+bits-1``; the stream
    is padded with zero bits to a whole byte.
    """
    values = np.asarray(values, dtype=np.int64).ravel()
    if bits == 0:
        if values.size and np.any(values):
            raise ValueError("non-zero values cannot be packed in 0 bits")
        return b""
    if not 1 <= bits <= MAX_PACK_BITS:
        raise ValueError(f"field width must be in [1, {MAX_PACK_BITS}], got {bits}")
    if values.size and (values.min() < 0 or values.max() >= (1 << bits)):
        raise ValueError(f"value out of range for {bits}-bit fields")
    bit_planes = (values[:, None] >> np.arange(bits, dtype=np.int64)) & 1
    return np.packbits(bit_planes.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack(data: bytes, count: int, bits: int) -> np.ndarray:
    """Inverse of :func:`pack`."""
    if bits == 0:
        return np.zeros(count, dtype=np.int64)
    need = packed_size(count, bits)
    if len(data) < need:
        raise ValueError(f"need {need} bytes for {count} x {bits}-bit fields, got {len(data)}")
    raw = np.unpackbits(np.frombuffer(data[:need], dtype=np.uint8), bitorder="little")
    planes = raw[:count * bits].reshape(count, bits).astype(np.int64)
    return planes @ (np.int64(1) << np.arange(bits, dtype=np.int64))


def to_offsets(indices, bits: int) -> np.ndarray:
    """Signed indices in ``[-2**(R-1), 2**(R-1) - 1]`` -> unsigned ``[0, 2**R)``."""
    return np.asarray(indices, dtype=np.int64) + (1 << (bits - 1))


def from_offsets(offsets, bits: int) -> np.ndarray:
    return np.asarray(offsets, dtype=np.int64) - (1 << (bits - 1))
