"""Independent reference implementations used as test oracles.

Plain Python loops and exact arithmetic only; nothing here imports the
code under test except for data containers.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from decimal import ROUND_HALF_UP, Decimal

import numpy as np


def conv_scalar(theta, x, bias=None):
    """Valid correlation, one output value at a time: z_k = sum_j theta_kj * x_j + b_k."""
    theta = np.asarray(theta, float)
    x = np.asarray(x, float)
    n, m, a, b = theta.shape
    c, mm, h, w = x.shape
    assert mm == m
    out = np.zeros((c, n, h - a + 1, w - b + 1))
    for s in range(c):
        for k in range(n):
            for i in range(h - a + 1):
                for j in range(w - b + 1):
                    acc = 0.0 if bias is None else float(bias[k])
                    for ch in range(m):
                        for p in range(a):
                            for q in range(b):
                                acc += theta[k, ch, p, q] * x[s, ch, i + p, j + q]
                    out[s, k, i, j] = acc
    return out


def net_scalar(layers, activations, x):
    """Reference chain evaluation: ``layers`` is a list of (theta, bias)."""
    h = np.asarray(x, float)
    for (theta, bias), act in zip(layers, activations):
        h = conv_scalar(theta, h, bias)
        if act == "relu":
            h = np.where(h > 0, h, 0.0)
    return h


def distortion_scalar(y_ref, y):
    total = 0.0
    for s in range(y_ref.shape[0]):
        total += float(sum((float(u) - float(v)) ** 2 for u, v in zip(y_ref[s].ravel(), y[s].ravel())))
    return total / y_ref.shape[0]


def quantize_decimal(theta: float, bits: int, step: float) -> int:
    """Quantizer index in exact decimal arithmetic, ties away from zero."""
    if bits == 0:
        return 0
    ratio = Decimal(theta) / Decimal(step)
    r = int(ratio.to_integral_value(rounding=ROUND_HALF_UP))
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    return min(max(r, lo), hi)


def covariance_loop(mat):
    """(1/L) sum_j theta_j theta_j^t, one column at a time."""
    mat = np.asarray(mat, float)
    c, length = mat.shape
    acc = np.zeros((c, c))
    for j in range(length):
        col = mat[:, j]
        acc += np.outer(col, col)
    return acc / length


def exhaustive_allocation(curves, weights, lam):
    """Minimize the summed Lagrangian over every joint assignment in exact arithmetic.

    Returns the optimum and all optimal tuples.
    """
    lam = Fraction(lam)
    exact = [[Fraction(float(v)) for v in c] for c in curves]
    best, arg = None, []
    for combo in itertools.product(*[range(len(c)) for c in curves]):
        j = sum(c[r] + lam * w * r for c, w, r in zip(exact, weights, combo))
        if best is None or j < best:
            best, arg = j, [combo]
        elif j == best:
            arg.append(combo)
    return best, arg


def pack_bits_loop(values, bits):
    """LSB-first bit packing, bit by bit."""
    stream = []
    for v in values:
        for i in range(bits):
            stream.append((int(v) >> i) & 1)
    while len(stream) % 8:
        stream.append(0)
    out = bytearray()
    for i in range(0, len(stream), 8):
        out.append(sum(bit << k for k, bit in enumerate(stream[i:i + 8])))
    return bytes(out)


def finite_difference_grads(forward, theta, h=1e-4):
    """Central differences of every output coordinate w.r.t. every entry of ``theta``.

    ``forward(theta)`` returns the (count, ...) output; result has shape
    (count, outputs) + theta.shape.
    """
    base = forward(theta)
    count = base.shape[0]
    out = np.zeros((count, base[0].size) + theta.shape)
    for idx in np.ndindex(theta.shape):
        tp = theta.copy()
        tm = theta.copy()
        tp[idx] += h
        tm[idx] -= h
        d = (forward(tp) - forward(tm)).reshape(count, -1) / (2 * h)
        out[(slice(None), slice(None)) + idx] = d
    return out


def dct_ii_matrix(n: int) -> np.ndarray:
    """Closed-form orthonormal DCT-II, rows are basis vectors."""
    d = np.zeros((n, n))
    for k in range(n):
        scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
        for i in range(n):
            d[k, i] = scale * np.cos(np.pi * (i + 0.5) * k / n)
    return d
