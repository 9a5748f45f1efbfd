"""Cross-channel covariances of layer weights and of output gradients.

A layer ``(n, m, a, b)`` is matricized either along output channels
("column": an ``n x mab`` matrix whose columns are the vectors ``theta_j``)
or along input channels ("row": ``m x nab``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Network, WeightTensor, as_signal, layer_output_gradients

AXES = ("column", "row")


def _check_axis(axis: str) -> str:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    return axis


def matricize(data: np.ndarray, axis: str) -> np.ndarray:
    """Channels-by-vector view of an ``(..., n, m, a, b)`` array.

    Leading batch dimensions are kept, so gradient batches can be
    matricized in one call.
    """
    _check_axis(axis)
    *lead, n, m, a, b = data.shape
    if axis == "column":
        return data.reshape(*lead, n, m * a * b)
    moved = np.swapaxes(data, -4, -3)
    return moved.reshape(*lead, m, n * a * b)


def unmatricize(mat: np.ndarray, shape: tuple[int, int, int, int], axis: str) -> np.ndarray:
    _check_axis(axis)
    n, m, a, b = shape
    if axis == "column":
        return mat.reshape(n, m, a, b)
    return np.swapaxes(mat.reshape(m, n, a, b), 0, 1)


def channel_count(shape, axis: str) -> int:
    return shape[0] if _check_axis(axis) == "column" else shape[1]


def vector_length(shape, axis: str) -> int:
    n, m, a, b = shape
    return m * a * b if _check_axis(axis) == "column" else n * a * b


def weight_covariance(layer: WeightTensor, axis: str = "column") -> np.ndarray:
    """``(1 / L) * W W^t`` for the matricized ``c x L`` weights ``W``."""
    w = matricize(layer.data, axis)
    c = w @ w.T / w.shape[1]
    return 0.5 * (c + c.T)


def gradient_covariance(net: Network, layer_index: int, calib, axis: str = "column",
                        probes: int | None = None, seed: int = 0, chunk: int = 16) -> np.ndarray:
    """Sum over columns ``j`` of ``E[gamma_j gamma_j^t]`` with ``gamma_j = dy/dtheta_j``.

    The expectation is the mean over calibration samples; the sum also runs
    over every output coordinate (or random probe). Samples are processed in
    chunks of ``chunk`` to bound memory.
    """
    _check_axis(axis)
    x = as_signal(calib)
    count = x.shape[0]
    if count == 0:
        raise ValueError("calibration batch is empty")
    rng = np.random.default_rng(seed)
    c = channel_count(net.layers[layer_index].shape, axis)
    acc = np.zeros((c, c))
    for start in range(0, count, chunk):
        grads = layer_output_gradients(net, layer_index, x[start:start + chunk], probes=probes, rng=rng)
        g = matricize(grads.values, axis)  # (count, probes, c, L)
        acc += grads.weight * np.einsum("spkj,splj->kl", g, g, optimize=True)
    acc /= count
    return 0.5 * (acc + acc.T)


def regularize(cov: np.ndarray, ridge: float) -> np.ndarray:
    """Add ``ridge * trace(C) / dim`` to the diagonal."""
    cov = np.asarray(cov, dtype=np.float64)
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if ridge == 0:
        return cov.copy()
    dim = cov.shape[0]
    tr = float(np.trace(cov))
    if not tr > 0:
        raise ValueError("cannot regularize a covariance with zero trace: no scale to regularize against")
    return cov + (ridge * tr / dim) * np.eye(dim)


@dataclass(frozen=True)
class CovariancePair:
    """Unregularized ``(C_theta, C_gamma)`` of one layer plus the ridge to apply."""

    theta: np.ndarray
    gamma: np.ndarray
    axis: str = "column"
    ridge: float = 1e-8

    @property
    def theta_reg(self) -> np.ndarray:
        return regularize(self.theta, self.ridge)

    @property
    def gamma_reg(self) -> np.ndarray:
        return regularize(self.gamma, self.ridge)


def covariance_pair(net: Network, layer_index: int, calib, axis: str = "column",
                    ridge: float = 1e-8, probes: int | None = None, seed: int = 0) -> CovariancePair:
    layer = net.layers[layer_index]
    return CovariancePair(weight_covariance(layer, axis),
                          gradient_covariance(net, layer_index, calib, axis, probes=probes, seed=seed),
                          axis, ridge)
