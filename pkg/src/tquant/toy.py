"""Seeded synthetic networks and calibration data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Network, WeightTensor

# (n, a) per layer; m follows from the previous layer. Every layer is full rank on
# both axes (channels <= vector length), so coding gains are not inflated by null space.
DEFAULT_ARCH = ((64, 3), (32, 3), (10, 3))
DEFAULT_INPUT = (16, 7, 7)


def ar1_covariance(dim: int, rho: float) -> np.ndarray:
    """Toeplitz matrix ``rho ** |i - j|``."""
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def ar1_coding_gain(dim: int, rho: float) -> float:
    """KLT gain of a unit-variance AR(1) source, ``(1 - rho**2) ** -((dim - 1) / dim)``."""
    return (1.0 - rho * rho) ** (-(dim - 1) / dim)


def correlated_weights(rng: np.random.Generator, shape, rho_out: float = 0.0, rho_in: float = 0.0,
                       scale: float = 1.0) -> np.ndarray:
    """Gaussian weights with separable AR(1) correlation across output and input channels."""
    n, m, a, b = shape
    z = rng.standard_normal(shape)
    l_out = np.linalg.cholesky(ar1_covariance(n, rho_out))
    l_in = np.linalg.cholesky(ar1_covariance(m, rho_in))
    return scale * np.einsum("kp,jq,pqab->kjab", l_out, l_in, z)


@dataclass(frozen=True)
class ToySpec:
    """Recipe of a synthetic chain: ``arch`` lists ``(out channels, kernel size)``."""

    arch: tuple = DEFAULT_ARCH
    input_shape: tuple = DEFAULT_INPUT
    rho: float = 0.9
    seed: int = 0

    def build(self) -> Network:
        rng = np.random.default_rng(self.seed)
        layers = []
        m, h, w = self.input_shape
        for idx, (n, k) in enumerate(self.arch):
            shape = (n, m, k, k)
            # He-style scale keeps activations near unit variance
            scale = np.sqrt(2.0 / (m * k * k))
            data = correlated_weights(rng, shape, self.rho, self.rho, scale)
            bias = 0.1 * rng.standard_normal(n)
            kind = "dense" if k == 1 and h == 1 and w == 1 else "conv"
            layers.append(WeightTensor(data, bias, kind, f"layer{idx}"))
            m, h, w = n, h - k + 1, w - k + 1
        return Network.chain(layers, self.input_shape)


def toy_network(kind: str = "ar1", seed: int = 0, arch=DEFAULT_ARCH, input_shape=DEFAULT_INPUT,
                rho: float = 0.9) -> Network:
    """``kind`` is ``"ar1"`` (correlated channels) or ``"white"``."""
    if kind not in ("ar1", "white"):
        raise ValueError(f"toy kind must be 'ar1' or 'white', got {kind!r}")
    return ToySpec(tuple(arch), tuple(input_shape), rho if kind == "ar1" else 0.0, seed).build()


def calibration_batch(net: Network, count: int = 64, seed: int = 0) -> np.ndarray:
    """Standard normal inputs matching the network's input shape."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count,) + tuple(net.input_shape))
