"""High-rate distortion predictions and Monte Carlo checks on Gaussian sources.

A synthetic source is a Gaussian weight vector ``theta ~ N(0, C_theta)``
observed through a fixed linear map ``y = G theta`` with ``G^t G =
C_gamma``, so the output Jacobian has exactly the prescribed gradient
covariance and the orthogonal-gradient assumption holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import ortho_group

from .quantizer import MAX_BITS, dequantize, quantize_indices
from .transforms import TransformPlan, identity_plan, transformed_covariances

# Step-size factor of the Monte Carlo quantizer: Delta_k = STEP_FACTOR * sigma_k * 2**-R_k.
# Unclipped uniform quantization then has eps^2 = STEP_FACTOR**2 / 12 = pi e / 6.
STEP_FACTOR = math.sqrt(2.0 * math.pi * math.e)
CHUNK = 10_000


class EpsilonFitError(RuntimeError):
    """The per-rate estimates of eps^2 disagree; ``details`` holds them."""

    def __init__(self, message: str, details: dict):
        self.details = details
        super().__init__(f"{message}: {details}")


def _check_pd(c: np.ndarray, name: str) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c).max())):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc
    return 0.5 * (c + c.T)


@dataclass(frozen=True)
class SyntheticSource:
    c_theta: np.ndarray
    c_gamma: np.ndarray
    seed: int = 0
    eps2: float = 1.0

    def __post_init__(self):
        ct = _check_pd(self.c_theta, "C_theta")
        cg = _check_pd(self.c_gamma, "C_gamma")
        if ct.shape != cg.shape:
            raise ValueError("covariances must have the same size")
        object.__setattr__(self, "c_theta", ct)
        object.__setattr__(self, "c_gamma", cg)

    @property
    def n(self) -> int:
        return self.c_theta.shape[0]

    def linear_map(self) -> np.ndarray:
        """``G = L^t`` with ``C_gamma = L L^t``, so ``G^t G = C_gamma``."""
        return np.linalg.cholesky(self.c_gamma).T

    def samples(self, trials: int, seed: int | None = None) -> np.ndarray:
        """``(trials, n)`` draws, generated in fixed chunks from spawned substreams."""
        ss = np.random.SeedSequence(self.seed if seed is None else seed)
        chunks = -(-trials // CHUNK)
        lt = np.linalg.cholesky(self.c_theta)
        out = []
        for i, child in enumerate(ss.spawn(chunks)):
            size = min(CHUNK, trials - i * CHUNK)
            out.append(np.random.default_rng(child).standard_normal((size, self.n)) @ lt.T)
        return np.concatenate(out)

    def with_eps2(self, eps2: float) -> "SyntheticSource":
        return SyntheticSource(self.c_theta, self.c_gamma, self.seed, eps2)


def random_spd(rng: np.random.Generator, n: int, cond: float = 10.0) -> np.ndarray:
    """Random symmetric positive-definite matrix with condition number ``cond``."""
    q = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    eig = np.geomspace(1.0, 1.0 / cond, n)
    c = (q * eig) @ q.T
    return 0.5 * (c + c.T)


def random_source(n: int = 4, seed: int = 0, cond: float = 10.0) -> SyntheticSource:
    rng = np.random.default_rng(seed)
    return SyntheticSource(random_spd(rng, n, cond), random_spd(rng, n, cond), seed)


def white_source(n: int = 4, seed: int = 0, variance: float = 1.0) -> SyntheticSource:
    return SyntheticSource(variance * np.eye(n), np.eye(n), seed)


def _log_geomean(v: np.ndarray) -> float:
    return float(np.mean(np.log(v)))


def predict_d_pcm(src: SyntheticSource, rate: float) -> float:
    """``(prod_k (C_gamma)_kk (C_theta)_kk)^(1/n) eps^2 2^(-2R)``."""
    if rate <= 0:
        raise ValueError("the high-rate prediction needs R > 0")
    g = _log_geomean(np.diag(src.c_gamma) * np.diag(src.c_theta))
    return math.exp(g) * src.eps2 * 2.0 ** (-2.0 * rate)


def predict_d_tc(src: SyntheticSource, plan: TransformPlan, rate: float) -> float:
    """As :func:`predict_d_pcm` on the transformed pair ``(U^t C_theta U, S^t C_gamma S)``."""
    if rate <= 0:
        raise ValueError("the high-rate prediction needs R > 0")
    ct, cg = transformed_covariances(src.c_theta, src.c_gamma, plan)
    g = _log_geomean(np.diag(cg) * np.diag(ct))
    return math.exp(g) * src.eps2 * 2.0 ** (-2.0 * rate)


def waterfilling_rates(src: SyntheticSource, plan: TransformPlan, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Equal-distortion bit-depths ``R_k`` (mean ``R``) and coefficient std-devs."""
    ct, cg = transformed_covariances(src.c_theta, src.c_gamma, plan)
    var = np.diag(ct)
    prod = np.diag(cg) * var
    rates = rate + 0.5 * (np.log2(prod) - np.mean(np.log2(prod)))
    return rates, np.sqrt(var)


def monte_carlo_distortion(src: SyntheticSource, plan: TransformPlan | None, rate: float,
                           trials: int = 100_000, linear_map: np.ndarray | None = None,
                           seed: int | None = None) -> float:
    """Measured ``(1/n) E||y - y_hat||^2`` with transform coefficients quantized.

    Coefficient ``k`` gets the fractional bit-depth of
    :func:`waterfilling_rates` through its step-size, at a fixed large
    integer clip depth (no overload).
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    plan = identity_plan(src.n) if plan is None else plan
    g = src.linear_map() if linear_map is None else np.asarray(linear_map, float)
    rates, sigma = waterfilling_rates(src, plan, rate)
    steps = STEP_FACTOR * sigma * 2.0 ** (-rates)
    theta = src.samples(trials, seed)
    t = theta @ plan.analysis.T
    t_hat = np.empty_like(t)
    for k in range(src.n):
        t_hat[:, k] = dequantize(quantize_indices(t[:, k], MAX_BITS, float(steps[k])), float(steps[k]))
    err = (theta - t_hat @ plan.synthesis.T) @ g.T
    return float(np.mean(np.sum(err * err, axis=1)) / src.n)


def per_bit_ratios(distortions: Sequence[float]) -> np.ndarray:
    """``D(R) / D(R + 1)`` for consecutive rates; 4 under the 2^(-2R) law."""
    d = np.asarray(distortions, float)
    return d[:-1] / d[1:]


def log2_slope(rates: Sequence[float], distortions: Sequence[float]) -> float:
    """Least-squares slope of ``log2 D`` against ``R`` (about -2)."""
    return float(np.polyfit(np.asarray(rates, float), np.log2(distortions), 1)[0])


@dataclass
class EpsilonFit:
    eps2: float
    rates: list
    per_rate: list
    distortions: list = field(default_factory=list)

    @property
    def spread(self) -> float:
        """Largest relative deviation of a per-rate estimate from the fit."""
        return float(np.max(np.abs(np.asarray(self.per_rate) / self.eps2 - 1.0)))


def fit_epsilon(src: SyntheticSource, rates: Sequence[float] = (6, 7, 8, 9, 10), trials: int = 100_000,
                plan: TransformPlan | None = None, tol: float = 0.10) -> EpsilonFit:
    """Least-squares fit of ``log eps^2`` to measured distortions under a -2 bits slope.

    Raises :class:`EpsilonFitError` if any per-rate estimate deviates from
    the fit by more than ``tol``.
    """
    rates = [float(r) for r in rates]
    if len(rates) < 2:
        raise ValueError("need at least two rates")
    unit = src.with_eps2(1.0)
    d = [monte_carlo_distortion(src, plan, r, trials) for r in rates]
    pred = [predict_d_tc(unit, plan or identity_plan(src.n), r) for r in rates]
    per = [di / pi for di, pi in zip(d, pred)]
    fit = EpsilonFit(float(np.exp(np.mean(np.log(per)))), rates, per, d)
    if not (fit.eps2 > 0 and np.isfinite(fit.eps2)) or fit.spread > tol:
        raise EpsilonFitError("eps^2 is not stable across rates",
                              {"rates": rates, "per_rate": per, "fit": fit.eps2, "spread": fit.spread})
    return fit
