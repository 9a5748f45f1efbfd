"""KLT, ELT, 2-d and intra-kernel transforms, and their coding gains.

A transform is stored as an analysis matrix ``U^t`` (coefficients are
``t = U^t theta``) and a synthesis matrix ``S = U^{-t}`` (``theta = S t``).
Rows of the analysis matrix are ordered by non-ascending coefficient
variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.fft import dct

from .covariance import CovariancePair, matricize, vector_length, weight_covariance
from .model import WeightTensor

KINDS = ("none", "klt", "elt", "2d", "intra_kernel")


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TransformPlan:
    kind: str
    axis: str
    analysis: np.ndarray
    synthesis: np.ndarray
    eigenvalues: np.ndarray
    # 2d only: transform over the other channel axis (always orthogonal)
    second_analysis: np.ndarray | None = None
    second_synthesis: np.ndarray | None = None
    second_eigenvalues: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.analysis.shape[0]

    @property
    def basis(self) -> np.ndarray:
        """``U`` (columns are the transform vectors)."""
        return self.analysis.T

    def forward(self, mat: np.ndarray) -> np.ndarray:
        return self.analysis @ mat

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return self.synthesis @ coeffs


def identity_plan(dim: int, axis: str = "column") -> TransformPlan:
    eye = np.eye(dim)
    return TransformPlan("none", axis, eye, eye.copy(), np.ones(dim))


def _check_symmetric(c: np.ndarray, name: str) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"{name} must be square, got shape {c.shape}")
    scale = max(float(np.max(np.abs(c))), np.finfo(float).tiny)
    if np.max(np.abs(c - c.T)) > 1e-10 * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (c + c.T)


def _sign_fix(u: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def _sorted_eigh(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = linalg.eigh(c)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    # round-off can leave PSD eigenvalues slightly negative
    tol = 1e-12 * max(abs(w[0]), np.finfo(float).tiny) * len(w)
    w = np.where((w < 0) & (w > -tol), 0.0, w)
    return w, v


def klt(c_theta: np.ndarray, axis: str = "column") -> TransformPlan:
    """Eigenvectors of the weight covariance."""
    c = _check_symmetric(c_theta, "C_theta")
    w, u = _sorted_eigh(c)
    u = u * _sign_fix(u)
    return TransformPlan("klt", axis, u.T.copy(), u, w)


def elt(c_theta: np.ndarray, c_gamma: np.ndarray, axis: str = "column") -> TransformPlan:
    """Transform with ``U^t C_theta U = diag`` and ``U^t C_gamma^{-1} U = I``.

    With ``C_gamma = L L^t`` and ``L^t C_theta L = Q Lambda Q^t`` this is
    ``U = L Q`` and ``S = L^{-t} Q``.
    """
    ct = _check_symmetric(c_theta, "C_theta")
    cg = _check_symmetric(c_gamma, "C_gamma")
    if ct.shape != cg.shape:
        raise ValueError(f"covariance shapes differ: {ct.shape} vs {cg.shape}")
    try:
        low = linalg.cholesky(cg, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "C_gamma is not positive definite; regularize it (ridge > 0) before building the ELT") from exc
    m = low.T @ ct @ low
    w, q = _sorted_eigh(0.5 * (m + m.T))
    u = low @ q
    signs = _sign_fix(u)
    u = u * signs
    q = q * signs
    s = linalg.solve_triangular(low.T, q, lower=False)
    return TransformPlan("elt", axis, u.T.copy(), s, w)


def transformed_covariances(c_theta, c_gamma, plan: TransformPlan) -> tuple[np.ndarray, np.ndarray]:
    """``(U^t C_theta U, U^{-1} C_gamma U^{-t})``."""
    u = plan.basis
    s = plan.synthesis
    return u.T @ c_theta @ u, s.T @ c_gamma @ s


def _log_geomean_ratio(num: np.ndarray, den: np.ndarray) -> float:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    if np.any(den <= 0):
        return np.inf
    if np.any(num <= 0):
        return -np.inf
    return float(np.mean(np.log(num)) - np.mean(np.log(den)))


def gain_decomposition(c_theta, c_gamma, plan: TransformPlan) -> tuple[float, float]:
    """Weight-decorrelation and gradient-decorrelation factors of the coding gain."""
    c_theta = np.asarray(c_theta, dtype=np.float64)
    c_gamma = np.asarray(c_gamma, dtype=np.float64)
    if c_theta.shape != (plan.dim, plan.dim) or c_gamma.shape != c_theta.shape:
        raise ValueError("covariance dimensions do not match the transform")
    if plan.kind == "none":
        return 1.0, 1.0
    tt, tg = transformed_covariances(c_theta, c_gamma, plan)
    wg = _log_geomean_ratio(np.diag(c_theta), np.diag(tt))
    gg = _log_geomean_ratio(np.diag(c_gamma), np.diag(tg))
    return float(np.exp(wg)), float(np.exp(gg))


def coding_gain(c_theta, c_gamma, plan: TransformPlan) -> float:
    """Ratio of geometric-mean diagonal products without and with the transform.

    Returns ``inf`` when a transformed diagonal entry is zero.
    """
    wg, gg = gain_decomposition(c_theta, c_gamma, plan)
    if np.isinf(wg) or np.isinf(gg):
        if wg == 0 or gg == 0:
            return np.nan
        return np.inf
    return wg * gg


def to_db(gain: float) -> float:
    return 10.0 * np.log10(gain) if gain > 0 else -np.inf


# -- 2-d transform ----------------------------------------------------------

def _theta_cov(c) -> np.ndarray:
    if isinstance(c, CovariancePair):
        return c.theta
    return np.asarray(c, dtype=np.float64)


def transform_2d(layer: WeightTensor, c_out=None, c_in=None) -> TransformPlan:
    """KLTs over output channels (``U``) and input channels (``V``).

    ``c_out``/``c_in`` default to the column- and row-axis weight
    covariances of ``layer``; a :class:`CovariancePair` may be passed, of
    which only the weight covariance is used.
    """
    c_out = weight_covariance(layer, "column") if c_out is None else _theta_cov(c_out)
    c_in = weight_covariance(layer, "row") if c_in is None else _theta_cov(c_in)
    if c_out.shape != (layer.n, layer.n) or c_in.shape != (layer.m, layer.m):
        raise ValueError("covariance dimensions do not conform to the layer")
    pu = klt(c_out)
    pv = klt(c_in)
    return TransformPlan("2d", "column", pu.analysis, pu.synthesis, pu.eigenvalues,
                         pv.analysis, pv.synthesis, pv.eigenvalues)


def apply_2d(layer_data: np.ndarray, plan: TransformPlan) -> np.ndarray:
    """``T = U^t Theta V`` in the layer algebra."""
    return np.einsum("kn,nmab,im->kiab", plan.analysis, layer_data, plan.second_analysis)


def invert_2d(coeffs: np.ndarray, plan: TransformPlan) -> np.ndarray:
    return np.einsum("nk,kiab,mi->nmab", plan.synthesis, coeffs, plan.second_synthesis)


# -- intra-kernel transforms -----------------------------------------------

def dct2_matrix(a: int, b: int) -> np.ndarray:
    """Orthonormal 2-d DCT-II acting on row-major vectorized ``a x b`` kernels."""
    da = dct(np.eye(a), norm="ortho", axis=0)
    db = dct(np.eye(b), norm="ortho", axis=0)
    return np.kron(da, db)


def intra_kernel_covariances(layer: WeightTensor) -> np.ndarray:
    """Per output row ``k``: ``(1/m) sum_j vec(theta_kj) vec(theta_kj)^t``."""
    v = layer.data.reshape(layer.n, layer.m, layer.a * layer.b)
    return np.einsum("kji,kjl->kil", v, v) / layer.m


def intra_kernel_gradient_covariances(grads) -> np.ndarray:
    """Within-kernel analogue of ``C_gamma`` from a :class:`GradientBatch`."""
    g = grads.values
    c, p, n, m, a, b = g.shape
    v = g.reshape(c, p, n, m, a * b)
    return grads.weight * np.einsum("cpkji,cpkjl->kil", v, v, optimize=True) / c


def intra_kernel_gain(layer: WeightTensor, transform: str = "klt", gamma_covs=None) -> np.ndarray:
    """Coding gain of a within-kernel transform for every output row.

    ``gamma_covs`` is an optional ``(n, ab, ab)`` stack of within-kernel
    gradient covariances; identity is used when omitted.
    """
    ab = layer.a * layer.b
    if ab == 1:
        raise ValueError("intra-kernel transform undefined for 1x1 kernels")
    covs = intra_kernel_covariances(layer)
    if gamma_covs is None:
        gamma_covs = np.broadcast_to(np.eye(ab), covs.shape)
    gains = np.empty(layer.n)
    for k in range(layer.n):
        if transform == "dct2":
            d = dct2_matrix(layer.a, layer.b)
            plan = TransformPlan("intra_kernel", "kernel", d, d.copy(), np.diag(d @ covs[k] @ d.T))
        elif transform == "klt":
            p = klt(covs[k])
            plan = TransformPlan("intra_kernel", "kernel", p.analysis, p.synthesis, p.eigenvalues)
        else:
            raise ValueError(f"unknown intra-kernel transform {transform!r}")
        gains[k] = coding_gain(covs[k], gamma_covs[k], plan)
    return gains


# -- SVD relations ----------------------------------------------------------

def svd_consistency_check(layer: WeightTensor, plan: TransformPlan) -> float:
    """Largest off-diagonal magnitude of ``(U^t W)(U^t W)^t`` for a dense layer."""
    if layer.a != 1 or layer.b != 1:
        raise ValueError("SVD relation applies to dense layers only")
    t = plan.forward(matricize(layer.data, plan.axis))
    g = t @ t.T
    off = g - np.diag(np.diag(g))
    return float(np.max(np.abs(off))) if off.size else 0.0


def klt_singular_values(layer: WeightTensor, plan: TransformPlan) -> np.ndarray:
    """Singular values implied by the KLT eigenvalues: ``sqrt(L * lambda)``."""
    length = vector_length(layer.shape, plan.axis)
    return np.sqrt(length * np.clip(plan.eigenvalues, 0, None))
