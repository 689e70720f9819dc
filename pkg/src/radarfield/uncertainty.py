"""Anisotropic polar-to-Cartesian covariance and the heteroscedastic NLL.

A detection with independent Gaussian errors in range, azimuth and
elevation is mapped to Cartesian space through the first-order expansion
of the spherical map, giving ``cov = J diag(var) J^T``.  Everything here
factorizes covariances with Cholesky; no explicit inverses are formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, DecompositionError
from .radar_model import PolarCoord, polar_to_cartesian

DEGENERATE_RANGE = 1e-6
JITTER = 1e-12


@dataclass(frozen=True)
class PolarSigmas:
    """Standard deviations in range (m), azimuth and elevation (rad)."""

    sigma_r: float
    sigma_alpha: float
    sigma_beta: float

    def __post_init__(self):
        if not (self.sigma_r > 0 and self.sigma_alpha > 0 and self.sigma_beta > 0):
            raise ConfigError("all polar sigmas must be strictly positive")

    @property
    def variances(self) -> np.ndarray:
        return np.array([self.sigma_r, self.sigma_alpha, self.sigma_beta]) ** 2

    @property
    def log_variances(self) -> np.ndarray:
        return np.log(self.variances)


@dataclass(frozen=True)
class UncertainPoint:
    mean: np.ndarray
    cov: np.ndarray
    degenerate: bool = False


def propagation_jacobian(c: PolarCoord) -> np.ndarray:
    r, a, b = c
    ca, sa, cb, sb = math.cos(a), math.sin(a), math.cos(b), math.sin(b)
    return np.array(
        [
            [ca * cb, -r * sa * cb, -r * ca * sb],
            [sa * cb, r * ca * cb, -r * sa * sb],
            [sb, 0.0, r * cb],
        ]
    )


def propagation_jacobian_array(r, alpha, beta) -> np.ndarray:
    """Stacked Jacobians, shape ``(N, 3, 3)``."""
    r = np.asarray(r, dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    J = np.empty(r.shape + (3, 3))
    J[..., 0, 0] = ca * cb
    J[..., 0, 1] = -r * sa * cb
    J[..., 0, 2] = -r * ca * sb
    J[..., 1, 0] = sa * cb
    J[..., 1, 1] = r * ca * cb
    J[..., 1, 2] = -r * sa * sb
    J[..., 2, 0] = sb
    J[..., 2, 1] = 0.0
    J[..., 2, 2] = r * cb
    return J


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def propagate_covariance(c: PolarCoord, s: PolarSigmas) -> np.ndarray:
    """Cartesian covariance of a detection at ``c`` with polar spread ``s``.

    Below ``DEGENERATE_RANGE`` the Jacobian is singular; a ``JITTER * I``
    term keeps the result factorizable.
    """
    J = propagation_jacobian(c)
    cov = _symmetrize((J * s.variances) @ J.T)
    if c.r < DEGENERATE_RANGE:
        cov = cov + JITTER * np.eye(3)
    return cov


def propagate_covariance_array(r, alpha, beta, variances) -> np.ndarray:
    """Batch form; ``variances`` broadcasts against ``(N, 3)``."""
    J = propagation_jacobian_array(r, alpha, beta)
    var = np.broadcast_to(np.asarray(variances, dtype=float), J.shape[:-1])
    cov = _symmetrize(np.einsum("nij,nj,nkj->nik", J, var, J))
    small = np.asarray(r) < DEGENERATE_RANGE
    if np.any(small):
        cov[small] += JITTER * np.eye(3)
    return cov


def propagate_point(c: PolarCoord, s: PolarSigmas) -> UncertainPoint:
    mean = np.array(polar_to_cartesian(c))
    return UncertainPoint(mean, propagate_covariance(c, s), degenerate=c.r < DEGENERATE_RANGE)


def _cholesky(cov: np.ndarray, index=None) -> np.ndarray:
    try:
        return np.linalg.cholesky(np.asarray(cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        where = "" if index is None else f" (term {index})"
        raise DecompositionError(f"covariance is not positive definite{where}", index) from exc


def mahalanobis_sq(eps, cov, *, _index=None) -> float:
    L = _cholesky(cov, _index)
    z = solve_triangular(L, np.asarray(eps, dtype=float), lower=True)
    return float(z @ z)


def log_det(cov, *, _index=None) -> float:
    L = _cholesky(cov, _index)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def nll_term(eps, cov, *, _index=None) -> float:
    L = _cholesky(cov, _index)
    z = solve_triangular(L, np.asarray(eps, dtype=float), lower=True)
    return float(z @ z) + 2.0 * float(np.sum(np.log(np.diag(L))))


def nll_loss(terms: Iterable[tuple]) -> float:
    """Sum of ``eps^T cov^-1 eps + log det cov`` over ``(eps, cov)`` terms.

    The sum is accumulated with ``math.fsum`` so the result does not depend
    on term order.
    """
    return math.fsum(nll_term(eps, cov, _index=i) for i, (eps, cov) in enumerate(terms))


class NllGradient(NamedTuple):
    d_eps: np.ndarray
    d_log_variances: np.ndarray
    d_log_variances_mahalanobis: np.ndarray
    d_log_variances_logdet: np.ndarray


def nll_from_log_variances(eps, log_variances, jacobian) -> float:
    J = np.asarray(jacobian, dtype=float)
    cov = _symmetrize((J * np.exp(log_variances)) @ J.T)
    return nll_term(eps, cov)


def nll_gradients(eps, log_variances, jacobian) -> NllGradient:
    """Analytic gradient of one NLL term with ``cov = J exp(s) J^T``.

    With ``y = cov^-1 eps`` and ``w = J^T y``:
    ``d/d eps = 2 y`` and ``d/d s_k = -exp(s_k) w_k^2 + 1``, where the
    constant 1 is the log-determinant part (``det cov = det(J)^2 prod exp(s)``).
    """
    eps = np.asarray(eps, dtype=float)
    s = np.asarray(log_variances, dtype=float)
    J = np.asarray(jacobian, dtype=float)
    cov = _symmetrize((J * np.exp(s)) @ J.T)
    L = _cholesky(cov)
    y = solve_triangular(L.T, solve_triangular(L, eps, lower=True), lower=False)
    w = J.T @ y
    d_maha = -np.exp(s) * w * w
    d_logdet = np.ones(3)
    return NllGradient(2.0 * y, d_maha + d_logdet, d_maha, d_logdet)
