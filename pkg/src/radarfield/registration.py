"""Covariance-weighted rigid registration of uncertain point clouds.

Each iteration pairs every transformed source mean with its nearest target
mean, then takes one Gauss-Newton step on se(3) minimizing
``sum r_i^T C_i^-1 r_i`` with ``r_i = R p_i + t - q_i`` and
``C_i = R S_src,i R^T + S_tgt,i``.  Updates are applied on the left:
``T <- exp(xi) T`` with ``xi = (omega, tau)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DecompositionError, RegistrationError


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self`` after ``other``."""
        return RigidTransform(
            self.rotation @ other.rotation, self.rotation @ other.translation + self.translation
        )

    def quaternion_wxyz(self) -> np.ndarray:
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> "RigidTransform":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), np.asarray(translation, dtype=float))


@dataclass(frozen=True)
class RegistrationConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    max_correspondence_dist: float = 5.0
    robust_loss_scale: Optional[float] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.convergence_tol > 0 or not self.max_correspondence_dist > 0:
            raise ConfigError("tolerances must be positive")
        if self.robust_loss_scale is not None and not self.robust_loss_scale > 0:
            raise ConfigError("robust_loss_scale must be positive")


class RegistrationResult(NamedTuple):
    transform: RigidTransform
    cost: float
    iterations: int


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def point_jacobians(transformed) -> np.ndarray:
    """``d r / d (omega, tau) = [-[T p]_x, I]`` for each transformed point."""
    tp = np.asarray(transformed, dtype=float).reshape(-1, 3)
    J = np.zeros((tp.shape[0], 3, 6))
    x, y, z = tp[:, 0], tp[:, 1], tp[:, 2]
    # -[v]_x
    J[:, 0, 1], J[:, 0, 2] = z, -y
    J[:, 1, 0], J[:, 1, 2] = -z, x
    J[:, 2, 0], J[:, 2, 1] = y, -x
    J[:, :, 3:] = np.eye(3)
    return J


def _whiten(covariances):
    """Lower Cholesky factors of every covariance."""
    try:
        return np.linalg.cholesky(covariances)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError("correspondence covariance is not positive definite") from exc


def _robust_weights(m2: np.ndarray, scale: Optional[float]) -> np.ndarray:
    if scale is None:
        return np.ones_like(m2)
    # Cauchy IRLS weights on the Mahalanobis distance
    return 1.0 / (1.0 + m2 / (scale * scale))


def se3_step(residuals, covariances, jacobians, weights=None) -> np.ndarray:
    """Gauss-Newton update ``xi`` solving ``H xi = -g`` by Cholesky."""
    r = np.asarray(residuals, dtype=float).reshape(-1, 3)
    if r.shape[0] < 3:
        raise RegistrationError(f"need >= 3 residuals, got {r.shape[0]}")
    L = _whiten(np.asarray(covariances, dtype=float).reshape(-1, 3, 3))
    J = np.asarray(jacobians, dtype=float).reshape(-1, 3, 6)
    wr = np.linalg.solve(L, r[..., None])[..., 0]
    wJ = np.linalg.solve(L, J)
    w = np.ones(r.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    H = np.einsum("n,nki,nkj->ij", w, wJ, wJ)
    g = np.einsum("n,nki,nk->i", w, wJ, wr)
    try:
        Lh = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(H))
        raise RegistrationError(
            f"singular normal equations (condition number {cond:.3g})", cond
        ) from exc
    diag = np.diag(Lh)
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        cond = float(np.linalg.cond(H))
        raise RegistrationError(f"singular normal equations (condition number {cond:.3g})", cond)
    y = solve_triangular(Lh, -g, lower=True)
    return solve_triangular(Lh.T, y, lower=False)


def apply_update(T: RigidTransform, xi) -> RigidTransform:
    dR = Rotation.from_rotvec(np.asarray(xi[:3], dtype=float)).as_matrix()
    R = orthonormalize(dR @ T.rotation)
    t = dR @ T.translation + np.asarray(xi[3:], dtype=float)
    return RigidTransform(R, t)


def _correspond(tree, moved, max_dist):
    dist, idx = tree.query(moved, k=1)
    keep = np.isfinite(dist) & (dist <= max_dist)
    return np.flatnonzero(keep), idx[keep]


def _cost(res, C, weights=None) -> float:
    L = _whiten(C)
    z = np.linalg.solve(L, res[..., None])[..., 0]
    m2 = np.einsum("ni,ni->n", z, z)
    if weights is not None:
        m2 = m2 * weights
    return math.fsum(m2)


def register_uncertain(
    src_means,
    src_covs,
    tgt_means,
    tgt_covs,
    cfg: RegistrationConfig = RegistrationConfig(),
    init: Optional[RigidTransform] = None,
) -> RegistrationResult:
    """Estimate ``T`` mapping the source cloud onto the target cloud.

    Stops when the update norm falls below ``convergence_tol`` or after
    ``max_iterations``; the returned cost is evaluated at the final
    transform with the last correspondence set.
    """
    P = np.asarray(src_means, dtype=float).reshape(-1, 3)
    Q = np.asarray(tgt_means, dtype=float).reshape(-1, 3)
    Sp = np.asarray(src_covs, dtype=float).reshape(-1, 3, 3)
    Sq = np.asarray(tgt_covs, dtype=float).reshape(-1, 3, 3)
    if P.shape[0] < 3 or Q.shape[0] < 3:
        raise RegistrationError("need >= 3 points in each cloud")
    if Sp.shape[0] != P.shape[0] or Sq.shape[0] != Q.shape[0]:
        raise ConfigError("one covariance per point required")
    tree = cKDTree(Q)
    T = init or RigidTransform()

    def linearize(T):
        moved = T.apply(P)
        si, ti = _correspond(tree, moved, cfg.max_correspondence_dist)
        if si.size < 3:
            raise RegistrationError(f"only {si.size} correspondences within range")
        res = moved[si] - Q[ti]
        R = T.rotation
        C = R @ Sp[si] @ R.T + Sq[ti]
        return moved[si], res, C

    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        moved, res, C = linearize(T)
        weights = None
        if cfg.robust_loss_scale is not None:
            L = _whiten(C)
            z = np.linalg.solve(L, res[..., None])[..., 0]
            weights = _robust_weights(np.einsum("ni,ni->n", z, z), cfg.robust_loss_scale)
        xi = se3_step(res, C, point_jacobians(moved), weights)
        if np.linalg.norm(xi) < cfg.convergence_tol:
            break
        T = apply_update(T, xi)
    _, res, C = linearize(T)
    return RegistrationResult(T, _cost(res, C), iterations)


def rotation_error(R_est, R_true) -> float:
    """Geodesic angle in radians between two rotations."""
    cos = (np.trace(np.asarray(R_est).T @ np.asarray(R_true)) - 1.0) / 2.0
    return float(math.acos(max(-1.0, min(1.0, cos))))


def register_points(src, tgt, cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """:func:`register_uncertain` over lists of ``UncertainPoint``."""
    return register_uncertain(
        [p.mean for p in src], [p.cov for p in src], [p.mean for p in tgt], [p.cov for p in tgt], cfg
    )
