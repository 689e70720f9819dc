"""Doppler kinematics of stationary scatterers and ego-velocity estimation.

Sign convention: positive Doppler means the scatterer recedes.  A radar
moving with velocity ``v`` sees a stationary scatterer in unit direction
``u`` at radial velocity ``-<v, u>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .detect import PolarDetection
from .errors import ConfigError, DegenerateGeometryError, RansacError
from .radar_model import direction_vector, polar_to_cartesian_array

DEFAULT_V_MAX = 50.0
MIN_SINGULAR_VALUE = 1e-6


class ConsistencyVerdict(NamedTuple):
    index: int
    predicted_doppler: float
    residual: float
    inlier: bool


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.2
    min_sample: int = 3
    seed: int = 0
    v_max: float = DEFAULT_V_MAX

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ConfigError("inlier_threshold must be positive")
        if self.min_sample < 3:
            raise ConfigError("min_sample must be >= 3")


class RansacResult(NamedTuple):
    velocity: np.ndarray
    inliers: np.ndarray


def expected_doppler(v, alpha: float, beta: float) -> float:
    return -float(np.dot(np.asarray(v, dtype=float), direction_vector(alpha, beta)))


def _directions(dets: Sequence[PolarDetection]) -> np.ndarray:
    a = np.array([d.coord.alpha for d in dets], dtype=float)
    b = np.array([d.coord.beta for d in dets], dtype=float)
    return polar_to_cartesian_array(1.0, a, b).reshape(-1, 3)


def _dopplers(dets: Sequence[PolarDetection]) -> np.ndarray:
    return np.array([d.doppler for d in dets], dtype=float)


def doppler_residuals(dets: Sequence[PolarDetection], v) -> np.ndarray:
    """Measured minus predicted Doppler for every detection."""
    if not len(dets):
        return np.zeros(0)
    return _dopplers(dets) + _directions(dets) @ np.asarray(v, dtype=float)


def consistency_filter(
    dets: Sequence[PolarDetection], v, threshold: float
) -> list[ConsistencyVerdict]:
    if not threshold > 0:
        raise ConfigError("threshold must be positive")
    v = np.asarray(v, dtype=float)
    out = []
    for i, d in enumerate(dets):
        pred = expected_doppler(v, d.coord.alpha, d.coord.beta)
        res = d.doppler - pred
        out.append(ConsistencyVerdict(i, pred, res, bool(abs(res) <= threshold)))
    return out


def _solve_ls(U: np.ndarray, d: np.ndarray) -> np.ndarray:
    # d = -U v; SVD doubles as the rank check
    Uu, s, Vt = np.linalg.svd(U, full_matrices=False)
    if s.size < 3 or s[-1] <= MIN_SINGULAR_VALUE:
        smin = float(s[-1]) if s.size == 3 else 0.0
        raise DegenerateGeometryError(
            f"direction vectors do not span 3-space (smallest singular value {smin:.3g})",
            smin,
        )
    return -(Vt.T @ ((Uu.T @ d) / s))


def estimate_ego_velocity_ls(dets: Sequence[PolarDetection]) -> np.ndarray:
    """Least-squares ego velocity from the Doppler of stationary scatterers."""
    if len(dets) < 3:
        raise DegenerateGeometryError(f"need >= 3 detections, got {len(dets)}", 0.0)
    return _solve_ls(_directions(dets), _dopplers(dets))


def estimate_ego_velocity_ransac(
    dets: Sequence[PolarDetection], cfg: RansacConfig
) -> RansacResult:
    """RANSAC over minimal samples, refit by least squares on the inliers.

    The winning model has the most inliers; ties go to the lower inlier
    RMS residual.  A model supported only by its own minimal sample is not
    a consensus, so the winner must have more than ``min_sample`` inliers.
    Sample ``k`` draws from its own generator seeded with ``(seed, k)``.
    """
    n = len(dets)
    if n < cfg.min_sample:
        raise RansacError(f"need >= {cfg.min_sample} detections, got {n}")
    U = _directions(dets)
    d = _dopplers(dets)
    best_count, best_rms, best_mask = -1, math.inf, None
    valid_samples = 0
    for k in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, k])
        idx = rng.choice(n, size=cfg.min_sample, replace=False)
        try:
            v = _solve_ls(U[idx], d[idx])
        except DegenerateGeometryError:
            continue
        if not np.linalg.norm(v) <= cfg.v_max:
            continue
        valid_samples += 1
        res = d + U @ v
        mask = np.abs(res) <= cfg.inlier_threshold
        count = int(mask.sum())
        rms = math.sqrt(float(np.mean(res[mask] ** 2))) if count else math.inf
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_mask = count, rms, mask
    if best_mask is None:
        raise RansacError(
            f"no minimal sample with spanning geometry in {cfg.iterations} iterations"
        )
    if best_count <= cfg.min_sample:
        raise RansacError(
            f"best model has {best_count} inliers, no support beyond its minimal "
            f"sample of {cfg.min_sample} ({valid_samples} valid samples)"
        )
    inlier_dets = [dets[i] for i in np.flatnonzero(best_mask)]
    v = estimate_ego_velocity_ls(inlier_dets)
    return RansacResult(v, best_mask)
