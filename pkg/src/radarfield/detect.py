"""Ordered-statistics CFAR along the range axis of a radar cube."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .radar_model import PolarCoord, RadarCube, bin_to_polar


@dataclass(frozen=True)
class CfarConfig:
    guard_cells: int = 2
    train_cells: int = 8
    os_rank_fraction: float = 0.75
    scale_factor: float = 3.0

    def __post_init__(self):
        if self.train_cells < 1:
            raise ConfigError("train_cells must be >= 1")
        if self.guard_cells < 0:
            raise ConfigError("guard_cells must be >= 0")
        if not 0.0 < self.os_rank_fraction <= 1.0:
            raise ConfigError("os_rank_fraction must lie in (0, 1]")
        if not self.scale_factor > 0:
            raise ConfigError("scale_factor must be positive")


@dataclass(frozen=True)
class PolarDetection:
    coord: PolarCoord
    intensity: float
    doppler: float
    source_bins: Optional[tuple[int, int, int]] = None


def _training_indices(n: int, i: int, guard: int, train: int) -> np.ndarray:
    lead = range(max(0, i - guard - train), max(0, i - guard))
    lag = range(min(n, i + guard + 1), min(n, i + guard + train + 1))
    return np.fromiter((*lead, *lag), dtype=np.int64)


def os_cfar(profiles: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """OS-CFAR mask along axis 0 of ``profiles`` (shape ``(n, ...)``).

    A cell is detected when it exceeds ``scale_factor`` times the k-th
    smallest training value, ``k = ceil(os_rank_fraction * n_train)``.
    Near the edges the training window is truncated and ``n_train`` counts
    only the cells actually available.
    """
    x = np.asarray(profiles, dtype=np.float64)
    n = x.shape[0]
    if n <= 2 * (cfg.guard_cells + cfg.train_cells):
        raise ConfigError(
            f"profile length {n} must exceed 2*(guard+train) = "
            f"{2 * (cfg.guard_cells + cfg.train_cells)}"
        )
    mask = np.zeros(x.shape, dtype=bool)
    for i in range(n):
        idx = _training_indices(n, i, cfg.guard_cells, cfg.train_cells)
        k = max(1, math.ceil(cfg.os_rank_fraction * idx.size))
        # stable sort: equal values cannot change the k-th order statistic
        stat = np.sort(x[idx], axis=0, kind="stable")[k - 1]
        mask[i] = x[i] > cfg.scale_factor * stat
    return mask


def os_cfar_1d(profile, cfg: CfarConfig) -> np.ndarray:
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1:
        raise ConfigError("os_cfar_1d expects a 1-D profile")
    return os_cfar(profile, cfg)


def detect_cube(
    cube: RadarCube, cfg: CfarConfig, min_intensity: float = 0.0
) -> list[PolarDetection]:
    """Run range-axis OS-CFAR on every (azimuth, elevation) column.

    Detections are ordered by ``(i_a, i_e, i_r)`` and carry the cube's
    Doppler value at the detected bin.
    """
    intensity = cube.intensity
    mask = os_cfar(intensity, cfg) & (intensity > 0) & (intensity >= min_intensity)
    # argwhere on (a, e, r) layout yields the required lexicographic order
    hits = np.argwhere(np.transpose(mask, (1, 2, 0)))
    intr = cube.intrinsics
    return [
        PolarDetection(
            coord=bin_to_polar(intr, int(i_r), int(i_a), int(i_e)),
            intensity=float(intensity[i_r, i_a, i_e]),
            doppler=float(cube.doppler[i_r, i_a, i_e]),
            source_bins=(int(i_r), int(i_a), int(i_e)),
        )
        for i_a, i_e, i_r in hits
    ]


def detections_to_arrays(dets) -> dict[str, np.ndarray]:
    """Columnar view of a detection list (r, alpha, beta, intensity, doppler)."""
    arr = np.array(
        [(d.coord.r, d.coord.alpha, d.coord.beta, d.intensity, d.doppler) for d in dets],
        dtype=np.float64,
    ).reshape(-1, 5)
    return {
        "r": arr[:, 0],
        "alpha": arr[:, 1],
        "beta": arr[:, 2],
        "intensity": arr[:, 3],
        "doppler": arr[:, 4],
    }
