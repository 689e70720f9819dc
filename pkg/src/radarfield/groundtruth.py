"""Frustum voxelization of a reference cloud onto the radar's polar grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .radar_model import (
    RadarIntrinsics,
    cartesian_to_polar_array,
    grid_from_bytes,
    grid_to_bytes,
    polar_to_bin_array,
    polar_to_cartesian_array,
)

GRID_MAGIC = b"ROCC"


@dataclass(frozen=True)
class OccupancyGrid:
    intrinsics: RadarIntrinsics
    occupancy: np.ndarray
    out_of_fov: int = 0

    def __post_init__(self):
        if self.occupancy.shape != self.intrinsics.shape:
            raise ConfigError("occupancy extents do not match intrinsics")

    @property
    def occupied_cells(self) -> set[tuple[int, int, int]]:
        return {tuple(int(v) for v in idx) for idx in np.argwhere(self.occupancy > 0)}


def remove_ground(cloud, z_min: float) -> np.ndarray:
    """Keep points strictly above ``z_min`` (height cutoff in the radar frame)."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return pts[pts[:, 2] > z_min]


def voxelize_frustum(cloud, intr: RadarIntrinsics, mode: str = "binary") -> OccupancyGrid:
    """Bin reference points into the polar grid.

    ``mode="count"`` keeps per-cell point counts; ``"binary"`` thresholds
    them at one.  Points outside the half-open field of view (including
    ``r == max_range``) and points at the origin are tallied in
    ``out_of_fov``.
    """
    if mode not in ("binary", "count"):
        raise ConfigError(f"unknown occupancy mode {mode!r}")
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    counts = np.zeros(intr.shape, dtype=np.int64)
    if pts.shape[0] == 0:
        return OccupancyGrid(intr, counts if mode == "count" else counts.astype(np.uint8))
    r, a, b = cartesian_to_polar_array(pts)
    i_r, i_a, i_e, valid = polar_to_bin_array(intr, r, a, b)
    np.add.at(counts, (i_r[valid], i_a[valid], i_e[valid]), 1)
    out = int(pts.shape[0] - valid.sum())
    if mode == "binary":
        return OccupancyGrid(intr, (counts >= 1).astype(np.uint8), out)
    return OccupancyGrid(intr, counts, out)


def grid_to_pointcloud(g: OccupancyGrid, threshold: float = 1.0) -> np.ndarray:
    """Cartesian centers of every cell whose occupancy reaches ``threshold``."""
    idx = np.argwhere(g.occupancy >= threshold)
    intr = g.intrinsics
    r = intr.range_centers()[idx[:, 0]]
    a = intr.azimuth_centers()[idx[:, 1]]
    b = intr.elevation_centers()[idx[:, 2]]
    return polar_to_cartesian_array(r, a, b).reshape(-1, 3)


def write_grid(path, g: OccupancyGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(GRID_MAGIC, g.intrinsics, g.occupancy))


def read_grid(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        intr, data = grid_from_bytes(fh.read(), GRID_MAGIC)
    return OccupancyGrid(intr, data)
