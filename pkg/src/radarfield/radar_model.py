"""Radar geometry: intrinsics, the measurement cube, and polar/Cartesian maps.

Frame convention: x is boresight, y points left, z points up.  Azimuth is
measured counter-clockwise from x towards y, elevation upward from the
x-y plane.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DegenerateOriginError, FileFormatError

ORIGIN_EPS = 1e-9

CUBE_MAGIC = b"RCUB"
CUBE_VERSION = 1
# magic, version, R, A, E, range_resolution, az_min, az_max, el_min, el_max
_HEADER = struct.Struct("<4sIIIIddddd")


class PolarCoord(NamedTuple):
    r: float
    alpha: float
    beta: float


class CartesianPoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class RadarIntrinsics:
    """Grid layout of a range/azimuth/elevation radar cube.

    Angle bins are center-sampled: bin ``i`` of ``n`` over ``[lo, hi)``
    covers ``[lo + i*w, lo + (i+1)*w)`` with ``w = (hi - lo) / n``.
    """

    range_bins: int
    azimuth_bins: int
    elevation_bins: int
    range_resolution: float
    azimuth_min: float
    azimuth_max: float
    elevation_min: float
    elevation_max: float

    def __post_init__(self):
        for name in ("range_bins", "azimuth_bins", "elevation_bins"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.range_resolution > 0:
            raise ConfigError("range_resolution must be positive")
        if not self.azimuth_min < self.azimuth_max:
            raise ConfigError("azimuth_min must be < azimuth_max")
        if not self.elevation_min < self.elevation_max:
            raise ConfigError("elevation_min must be < elevation_max")

    @property
    def max_range(self) -> float:
        return self.range_bins * self.range_resolution

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.range_bins, self.azimuth_bins, self.elevation_bins)

    @property
    def azimuth_step(self) -> float:
        return (self.azimuth_max - self.azimuth_min) / self.azimuth_bins

    @property
    def elevation_step(self) -> float:
        return (self.elevation_max - self.elevation_min) / self.elevation_bins

    def range_centers(self) -> np.ndarray:
        return (np.arange(self.range_bins) + 0.5) * self.range_resolution

    def azimuth_centers(self) -> np.ndarray:
        return self.azimuth_min + (np.arange(self.azimuth_bins) + 0.5) * self.azimuth_step

    def elevation_centers(self) -> np.ndarray:
        return self.elevation_min + (np.arange(self.elevation_bins) + 0.5) * self.elevation_step

    def in_fov(self, c: PolarCoord) -> bool:
        """Half-open containment test on all three axes."""
        return (
            0.0 <= c.r < self.max_range
            and self.azimuth_min <= c.alpha < self.azimuth_max
            and self.elevation_min <= c.beta < self.elevation_max
        )


@dataclass(frozen=True)
class RadarCube:
    """Two-channel measurement tensor: linear intensity and radial velocity."""

    intrinsics: RadarIntrinsics
    intensity: np.ndarray
    doppler: np.ndarray

    def __post_init__(self):
        intensity = np.array(self.intensity, dtype=np.float64)
        doppler = np.array(self.doppler, dtype=np.float64)
        shape = self.intrinsics.shape
        if intensity.shape != shape or doppler.shape != shape:
            raise ConfigError(
                f"cube channels {intensity.shape}/{doppler.shape} do not match intrinsics {shape}"
            )
        if np.any(intensity < 0) or not np.all(np.isfinite(intensity)):
            raise ConfigError("intensity must be finite and non-negative")
        intensity.flags.writeable = False
        doppler.flags.writeable = False
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "doppler", doppler)

    @classmethod
    def zeros(cls, intrinsics: RadarIntrinsics) -> "RadarCube":
        return cls(intrinsics, np.zeros(intrinsics.shape), np.zeros(intrinsics.shape))


def polar_to_cartesian(c: PolarCoord) -> CartesianPoint:
    r, a, b = c
    cb = math.cos(b)
    return CartesianPoint(r * math.cos(a) * cb, r * math.sin(a) * cb, r * math.sin(b))


def cartesian_to_polar(p: CartesianPoint) -> PolarCoord:
    x, y, z = (float(v) for v in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r < ORIGIN_EPS:
        raise DegenerateOriginError(f"point at range {r:.3g} has undefined angles")
    return PolarCoord(r, math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / r))))


def direction_vector(alpha: float, beta: float) -> np.ndarray:
    cb = math.cos(beta)
    return np.array([math.cos(alpha) * cb, math.sin(alpha) * cb, math.sin(beta)])


def polar_to_cartesian_array(r, alpha, beta) -> np.ndarray:
    """Vectorized :func:`polar_to_cartesian`; returns shape ``(..., 3)``."""
    r, alpha, beta = np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    )
    cb = np.cos(beta)
    return np.stack([r * np.cos(alpha) * cb, r * np.sin(alpha) * cb, r * np.sin(beta)], axis=-1)


def cartesian_to_polar_array(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`cartesian_to_polar` for an ``(N, 3)`` array.

    Points closer than ``ORIGIN_EPS`` to the origin come back with
    ``alpha = beta = nan``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    degenerate = r < ORIGIN_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.arctan2(y, x)
        beta = np.arcsin(np.clip(z / r, -1.0, 1.0))
    alpha[degenerate] = np.nan
    beta[degenerate] = np.nan
    return r, alpha, beta


def bin_to_polar(intr: RadarIntrinsics, i_r: int, i_a: int, i_e: int) -> PolarCoord:
    for idx, n, name in (
        (i_r, intr.range_bins, "range"),
        (i_a, intr.azimuth_bins, "azimuth"),
        (i_e, intr.elevation_bins, "elevation"),
    ):
        if not 0 <= idx < n:
            raise IndexError(f"{name} bin {idx} outside [0, {n})")
    return PolarCoord(
        (i_r + 0.5) * intr.range_resolution,
        intr.azimuth_min + (i_a + 0.5) * intr.azimuth_step,
        intr.elevation_min + (i_e + 0.5) * intr.elevation_step,
    )


def polar_to_bin(intr: RadarIntrinsics, c: PolarCoord) -> tuple[int, int, int]:
    """Bin containing ``c`` under half-open bin boundaries.

    Raises IndexError when ``c`` lies outside the field of view.
    """
    i_r = math.floor(c.r / intr.range_resolution)
    i_a = math.floor((c.alpha - intr.azimuth_min) / intr.azimuth_step)
    i_e = math.floor((c.beta - intr.elevation_min) / intr.elevation_step)
    if not (
        0 <= i_r < intr.range_bins
        and 0 <= i_a < intr.azimuth_bins
        and 0 <= i_e < intr.elevation_bins
    ):
        raise IndexError(f"coordinate {tuple(c)} outside radar field of view")
    return i_r, i_a, i_e


def polar_to_bin_array(intr: RadarIntrinsics, r, alpha, beta):
    """Vectorized :func:`polar_to_bin`; returns ``(i_r, i_a, i_e, valid)``.

    NaN angles are treated as outside the field of view.
    """
    r = np.asarray(r, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    with np.errstate(invalid="ignore"):
        fr = np.floor(r / intr.range_resolution)
        fa = np.floor((alpha - intr.azimuth_min) / intr.azimuth_step)
        fe = np.floor((beta - intr.elevation_min) / intr.elevation_step)
        valid = (
            (fr >= 0) & (fr < intr.range_bins)
            & (fa >= 0) & (fa < intr.azimuth_bins)
            & (fe >= 0) & (fe < intr.elevation_bins)
        )
    i_r = np.where(valid, fr, -1).astype(np.int64)
    i_a = np.where(valid, fa, -1).astype(np.int64)
    i_e = np.where(valid, fe, -1).astype(np.int64)
    return i_r, i_a, i_e, valid


def _pack_header(magic: bytes, intr: RadarIntrinsics) -> bytes:
    return _HEADER.pack(
        magic,
        CUBE_VERSION,
        intr.range_bins,
        intr.azimuth_bins,
        intr.elevation_bins,
        intr.range_resolution,
        intr.azimuth_min,
        intr.azimuth_max,
        intr.elevation_min,
        intr.elevation_max,
    )


def _unpack_header(buf: bytes, magic: bytes) -> RadarIntrinsics:
    if len(buf) < _HEADER.size:
        raise FileFormatError("file shorter than header")
    got, version, R, A, E, res, a0, a1, e0, e1 = _HEADER.unpack_from(buf)
    if got != magic:
        raise FileFormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != CUBE_VERSION:
        raise FileFormatError(f"unsupported version {version}")
    return RadarIntrinsics(R, A, E, res, a0, a1, e0, e1)


def cube_to_bytes(cube: RadarCube) -> bytes:
    head = _pack_header(CUBE_MAGIC, cube.intrinsics)
    body = cube.intensity.astype("<f4").tobytes() + cube.doppler.astype("<f4").tobytes()
    return head + body


def cube_from_bytes(buf: bytes) -> RadarCube:
    intr = _unpack_header(buf, CUBE_MAGIC)
    n = intr.range_bins * intr.azimuth_bins * intr.elevation_bins
    body = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size)
    if body.size != 2 * n:
        raise FileFormatError(f"expected {2 * n} f32 values, found {body.size}")
    intensity = body[:n].astype(np.float64).reshape(intr.shape)
    doppler = body[n:].astype(np.float64).reshape(intr.shape)
    return RadarCube(intr, intensity, doppler)


def write_cube(path, cube: RadarCube) -> None:
    with open(path, "wb") as fh:
        fh.write(cube_to_bytes(cube))


def read_cube(path) -> RadarCube:
    with open(path, "rb") as fh:
        return cube_from_bytes(fh.read())


def grid_to_bytes(magic: bytes, intr: RadarIntrinsics, payload: np.ndarray) -> bytes:
    """Header in the cube layout followed by a u8 payload."""
    data = np.asarray(payload)
    if data.shape != intr.shape:
        raise ConfigError(f"payload shape {data.shape} does not match {intr.shape}")
    return _pack_header(magic, intr) + np.clip(data, 0, 255).astype(np.uint8).tobytes()


def grid_from_bytes(buf: bytes, magic: bytes) -> tuple[RadarIntrinsics, np.ndarray]:
    intr = _unpack_header(buf, magic)
    body = np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size)
    if body.size != intr.range_bins * intr.azimuth_bins * intr.elevation_bins:
        raise FileFormatError("payload size does not match header extents")
    return intr, body.reshape(intr.shape).copy()
