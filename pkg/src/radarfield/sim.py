"""Synthetic radar scenes, rendered cubes and point-level detections.

Scenes hold stationary scatterers, an ego velocity and multipath-style
ghosts.  A ghost sits on the same ray as a parent scatterer with its range
mirrored about the middle of ``[MIN_RANGE, max_range]``, and carries a
Doppler offset of magnitude at least ``GHOST_OFFSET_MIN`` relative to the
stationary-world prediction at its own position.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .detect import PolarDetection
from .doppler import expected_doppler
from .errors import ConfigError
from .radar_model import (
    PolarCoord,
    RadarCube,
    RadarIntrinsics,
    cartesian_to_polar,
    polar_to_bin_array,
    polar_to_cartesian,
)
from .uncertainty import PolarSigmas

MIN_RANGE = 1.0
GHOST_OFFSET_MIN = 0.5
GHOST_OFFSET_MAX = 3.0


class Label(enum.IntEnum):
    BACKGROUND = 0
    TRUE = 1
    GHOST = 2
    NOISE = 3


@dataclass(frozen=True)
class Ghost:
    position: np.ndarray
    doppler_offset: float
    reflectivity: float


@dataclass(frozen=True)
class Scene:
    scatterers: np.ndarray  # (N, 3)
    reflectivity: np.ndarray  # (N,)
    ego_velocity: np.ndarray
    ghosts: tuple[Ghost, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.reflectivity) <= 0):
            raise ConfigError("reflectivities must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    noise_floor: float = 1.0
    point_spread_bins: tuple[float, float, float] = (0.25, 0.25, 0.25)
    sigmas: PolarSigmas = field(default_factory=lambda: PolarSigmas(0.05, 0.01, 0.01))
    doppler_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_floor < 0 or self.doppler_sigma < 0:
            raise ConfigError("noise_floor and doppler_sigma must be non-negative")
        if any(w <= 0 for w in self.point_spread_bins):
            raise ConfigError("point spread widths must be positive")


def _uniform_frustum(rng, n, intr: RadarIntrinsics):
    # uniform in volume: r^3 and sin(beta) are uniform
    r = np.cbrt(rng.uniform(MIN_RANGE**3, intr.max_range**3, n))
    a = rng.uniform(intr.azimuth_min, intr.azimuth_max, n)
    sb = rng.uniform(math.sin(intr.elevation_min), math.sin(intr.elevation_max), n)
    b = np.arcsin(sb)
    return r, a, b


def _clip_into_fov(r, a, b, intr):
    r = np.minimum(r, np.nextafter(intr.max_range, 0))
    a = np.clip(a, intr.azimuth_min, np.nextafter(intr.azimuth_max, -np.inf))
    b = np.clip(b, intr.elevation_min, np.nextafter(intr.elevation_max, -np.inf))
    return r, a, b


def generate_scene(
    n_scatterers: int,
    n_ghosts: int,
    v_max: float,
    intr: RadarIntrinsics,
    seed: int,
    reflectivity_range: tuple[float, float] = (100.0, 1000.0),
) -> Scene:
    if n_scatterers < 0 or n_ghosts < 0:
        raise ConfigError("counts must be non-negative")
    rng = np.random.default_rng(seed)
    r, a, b = _clip_into_fov(*_uniform_frustum(rng, n_scatterers, intr), intr)
    cb = np.cos(b)
    pts = np.stack([r * np.cos(a) * cb, r * np.sin(a) * cb, r * np.sin(b)], axis=-1).reshape(-1, 3)
    refl = rng.uniform(*reflectivity_range, n_scatterers)

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    v = direction * rng.uniform(0.0, v_max)

    ghosts = []
    if n_ghosts:
        if n_scatterers:
            parent = rng.integers(0, n_scatterers, n_ghosts)
            gr, ga, gb = r[parent], a[parent], b[parent]
            grefl = refl[parent] * rng.uniform(0.3, 1.0, n_ghosts)
        else:
            gr, ga, gb = _uniform_frustum(rng, n_ghosts, intr)
            grefl = rng.uniform(*reflectivity_range, n_ghosts)
        gr = MIN_RANGE + intr.max_range - gr
        gr, ga, gb = _clip_into_fov(gr, ga, gb, intr)
        mag = rng.uniform(GHOST_OFFSET_MIN, GHOST_OFFSET_MAX, n_ghosts)
        sign = rng.choice([-1.0, 1.0], n_ghosts)
        for i in range(n_ghosts):
            pos = np.array(polar_to_cartesian(PolarCoord(gr[i], ga[i], gb[i])))
            ghosts.append(Ghost(pos, float(sign[i] * mag[i]), float(grefl[i])))
    return Scene(pts, refl, v, tuple(ghosts), seed)


def _sources(scene: Scene):
    """(polar coord, reflectivity, doppler, label) for every emitter."""
    out = []
    for p, refl in zip(scene.scatterers, scene.reflectivity):
        c = cartesian_to_polar(p)
        out.append((c, float(refl), expected_doppler(scene.ego_velocity, c.alpha, c.beta), Label.TRUE))
    for g in scene.ghosts:
        c = cartesian_to_polar(g.position)
        d = expected_doppler(scene.ego_velocity, c.alpha, c.beta) + g.doppler_offset
        out.append((c, g.reflectivity, d, Label.GHOST))
    return out


def footprint_mass(point_spread_bins) -> float:
    """Continuous mass of a unit-amplitude separable Gaussian footprint, in bins."""
    return float(np.prod([math.sqrt(2 * math.pi) * w for w in point_spread_bins]))


def render_cube(scene: Scene, intr: RadarIntrinsics, noise: NoiseSpec, seed: int | None = None):
    """Render intensity and Doppler channels plus a per-bin label tensor.

    Each emitter deposits a separable Gaussian footprint centred on its bin
    with peak ``reflectivity``, truncated at four widths.  A bin takes the
    Doppler of whichever emitter deposits most there; bins without a
    dominant emitter get noise-like Doppler drawn uniformly within the
    ego speed bound.  Noise power is exponentially distributed with mean
    ``noise_floor``.
    """
    rng = np.random.default_rng(scene.seed if seed is None else seed)
    shape = intr.shape
    signal = np.zeros(shape)
    best = np.zeros(shape)
    doppler = np.zeros(shape)
    labels = np.zeros(shape, dtype=np.int8)
    for c, refl, dop, label in _sources(scene):
        i_r, i_a, i_e, valid = polar_to_bin_array(intr, c.r, c.alpha, c.beta)
        if not valid:
            continue
        axes = []
        for center, n, w in zip((int(i_r), int(i_a), int(i_e)), shape, noise.point_spread_bins):
            half = math.ceil(4 * w)
            idx = np.arange(max(0, center - half), min(n, center + half + 1))
            axes.append((idx, np.exp(-0.5 * ((idx - center) / w) ** 2)))
        (ir, wr), (ia, wa), (ie, we) = axes
        patch = refl * wr[:, None, None] * wa[None, :, None] * we[None, None, :]
        region = np.ix_(ir, ia, ie)
        signal[region] += patch
        stronger = patch > best[region]
        best[region] = np.where(stronger, patch, best[region])
        doppler[region] = np.where(stronger, dop, doppler[region])
        labels[region] = np.where(stronger, int(label), labels[region])

    speed = float(np.linalg.norm(scene.ego_velocity))
    noise_power = rng.exponential(noise.noise_floor, shape) if noise.noise_floor > 0 else np.zeros(shape)
    noise_doppler = rng.uniform(-speed - 1.0, speed + 1.0, shape)
    doppler_jitter = rng.normal(0.0, noise.doppler_sigma, shape) if noise.doppler_sigma > 0 else 0.0
    intensity = signal + noise_power

    dominant = best >= noise.noise_floor
    dominant &= best > 0
    doppler = np.where(dominant, doppler + doppler_jitter, noise_doppler)
    labels = np.where(dominant, labels, np.where(intensity > noise.noise_floor, int(Label.NOISE), 0))
    if noise.noise_floor == 0:
        doppler = np.where(best > 0, doppler, 0.0)
    return RadarCube(intr, intensity, doppler), labels.astype(np.int8)


def scatterer_bins(scene: Scene, intr: RadarIntrinsics) -> list[tuple[int, int, int]]:
    """Bin of every true scatterer inside the field of view."""
    out = []
    for p in scene.scatterers:
        c = cartesian_to_polar(p)
        i_r, i_a, i_e, valid = polar_to_bin_array(intr, c.r, c.alpha, c.beta)
        if valid:
            out.append((int(i_r), int(i_a), int(i_e)))
    return out


def sample_detections(
    scene: Scene,
    intr: RadarIntrinsics,
    sigmas: PolarSigmas | None,
    seed: int,
    doppler_sigma: float = 0.0,
) -> tuple[list[PolarDetection], np.ndarray]:
    """Point-level detections: true polar coordinates plus Gaussian polar noise.

    ``sigmas=None`` gives noiseless coordinates.  Doppler is the value at
    the true position (plus optional Gaussian noise), so a perturbed
    detection's Doppler residual reflects its angular error.  Returns the
    detections and an array of :class:`Label` values.
    """
    rng = np.random.default_rng(seed)
    srcs = _sources(scene)
    n = len(srcs)
    if sigmas is None:
        noise = np.zeros((n, 3))
    else:
        noise = rng.normal(size=(n, 3)) * np.array([sigmas.sigma_r, sigmas.sigma_alpha, sigmas.sigma_beta])
    dnoise = rng.normal(0.0, doppler_sigma, n) if doppler_sigma > 0 else np.zeros(n)
    dets, labels = [], []
    for (c, refl, dop, label), dn, dd in zip(srcs, noise, dnoise):
        coord = PolarCoord(max(c.r + dn[0], 0.0), c.alpha + dn[1], c.beta + dn[2])
        i_r, i_a, i_e, valid = polar_to_bin_array(intr, coord.r, coord.alpha, coord.beta)
        bins = (int(i_r), int(i_a), int(i_e)) if valid else None
        dets.append(PolarDetection(coord, refl, dop + dd, bins))
        labels.append(int(label))
    return dets, np.array(labels, dtype=np.int8)


def sample_polar_cloud(c: PolarCoord, sigmas: PolarSigmas, n: int, seed: int) -> np.ndarray:
    """``n`` Cartesian samples of one scatterer under polar Gaussian noise."""
    rng = np.random.default_rng(seed)
    r = c.r + sigmas.sigma_r * rng.standard_normal(n)
    a = c.alpha + sigmas.sigma_alpha * rng.standard_normal(n)
    b = c.beta + sigmas.sigma_beta * rng.standard_normal(n)
    cb = np.cos(b)
    return np.stack([r * np.cos(a) * cb, r * np.sin(a) * cb, r * np.sin(b)], axis=-1)
