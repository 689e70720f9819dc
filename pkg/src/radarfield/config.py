"""INI-style pipeline configuration.

Every section maps onto one module's config type.  Precedence is command
line flags, then file values, then the defaults below (the bundled demo
scene).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .detect import CfarConfig
from .doppler import RansacConfig
from .errors import ConfigError
from .radar_model import RadarIntrinsics
from .registration import RegistrationConfig
from .sim import NoiseSpec
from .uncertainty import PolarSigmas


@dataclass(frozen=True)
class RadarSection:
    range_bins: int = 64
    azimuth_bins: int = 32
    elevation_bins: int = 8
    range_resolution: float = 0.3125
    azimuth_min: float = -0.785398163
    azimuth_max: float = 0.785398163
    elevation_min: float = -0.261799388
    elevation_max: float = 0.261799388

    def intrinsics(self) -> RadarIntrinsics:
        return RadarIntrinsics(**{f.name: getattr(self, f.name) for f in fields(self)})


@dataclass(frozen=True)
class SceneSection:
    n_scatterers: int = 40
    n_ghosts: int = 12
    v_max: float = 3.0
    reflectivity_min: float = 100.0
    reflectivity_max: float = 1000.0


@dataclass(frozen=True)
class NoiseSection:
    noise_floor: float = 1.0
    spread_r: float = 0.25
    spread_a: float = 0.25
    spread_e: float = 0.25
    doppler_sigma: float = 0.0


@dataclass(frozen=True)
class CfarSection:
    guard_cells: int = 2
    train_cells: int = 8
    os_rank_fraction: float = 0.75
    scale_factor: float = 3.0
    min_intensity: float = 20.0


@dataclass(frozen=True)
class SigmaSection:
    sigma_r: float = 0.05
    sigma_alpha: float = 0.02
    sigma_beta: float = 0.02


@dataclass(frozen=True)
class DopplerSection:
    threshold: float = 0.25


@dataclass(frozen=True)
class RansacSection:
    iterations: int = 200
    inlier_threshold: float = 0.2
    v_max: float = 50.0


@dataclass(frozen=True)
class RegistrationSection:
    max_iterations: int = 50
    convergence_tol: float = 1e-10
    max_correspondence_dist: float = 5.0
    robust_loss_scale: Optional[float] = None


@dataclass(frozen=True)
class MetricsSection:
    tau: float = 0.5
    zeta: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    radar: RadarSection = field(default_factory=RadarSection)
    scene: SceneSection = field(default_factory=SceneSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    cfar: CfarSection = field(default_factory=CfarSection)
    sigmas: SigmaSection = field(default_factory=SigmaSection)
    doppler: DopplerSection = field(default_factory=DopplerSection)
    ransac: RansacSection = field(default_factory=RansacSection)
    registration: RegistrationSection = field(default_factory=RegistrationSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def intrinsics(self) -> RadarIntrinsics:
        return self.radar.intrinsics()

    def cfar_config(self) -> CfarConfig:
        c = self.cfar
        return CfarConfig(c.guard_cells, c.train_cells, c.os_rank_fraction, c.scale_factor)

    def polar_sigmas(self) -> PolarSigmas:
        s = self.sigmas
        return PolarSigmas(s.sigma_r, s.sigma_alpha, s.sigma_beta)

    def noise_spec(self) -> NoiseSpec:
        n = self.noise
        return NoiseSpec(
            n.noise_floor, (n.spread_r, n.spread_a, n.spread_e), self.polar_sigmas(), n.doppler_sigma
        )

    def ransac_config(self) -> RansacConfig:
        r = self.ransac
        return RansacConfig(r.iterations, r.inlier_threshold, 3, self.seed, r.v_max)

    def registration_config(self) -> RegistrationConfig:
        r = self.registration
        return RegistrationConfig(
            r.max_iterations, r.convergence_tol, r.max_correspondence_dist, r.robust_loss_scale
        )

    def with_overrides(self, seed=None, zeta=None, tau=None, doppler_threshold=None) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if zeta is not None:
            cfg = replace(cfg, metrics=replace(cfg.metrics, zeta=zeta))
        if tau is not None:
            cfg = replace(cfg, metrics=replace(cfg.metrics, tau=tau))
        if doppler_threshold is not None:
            cfg = replace(cfg, doppler=replace(cfg.doppler, threshold=doppler_threshold))
        return cfg


_SECTIONS = [f.name for f in fields(PipelineConfig) if f.name != "seed"]


def _convert(section: str, f, raw: str):
    base = f.type
    try:
        if raw.strip() in ("", "none", "None") and "Optional" in str(base):
            return None
        if base in ("int", int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {f.name}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = set(parser.sections()) - set(_SECTIONS) - {"pipeline"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    defaults = PipelineConfig()
    kwargs = {}
    if parser.has_section("pipeline"):
        extra = set(parser["pipeline"]) - {"seed"}
        if extra:
            raise ConfigError(f"[pipeline] unknown keys: {sorted(extra)}")
        if "seed" in parser["pipeline"]:
            try:
                kwargs["seed"] = int(parser["pipeline"]["seed"])
            except ValueError as exc:
                raise ConfigError("[pipeline] seed must be an integer") from exc
    for name in _SECTIONS:
        current = getattr(defaults, name)
        if not parser.has_section(name):
            continue
        known = {f.name: f for f in fields(current)}
        values = {}
        for key, raw in parser[name].items():
            if key not in known:
                raise ConfigError(f"[{name}] unknown key {key!r}")
            values[key] = _convert(name, known[key], raw)
        kwargs[name] = replace(current, **values)
    cfg = PipelineConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    """Build every module config once so invalid values fail early."""
    cfg.intrinsics()
    cfg.cfar_config()
    cfg.noise_spec()
    cfg.ransac_config()
    cfg.registration_config()
    if cfg.doppler.threshold <= 0 or cfg.metrics.tau <= 0 or cfg.metrics.zeta <= 0:
        raise ConfigError("thresholds must be positive")


def config_to_ini(cfg: PipelineConfig) -> str:
    parser = configparser.ConfigParser()
    parser["pipeline"] = {"seed": str(cfg.seed)}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {
            f.name: "none" if getattr(section, f.name) is None else repr(getattr(section, f.name))
            for f in fields(section)
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return parse_config(fh.read())
