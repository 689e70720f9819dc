"""End-to-end chain: simulate, detect, Doppler-filter, propagate, evaluate."""

from __future__ import annotations

import os
from typing import NamedTuple, Optional

import numpy as np

from . import textio
from .config import PipelineConfig
from .detect import PolarDetection, detect_cube
from .doppler import consistency_filter, estimate_ego_velocity_ransac
from .groundtruth import grid_to_pointcloud, voxelize_frustum
from .metrics import evaluate
from .radar_model import RadarCube, polar_to_cartesian_array, write_cube
from .sim import Label, Scene, generate_scene, render_cube
from .uncertainty import propagate_covariance_array


class Simulation(NamedTuple):
    scene: Scene
    cube: RadarCube
    labels: np.ndarray


def simulate(cfg: PipelineConfig) -> Simulation:
    intr = cfg.intrinsics()
    s = cfg.scene
    scene = generate_scene(
        s.n_scatterers, s.n_ghosts, s.v_max, intr, cfg.seed,
        reflectivity_range=(s.reflectivity_min, s.reflectivity_max),
    )
    cube, labels = render_cube(scene, intr, cfg.noise_spec())
    # quantize to the cube file's f32 so in-memory and file-based runs agree
    cube = RadarCube(intr, cube.intensity.astype(np.float32), cube.doppler.astype(np.float32))
    return Simulation(scene, cube, labels)


def write_simulation(out_dir: str, sim: Simulation) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_cube(os.path.join(out_dir, "cube.rcub"), sim.cube)
    with open(os.path.join(out_dir, "labels.txt"), "w") as fh:
        for i_r, i_a, i_e in np.argwhere(sim.labels > 0):
            fh.write(f"{i_r} {i_a} {i_e} {Label(int(sim.labels[i_r, i_a, i_e])).name}\n")
    textio.write_cloud(os.path.join(out_dir, "ground_truth.xyz"), sim.scene.scatterers)
    with open(os.path.join(out_dir, "ego_velocity.txt"), "w") as fh:
        fh.write(" ".join(f"{v:.9g}" for v in sim.scene.ego_velocity) + "\n")


def detection_cloud(dets) -> np.ndarray:
    if not dets:
        return np.zeros((0, 3))
    r = np.array([d.coord.r for d in dets])
    a = np.array([d.coord.alpha for d in dets])
    b = np.array([d.coord.beta for d in dets])
    return polar_to_cartesian_array(r, a, b).reshape(-1, 3)


def propagate_detections(dets, sigmas) -> tuple[np.ndarray, np.ndarray]:
    means = detection_cloud(dets)
    if not dets:
        return means, np.zeros((0, 3, 3))
    r = np.array([d.coord.r for d in dets])
    a = np.array([d.coord.alpha for d in dets])
    b = np.array([d.coord.beta for d in dets])
    return means, propagate_covariance_array(r, a, b, sigmas.variances)


def _count_labels(dets: list[PolarDetection], labels: np.ndarray, which: Label) -> int:
    return sum(int(labels[d.source_bins]) == which for d in dets)


def run_pipeline(cfg: PipelineConfig, out_dir: Optional[str] = None) -> dict:
    """Run every stage and return an ordered report dictionary.

    The ego velocity used for filtering is the RANSAC estimate from the
    detections themselves; ground truth for the metrics is the frustum
    voxelization of the scene's scatterers, read back as cell centers.
    """
    sim = simulate(cfg)
    intr = cfg.intrinsics()
    dets = detect_cube(sim.cube, cfg.cfar_config(), cfg.cfar.min_intensity)
    ransac = estimate_ego_velocity_ransac(dets, cfg.ransac_config())
    verdicts = consistency_filter(dets, ransac.velocity, cfg.doppler.threshold)
    kept = [d for d, v in zip(dets, verdicts) if v.inlier]
    means, covs = propagate_detections(kept, cfg.polar_sigmas())

    reference = grid_to_pointcloud(voxelize_frustum(sim.scene.scatterers, intr))
    tau, zeta = cfg.metrics.tau, cfg.metrics.zeta
    before = evaluate(detection_cloud(dets), reference, tau, zeta)
    after = evaluate(means, reference, tau, zeta)

    v_true = sim.scene.ego_velocity
    report = {
        "seed": cfg.seed,
        "n_scatterers": len(sim.scene.scatterers),
        "n_ghosts": len(sim.scene.ghosts),
        "n_detections": len(dets),
        "n_true_detections": _count_labels(dets, sim.labels, Label.TRUE),
        "n_ghost_detections": _count_labels(dets, sim.labels, Label.GHOST),
        "n_filtered": len(kept),
        "n_filtered_true": _count_labels(kept, sim.labels, Label.TRUE),
        "n_filtered_ghost": _count_labels(kept, sim.labels, Label.GHOST),
        "ego_true_vx": v_true[0],
        "ego_true_vy": v_true[1],
        "ego_true_vz": v_true[2],
        "ego_est_vx": ransac.velocity[0],
        "ego_est_vy": ransac.velocity[1],
        "ego_est_vz": ransac.velocity[2],
        "ego_error": float(np.linalg.norm(ransac.velocity - v_true)),
        "ransac_inliers": int(ransac.inliers.sum()),
        "doppler_threshold": cfg.doppler.threshold,
        "tau": tau,
        "zeta": zeta,
    }
    for prefix, m in (("unfiltered", before), ("filtered", after)):
        report[f"cd_{prefix}"] = m.chamfer
        report[f"f_{prefix}"] = m.f_score
        report[f"precision_{prefix}"] = m.precision
        report[f"recall_{prefix}"] = m.recall
        report[f"cpr_{prefix}"] = m.cpr

    if out_dir is not None:
        write_simulation(out_dir, sim)
        residuals = [v.residual for v in verdicts]
        textio.write_detections(os.path.join(out_dir, "detections.txt"), dets)
        textio.write_detections(
            os.path.join(out_dir, "filtered.txt"), kept, [r for r, v in zip(residuals, verdicts) if v.inlier]
        )
        textio.write_uncertain_cloud(os.path.join(out_dir, "uncertain.txt"), means, covs)
        textio.write_cloud(os.path.join(out_dir, "reference.xyz"), reference)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(format_report(report) + summary_line(report))
    return report


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def format_report(report: dict) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in report.items())


def summary_line(report: dict) -> str:
    """One human-readable line; starts with ``#`` so key=value parsers skip it."""
    return (
        f"# {report['n_detections']} detections, {report['n_filtered']} kept after Doppler filtering; "
        f"CPR {report['cpr_unfiltered']:.3f} -> {report['cpr_filtered']:.3f}, "
        f"F {report['f_unfiltered']:.3f} -> {report['f_filtered']:.3f}, "
        f"ego-velocity error {report['ego_error']:.3g} m/s\n"
    )
