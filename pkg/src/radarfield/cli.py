"""Command-line entry point: ``radarfield <subcommand> [options]``.

Exit codes: 0 success, 2 usage error or unknown subcommand, 3 malformed
config, 4 unreadable or malformed input file, 5 module failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import textio
from .bdaf import AttentionWeights, gradient_check, read_weights
from .config import PipelineConfig, load_config
from .detect import detect_cube
from .doppler import consistency_filter, estimate_ego_velocity_ransac
from .errors import ConfigError, FileFormatError, RadarFieldError
from .metrics import evaluate
from .pipeline import (
    format_report,
    propagate_detections,
    run_pipeline,
    simulate,
    summary_line,
    write_simulation,
)
from .radar_model import read_cube
from .registration import register_uncertain

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_MODULE = 5

BDAF_TOLERANCE = 1e-4


def thread_cap() -> int:
    """Worker cap from ``RAUF_THREADS`` (default: CPU count)."""
    raw = os.environ.get("RAUF_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"RAUF_THREADS must be an integer, got {raw!r}") from exc


def _emit(out_dir, name, text, stdout=True):
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(text)
    if stdout:
        sys.stdout.write(text)


def _fmt(values) -> str:
    return " ".join(f"{float(v):.9g}" if not isinstance(v, (int, np.integer)) else str(int(v)) for v in values)


def _parse_vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"bad velocity {text!r}") from exc
    if v.shape != (3,):
        raise ConfigError("velocity needs three components")
    return v


def cmd_simulate(args, cfg: PipelineConfig):
    sim = simulate(cfg)
    out = args.out or "."
    write_simulation(out, sim)
    sys.stdout.write(
        format_report(
            {
                "seed": cfg.seed,
                "n_scatterers": len(sim.scene.scatterers),
                "n_ghosts": len(sim.scene.ghosts),
                "cube": os.path.join(out, "cube.rcub"),
            }
        )
    )


def cmd_detect(args, cfg):
    cube = read_cube(args.cube)
    dets = detect_cube(cube, cfg.cfar_config(), cfg.cfar.min_intensity)
    _emit(args.out, "detections.txt", textio.format_detections(dets))


def _ego_for(args, cfg, dets):
    if args.ego:
        return _parse_vector(args.ego)
    return estimate_ego_velocity_ransac(dets, cfg.ransac_config()).velocity


def cmd_filter(args, cfg):
    dets = textio.read_detections(args.detections)
    v = _ego_for(args, cfg, dets)
    verdicts = consistency_filter(dets, v, cfg.doppler.threshold)
    kept = [d for d, vd in zip(dets, verdicts) if vd.inlier]
    residuals = [vd.residual for vd in verdicts if vd.inlier]
    _emit(args.out, "filtered.txt", textio.format_detections(kept, residuals))


def cmd_propagate(args, cfg):
    dets = textio.read_detections(args.detections)
    means, covs = propagate_detections(dets, cfg.polar_sigmas())
    _emit(args.out, "uncertain.txt", textio.format_uncertain_cloud(means, covs))


def cmd_evaluate(args, cfg):
    P = textio.read_cloud(args.predicted)
    Q = textio.read_cloud(args.reference)
    m = evaluate(P, Q, cfg.metrics.tau, cfg.metrics.zeta)
    sys.stdout.write(_fmt([m.chamfer, m.f_score, m.precision, m.recall, m.cpr]) + "\n")
    report = {
        "cd": m.chamfer,
        "f": m.f_score,
        "precision": m.precision,
        "recall": m.recall,
        "cpr": m.cpr,
        "tau": m.tau,
        "zeta": m.zeta,
        "empty_reference": m.empty_reference,
    }
    _emit(args.out or ".", "evaluate_report.txt", format_report(report), stdout=False)


def cmd_register(args, cfg):
    src_m, src_c = textio.read_uncertain_cloud(args.source)
    tgt_m, tgt_c = textio.read_uncertain_cloud(args.target)
    res = register_uncertain(src_m, src_c, tgt_m, tgt_c, cfg.registration_config())
    T = res.transform
    line = _fmt([*T.translation, *T.quaternion_wxyz(), res.cost]) + f" {res.iterations}\n"
    _emit(args.out, "register.txt", line)


def cmd_eve(args, cfg):
    dets = textio.read_detections(args.detections)
    res = estimate_ego_velocity_ransac(dets, cfg.ransac_config())
    line = _fmt(res.velocity) + f" {int(res.inliers.sum())} {len(dets)}\n"
    _emit(args.out, "eve.txt", line)


def bdaf_instance(seed: int, L: int = 4, C: int = 8, d_k: int = 4) -> float:
    rng = np.random.default_rng(seed)
    w = AttentionWeights.random(C, d_k, rng)
    s_p = rng.normal(size=(L, C))
    d_p = rng.normal(size=(L, C))
    return gradient_check(s_p, d_p, w)


def cmd_bdaf_check(args, cfg):
    if args.weights:
        w, L = read_weights(args.weights)
        rng = np.random.default_rng(cfg.seed)
        s_p = rng.normal(size=(L, w.channels))
        d_p = rng.normal(size=(L, w.channels))
        errors = [gradient_check(s_p, d_p, w)]
    else:
        seeds = [cfg.seed * 1000 + k for k in range(args.instances)]
        with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
            errors = list(pool.map(bdaf_instance, seeds))
    worst = max(errors)
    status = "pass" if worst <= BDAF_TOLERANCE else "fail"
    sys.stdout.write(f"instances={len(errors)} max_relative_error={worst:.3e} status={status}\n")
    return EXIT_OK if status == "pass" else EXIT_MODULE


def cmd_pipeline(args, cfg):
    report = run_pipeline(cfg, args.out)
    sys.stdout.write(format_report(report) + summary_line(report))


COMMANDS = {
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "filter": cmd_filter,
    "propagate": cmd_propagate,
    "evaluate": cmd_evaluate,
    "register": cmd_register,
    "eve": cmd_eve,
    "bdaf-check": cmd_bdaf_check,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--zeta", type=float, help="CPR distance threshold (m)")
    common.add_argument("--tau", type=float, help="F-score distance threshold (m)")
    common.add_argument("--doppler-threshold", type=float, help="consistency threshold (m/s)")

    parser = argparse.ArgumentParser(prog="radarfield", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="render a synthetic scene")
    p = sub.add_parser("detect", parents=[common], help="OS-CFAR on a cube file")
    p.add_argument("cube")
    p = sub.add_parser("filter", parents=[common], help="Doppler consistency filter")
    p.add_argument("detections")
    p.add_argument("--ego", help="ego velocity 'vx,vy,vz'; estimated by RANSAC if omitted")
    p = sub.add_parser("propagate", parents=[common], help="detections to uncertain cloud")
    p.add_argument("detections")
    p = sub.add_parser("evaluate", parents=[common], help="CD, F-score and CPR")
    p.add_argument("predicted")
    p.add_argument("reference")
    p = sub.add_parser("register", parents=[common], help="weighted rigid registration")
    p.add_argument("source")
    p.add_argument("target")
    p = sub.add_parser("eve", parents=[common], help="RANSAC ego-velocity estimate")
    p.add_argument("detections")
    p = sub.add_parser("bdaf-check", parents=[common], help="BDAF gradient check")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--weights", help="weight bundle file to check instead of random weights")
    sub.add_parser("pipeline", parents=[common], help="simulate through evaluate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, zeta=args.zeta, tau=args.tau, doppler_threshold=args.doppler_threshold
        )
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        status = COMMANDS[args.command](args, cfg)
    except (OSError, FileFormatError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RadarFieldError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return EXIT_MODULE
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
