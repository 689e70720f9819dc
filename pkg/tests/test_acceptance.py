"""Acceptance criteria, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line, printed at the
end of the pytest run, and then asserts on the same verdict.
"""

import math
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from radarfield.bdaf import AttentionWeights, attention_matrix, bdaf_forward, gradient_check
from radarfield.config import PipelineConfig
from radarfield.doppler import RansacConfig, consistency_filter, estimate_ego_velocity_ransac
from radarfield.groundtruth import voxelize_frustum
from radarfield.metrics import chamfer_distance, cpr, f_score
from radarfield.pipeline import run_pipeline
from radarfield.radar_model import (
    PolarCoord,
    RadarIntrinsics,
    cartesian_to_polar_array,
    polar_to_cartesian,
    polar_to_cartesian_array,
)
from radarfield.registration import RegistrationConfig, RigidTransform, register_uncertain, rotation_error
from radarfield.sim import Label, generate_scene, sample_detections, sample_polar_cloud
from radarfield.uncertainty import (
    PolarSigmas,
    mahalanobis_sq,
    nll_from_log_variances,
    nll_gradients,
    propagate_covariance,
    propagate_covariance_array,
    propagation_jacobian,
)


def verdict(n, passed, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, detail


def test_criterion_01_covariance_monte_carlo():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for k in range(20):
        c = PolarCoord(rng.uniform(1, 50), rng.uniform(-1.2, 1.2), rng.uniform(-0.5, 0.5))
        s = PolarSigmas(rng.uniform(0.01, 0.3), rng.uniform(0.001, 0.05), rng.uniform(0.001, 0.05))
        samples = sample_polar_cloud(c, s, 1_000_000, seed=1000 + k)
        cov = propagate_covariance(c, s)
        err = np.linalg.norm(np.cov(samples.T) - cov) / np.linalg.norm(cov)
        worst = max(worst, err)
    elapsed = time.perf_counter() - start
    verdict(1, worst < 0.05 and elapsed < 60, f"max Frobenius-relative error {worst:.4f} (< 0.05), {elapsed:.1f} s (< 60 s)")


def fd_jacobian(c, h=1e-6):
    cols = []
    for k in range(3):
        hi, lo = list(c), list(c)
        hi[k] += h
        lo[k] -= h
        cols.append((np.array(polar_to_cartesian(PolarCoord(*hi))) - np.array(polar_to_cartesian(PolarCoord(*lo)))) / (2 * h))
    return np.stack(cols, axis=1)


def test_criterion_02_jacobian():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        c = PolarCoord(rng.uniform(0.1, 50), rng.uniform(-math.pi, math.pi), rng.uniform(-1.5, 1.5))
        worst = max(worst, float(np.abs(propagation_jacobian(c) - fd_jacobian(c)).max()))
    verdict(2, worst < 1e-6, f"max absolute Jacobian error {worst:.2e} (< 1e-6)")


def test_criterion_03_nll_gradients():
    rng = np.random.default_rng(103)
    h = 1e-6
    worst = 0.0
    logdet_exact = True
    for _ in range(100):
        c = PolarCoord(rng.uniform(1, 30), rng.uniform(-1.2, 1.2), rng.uniform(-0.5, 0.5))
        J = propagation_jacobian(c)
        s = 2 * np.log([rng.uniform(0.02, 0.5), rng.uniform(0.005, 0.05), rng.uniform(0.005, 0.05)])
        eps = np.linalg.cholesky((J * np.exp(s)) @ J.T) @ rng.normal(size=3)
        g = nll_gradients(eps, s, J)
        logdet_exact &= bool(np.all(g.d_log_variances_logdet == 1.0))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fe = (nll_from_log_variances(eps + e, s, J) - nll_from_log_variances(eps - e, s, J)) / (2 * h)
            fs = (nll_from_log_variances(eps, s + e, J) - nll_from_log_variances(eps, s - e, J)) / (2 * h)
            for a, n in ((g.d_eps[k], fe), (g.d_log_variances[k], fs)):
                worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-8))
    verdict(3, worst < 1e-5 and logdet_exact, f"max relative gradient error {worst:.2e} (< 1e-5), log-det gradient == 1: {logdet_exact}")


def test_criterion_04_calibration():
    rng = np.random.default_rng(104)
    n = 100_000
    cov = propagate_covariance(PolarCoord(12.0, 0.4, -0.1), PolarSigmas(0.1, 0.03, 0.02))
    L = np.linalg.cholesky(cov)
    eps = rng.standard_normal((n, 3)) @ L.T
    m2 = np.array([mahalanobis_sq(e, cov) for e in eps])
    mean = float(np.mean(m2))
    bound = 3 * math.sqrt(6 / n)
    verdict(4, abs(mean - 3) <= bound, f"mean Mahalanobis^2 {mean:.4f}, |mean - 3| = {abs(mean - 3):.4f} (<= {bound:.4f})")


SCENE_INTR = RadarIntrinsics(64, 32, 8, 0.5, -1.2, 1.2, -0.5, 0.5)


def ghost_scene(seed):
    # 12 of 40 emitters are ghosts
    return generate_scene(28, 12, 5.0, SCENE_INTR, seed=seed)


def test_criterion_05_doppler_consistency():
    exact = True
    tp = fp = fn = 0
    for seed in range(50):
        scene = ghost_scene(seed)
        for sigma in (0.0, 0.05):
            dets, labels = sample_detections(scene, SCENE_INTR, None, seed=seed, doppler_sigma=sigma)
            kept = np.array([v.inlier for v in consistency_filter(dets, scene.ego_velocity, 0.25)])
            true = labels == Label.TRUE
            if sigma == 0.0:
                exact &= bool(np.array_equal(kept, true))
            else:
                tp += int(np.sum(kept & true))
                fp += int(np.sum(kept & ~true))
                fn += int(np.sum(~kept & true))
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    passed = exact and precision >= 0.95 and recall >= 0.95
    verdict(5, passed, f"noiseless precision=recall=1: {exact}; sigma 0.05: precision {precision:.4f}, recall {recall:.4f} (>= 0.95)")


def test_criterion_06_ego_velocity():
    medians = {}
    for sigma in (0.0, 0.05):
        errors = []
        for seed in range(50):
            scene = ghost_scene(seed)
            dets, _ = sample_detections(scene, SCENE_INTR, None, seed=seed, doppler_sigma=sigma)
            res = estimate_ego_velocity_ransac(dets, RansacConfig(seed=seed))
            errors.append(float(np.linalg.norm(res.velocity - scene.ego_velocity)))
        medians[sigma] = float(np.median(errors))
    passed = medians[0.0] < 0.05 and medians[0.05] < 0.2
    verdict(6, passed, f"median error {medians[0.0]:.2e} m/s noiseless (< 0.05), {medians[0.05]:.4f} m/s at sigma 0.05 (< 0.2)")


TE_SIGMAS = PolarSigmas(0.02, 0.03, 0.03)


def _measure(pts, rng):
    r, a, b = cartesian_to_polar_array(pts)
    n = len(r)
    r = r + TE_SIGMAS.sigma_r * rng.standard_normal(n)
    a = a + TE_SIGMAS.sigma_alpha * rng.standard_normal(n)
    b = b + TE_SIGMAS.sigma_beta * rng.standard_normal(n)
    return polar_to_cartesian_array(r, a, b), propagate_covariance_array(r, a, b, TE_SIGMAS.variances)


def _world(rng, n=40):
    return polar_to_cartesian_array(rng.uniform(5, 20, n), rng.uniform(-0.8, 0.8, n), rng.uniform(-0.3, 0.3, n))


def test_criterion_07_transform_estimation():
    cfg = RegistrationConfig(max_correspondence_dist=3.0)
    rot = {"weighted": [], "identity": []}
    trans = {"weighted": [], "identity": []}
    for trial in range(100):
        rng = np.random.default_rng(trial)
        world = _world(rng)
        T = RigidTransform.from_rotvec(0.02 * rng.normal(size=3), 0.1 * rng.normal(size=3))
        src, Cs = _measure(world, rng)
        tgt, Ct = _measure(T.apply(world), rng)
        eye = np.broadcast_to(np.eye(3), Cs.shape)
        for name, (a, b) in (("weighted", (Cs, Ct)), ("identity", (eye, eye))):
            est = register_uncertain(src, a, tgt, b, cfg).transform
            rot[name].append(rotation_error(est.rotation, T.rotation))
            trans[name].append(float(np.linalg.norm(est.translation - T.translation)))
    med = {k: (float(np.median(rot[k])), float(np.median(trans[k]))) for k in rot}

    worst_t = worst_r = 0.0
    for trial in range(20):
        rng = np.random.default_rng(500 + trial)
        world = _world(rng)
        r, a, b = cartesian_to_polar_array(world)
        covs = propagate_covariance_array(r, a, b, TE_SIGMAS.variances)
        T = RigidTransform.from_rotvec(0.02 * rng.normal(size=3), 0.1 * rng.normal(size=3))
        est = register_uncertain(world, covs, T.apply(world), T.rotation @ covs @ T.rotation.T).transform
        worst_t = max(worst_t, float(np.linalg.norm(est.translation - T.translation)))
        worst_r = max(worst_r, rotation_error(est.rotation, T.rotation))

    better = med["weighted"][0] < med["identity"][0] and med["weighted"][1] < med["identity"][1]
    exact = worst_t < 1e-6 and worst_r < 1e-5
    verdict(
        7,
        better and exact,
        f"median rotation {med['weighted'][0]:.4f} vs {med['identity'][0]:.4f} rad, "
        f"translation {med['weighted'][1]:.4f} vs {med['identity'][1]:.4f} m (weighted vs identity); "
        f"noiseless worst {worst_t:.1e} m / {worst_r:.1e} rad",
    )


def _d(p, q):
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def brute_force_metrics(P, Q, tau, zeta):
    near_p = [min(_d(p, q) for q in Q) for p in P]
    near_q = [min(_d(q, p) for p in P) for q in Q]
    cd = math.fsum(near_p) / len(P) + math.fsum(near_q) / len(Q)
    prec = sum(any(_d(p, q) <= tau for q in Q) for p in P) / len(P)
    rec = sum(any(_d(q, p) <= tau for p in P) for q in Q) / len(Q)
    f = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    eta = sum(all(_d(p, q) > zeta for q in Q) for p in P) / len(P)
    return cd, (f, prec, rec), eta


def test_criterion_08_metrics_oracle():
    rng = np.random.default_rng(108)
    mismatches = 0
    for _ in range(1000):
        n, m = int(rng.integers(1, 51)), int(rng.integers(1, 51))
        scale = float(rng.choice([0.5, 2.0, 8.0]))
        P = rng.uniform(-scale, scale, (n, 3)).tolist()
        Q = rng.uniform(-scale, scale, (m, 3)).tolist()
        cd, fs, eta = brute_force_metrics(P, Q, 0.5, 0.5)
        got = (chamfer_distance(P, Q), f_score(P, Q, 0.5), cpr(P, Q, 0.5))
        mismatches += got != (cd, fs, eta)
    verdict(8, mismatches == 0, f"{mismatches} of 1000 instances differ from the brute-force oracle (exact)")


def test_criterion_09_bdaf():
    rng = np.random.default_rng(109)
    worst_grad = worst_row = 0.0
    identity = True
    for _ in range(20):
        L, C = int(rng.integers(1, 9)), int(rng.integers(2, 17))
        d_k = int(rng.integers(1, C + 1))
        w = AttentionWeights.random(C, d_k, rng)
        s_p, d_p = rng.normal(size=(L, C)), rng.normal(size=(L, C))
        worst_grad = max(worst_grad, gradient_check(s_p, d_p, w))
        for A in (attention_matrix(s_p, d_p, w.w_sq, w.w_dk), attention_matrix(d_p, s_p, w.w_dq, w.w_sk)):
            worst_row = max(worst_row, float(np.abs(A.sum(axis=1) - 1).max()))
        f_s, d_t = bdaf_forward(s_p, d_p, AttentionWeights.zeros(C, d_k))
        identity &= bool(np.array_equal(f_s, s_p) and np.array_equal(d_t, d_p))
    passed = worst_grad <= 1e-4 and worst_row <= 1e-9 and identity
    verdict(9, passed, f"max relative gradient error {worst_grad:.2e} (<= 1e-4), max |row sum - 1| {worst_row:.1e}, zero-weight identity: {identity}")


def test_criterion_10_pipeline(tmp_path):
    start = time.perf_counter()
    report = run_pipeline(PipelineConfig(), str(tmp_path))
    elapsed = time.perf_counter() - start
    lower = report["cpr_filtered"] < report["cpr_unfiltered"]
    drop = report["f_unfiltered"] - report["f_filtered"]
    passed = lower and drop <= 0.02 and elapsed < 30
    verdict(
        10,
        passed,
        f"CPR {report['cpr_unfiltered']:.4f} -> {report['cpr_filtered']:.4f}, "
        f"F {report['f_unfiltered']:.4f} -> {report['f_filtered']:.4f} (drop <= 0.02), {elapsed:.2f} s (< 30 s)",
    )


def test_criterion_11_voxelization():
    intr = RadarIntrinsics(40, 24, 8, 0.5, -0.9, 0.9, -0.35, 0.35)
    rng = np.random.default_rng(111)
    pts = rng.uniform([-3, -15, -6], [22, 15, 6], (10_000, 3))
    g = voxelize_frustum(pts, intr, mode="count")
    expected = np.zeros(intr.shape, dtype=np.int64)
    inside = 0
    for x, y, z in pts.tolist():
        r = math.sqrt(x * x + y * y + z * z)
        if r < 1e-9:
            continue
        a = math.atan2(y, x)
        b = math.asin(max(-1.0, min(1.0, z / r)))
        i = math.floor(r / intr.range_resolution)
        j = math.floor((a - intr.azimuth_min) / intr.azimuth_step)
        k = math.floor((b - intr.elevation_min) / intr.elevation_step)
        if 0 <= i < intr.range_bins and 0 <= j < intr.azimuth_bins and 0 <= k < intr.elevation_bins:
            expected[i, j, k] += 1
            inside += 1
    equal = bool(np.array_equal(g.occupancy, expected))
    conserved = int(g.occupancy.sum()) == inside and g.out_of_fov == len(pts) - inside
    verdict(11, equal and conserved, f"grid equals brute-force oracle: {equal}; {inside} in-FOV points conserved: {conserved}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
