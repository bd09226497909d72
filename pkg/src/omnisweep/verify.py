"""Self-check suites: round-trip, sweep and calibration properties.

These back the ``check`` CLI subcommand and the acceptance tests. Each
check returns (name, passed, detail); suites are deterministic under a
fixed seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace

import numpy as np

from . import camera_models as cm
from . import synthetic
from .calibration import CalibrationProblem, optimize
from .rig import Pose
from .sphere_sweep import (DistanceCandidates, SphericalCoord, SphericalGrid,
                           aggregate, build_volume, direction_from_angles,
                           extract_distance, select_cameras)


def random_intrinsics(rng, model="tscm", alpha_range=(0.05, 0.68)):
    """Random plausible fisheye intrinsics. The sampler spans both alpha
    regimes (offset below and above 1)."""
    alpha = rng.uniform(*alpha_range)
    xi = rng.uniform(-0.45, 0.45)
    lam = rng.uniform(-0.3, 0.3) if model == "tscm" else 0.0
    fx = rng.uniform(180.0, 340.0)
    fy = fx * rng.uniform(0.98, 1.02)
    cx = rng.uniform(480.0, 544.0)
    cy = rng.uniform(480.0, 544.0)
    return cm.Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, alpha=alpha, xi=xi,
                         lam=lam, model=model)


def sample_domain_points(rng, intr, n, radius_range=(0.5, 20.0),
                         invertible=True):
    """Random points in the model's domain (the invertible subset by
    default; for alpha <= 0.5 that equals the full projectable set)."""
    pts = np.zeros((0, 3))
    attempts = 0
    while pts.shape[0] < n and attempts < 60:
        attempts += 1
        d = rng.normal(size=(4 * n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.uniform(*radius_range, size=(4 * n, 1))
        cand = d * r
        keep = (cm.in_invertible_domain(cand, intr) if invertible
                else cm.in_valid_domain(cand, intr))
        pts = np.vstack([pts, cand[keep]])
    if pts.shape[0] < n:
        raise RuntimeError("domain sampling failed; degenerate intrinsics")
    return pts[:n]


def roundtrip_max_error(intr, points):
    """Largest angular error of unproject(project(p)) against p, measured
    through the chord (accurate for tiny angles where arccos saturates)."""
    px, ok = cm.project(points, intr)
    rays, ok2 = cm.unproject(px[ok], intr)
    if not ok2.all():
        return math.pi
    unit = points[ok] / np.linalg.norm(points[ok], axis=1, keepdims=True)
    chord = np.linalg.norm(rays - unit, axis=1)
    return float(2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0)).max())


def check_roundtrip(seed=0, n_points=10_000, n_intrinsics=20, tol=1e-8):
    """Round-trip fidelity for both models across random intrinsics."""
    rng = np.random.default_rng(seed)
    results = []
    for model in ("dscm", "tscm"):
        t0 = time.perf_counter()
        worst = 0.0
        per = max(1, n_points // n_intrinsics)
        for _ in range(n_intrinsics):
            intr = random_intrinsics(rng, model)
            pts = sample_domain_points(rng, intr, per)
            worst = max(worst, roundtrip_max_error(intr, pts))
        dt = time.perf_counter() - t0
        results.append((f"roundtrip[{model}]", worst < tol,
                        f"max angular error {worst:.3e} rad "
                        f"({n_intrinsics}x{per} points, {dt:.2f}s)"))
    return results


def check_model_reduction(seed=0, n_points=10_000, tol=1e-12):
    """Triple sphere at lam=0 must match the double sphere everywhere."""
    rng = np.random.default_rng(seed)
    intr_t = replace(random_intrinsics(rng, "tscm"), lam=0.0)
    intr_d = replace(intr_t, model="dscm")
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts = d * rng.uniform(0.3, 30.0, size=(n_points, 1))

    px_t, ok_t = cm.project(pts, intr_t)
    px_d, ok_d = cm.dscm_project(pts, intr_d)
    dom = np.array_equal(cm.in_valid_domain(pts, intr_t),
                         cm.in_valid_domain(pts, intr_d))
    proj_ok = np.array_equal(ok_t, ok_d) and (
        not ok_t.any()
        or np.nanmax(np.abs(px_t[ok_t] - px_d[ok_t])) < tol)

    pix = np.stack([rng.uniform(0, 1024, n_points),
                    rng.uniform(0, 1024, n_points)], axis=1)
    r_t, rok_t = cm.unproject(pix, intr_t)
    r_d, rok_d = cm.dscm_unproject(pix, intr_d)
    unproj_ok = np.array_equal(rok_t, rok_d) and (
        not rok_t.any()
        or np.nanmax(np.abs(r_t[rok_t] - r_d[rok_t])) < tol)

    passed = dom and proj_ok and unproj_ok
    return [("model_reduction", passed,
             f"domain={dom} project={proj_ok} unproject={unproj_ok} "
             f"({n_points} samples)")]


def brute_force_select(ref_id, theta, phi, rig, cands):
    """Scalar re-derivation of the camera choice: widest angle between
    the two probe points as seen from each candidate, lowest id on
    ties, -1 if nobody sees both probes."""
    ref = rig.camera(ref_id)
    d = direction_from_angles(theta, phi)
    p0 = ref.center + cands.d_min * d
    p1 = ref.center + cands.d_max * d
    best = (np.inf, -1)
    for cam in sorted(rig.cameras, key=lambda c: c.camera_id):
        if cam.camera_id == ref_id:
            continue
        inv_r = cam.pose.rotation.T
        q0 = inv_r @ (p0 - cam.pose.translation)
        q1 = inv_r @ (p1 - cam.pose.translation)
        ok0 = bool(cm.in_invertible_domain(q0, cam.intrinsics))
        ok1 = bool(cm.in_invertible_domain(q1, cam.intrinsics))
        if not (ok0 and ok1):
            continue
        u0 = p0 - cam.center
        u1 = p1 - cam.center
        n0 = np.sqrt(u0[0] ** 2 + u0[1] ** 2 + u0[2] ** 2)
        n1 = np.sqrt(u1[0] ** 2 + u1[1] ** 2 + u1[2] ** 2)
        if not (n0 > 0.0 and n1 > 0.0):
            continue
        cosq = (u0[0] * u1[0] + u0[1] * u1[1] + u0[2] * u1[2]) / (n0 * n1)
        if cosq < best[0]:
            best = (cosq, cam.camera_id)
    return best[1]


def check_camera_selection(seed=0, n_coords=1000):
    """Vectorized selection must equal the scalar brute force exactly."""
    rng = np.random.default_rng(seed)
    rig = synthetic.default_rig_config()
    cands = DistanceCandidates.inverse_depth()
    theta = rng.uniform(-math.pi, math.pi, n_coords)
    phi = np.arcsin(rng.uniform(-1.0, 1.0, n_coords))
    dirs = direction_from_angles(theta, phi)
    mismatches = 0
    for ref_id in rig.reference_ids:
        _, got = select_cameras(ref_id, dirs, rig, cands)
        want = np.array([brute_force_select(ref_id, t, p, rig, cands)
                         for t, p in zip(theta, phi)])
        mismatches += int(np.count_nonzero(got != want))
    return [("camera_selection", mismatches == 0,
             f"{mismatches} mismatches over {2 * n_coords} coordinates")]


def sweep_sphere_errors(radius=4.0, grid_size=(256, 128), n_layers=32,
                        image_size=(480, 480), texture_grad_thresh=0.01):
    """Sweep a textured enclosing sphere and compare against the analytic
    radius. Returns (abs errors, local spacings, fraction within half a
    spacing) over textured covered pixels of the first reference."""
    rig = synthetic.default_rig_config(image_size=image_size)
    scene = synthetic.Scene((synthetic.SpherePrimitive(
        center=(0.0, 0.0, 0.0), radius=radius,
        texture=synthetic.Texture(noise_scale=0.35, noise_octaves=3,
                                  seed=5)),))
    images, _ = synthetic.render_rig_views(scene, rig, image_size)
    cands = DistanceCandidates.inverse_depth(n_layers=n_layers)
    grid = SphericalGrid(*grid_size)
    ref_id = rig.reference_ids[0]
    vol = build_volume(images[ref_id], images, rig, cands, grid,
                       ref_id=ref_id)
    agg = aggregate(vol, vol.guidance)
    dmap = extract_distance(agg, cands)

    ref = rig.camera(ref_id)
    dirs = grid.directions()
    # analytic distance from the reference center to the sphere along dirs
    oc = ref.center - np.zeros(3)
    b = dirs @ oc
    q = oc @ oc - radius * radius
    t_true = -b + np.sqrt(b * b - q)

    g = vol.guidance
    gx = np.zeros(g.shape[:2])
    gx[:, 1:] = np.abs(np.diff(g, axis=1)).sum(axis=-1)
    gy = np.zeros(g.shape[:2])
    gy[1:, :] = np.abs(np.diff(g, axis=0)).sum(axis=-1)
    textured = (gx + gy) > texture_grad_thresh

    use = (dmap.distance > 0) & textured & vol.valid
    err = np.abs(dmap.distance[use] - t_true[use])
    spacing = cands.local_spacing(t_true[use])
    frac = float(np.mean(err < 0.5 * spacing)) if err.size else 0.0
    return err, spacing, frac


def check_sweep(seed=0):
    err, spacing, frac = sweep_sphere_errors()
    mean_ratio = float(np.mean(err / spacing))
    ok = mean_ratio < 0.5 and frac >= 0.9
    return [("sweep_accuracy", ok,
             f"mean |err|/spacing {mean_ratio:.3f}, "
             f"{100 * frac:.1f}% within half spacing "
             f"({err.size} textured pixels)")]


def make_calibration_dataset(intr, n_boards=8, noise_sigma=0.0, seed=0,
                             board=None, image_size=(1024, 1024)):
    """Synthetic corner observations plus their ground-truth poses."""
    if board is None:
        board = synthetic.board_grid(rows=6, cols=9, spacing=0.05)
    poses = synthetic.calibration_poses(n_boards, seed=seed)
    obs = synthetic.render_corners(board, intr, poses,
                                   noise_sigma=noise_sigma,
                                   seed=seed + 1, image_size=image_size)
    return obs, poses


def make_comparison_dataset(lam=0.5, noise_sigma=0.25, seed=0,
                            image_size=(1024, 1024)):
    """Corner data for the model comparison: a strongly refractive truth
    observed through large, close boards whose corners span most of the
    field of view (board poses cannot absorb the third-sphere profile
    there, unlike with small distant boards)."""
    truth = synthetic.default_intrinsics(image_size, alpha=0.55, xi=-0.5,
                                         lam=lam)
    board = synthetic.board_grid(rows=6, cols=9, spacing=0.1)
    poses = synthetic.calibration_poses(8, seed=seed, dist_range=(0.4, 0.8),
                                        max_off_axis_deg=70.0, tilt_deg=15.0)
    obs = synthetic.render_corners(board, truth, poses,
                                   noise_sigma=noise_sigma, seed=seed + 1,
                                   image_size=image_size)
    return obs, truth


def perturb_intrinsics(intr, frac=0.05, seed=0):
    rng = np.random.default_rng(seed)

    def p(v):
        return v * (1.0 + rng.uniform(-frac, frac))

    alpha = min(max(p(intr.alpha), 0.01), 0.95)
    return replace(intr, fx=p(intr.fx), fy=p(intr.fy), cx=p(intr.cx),
                   cy=p(intr.cy), alpha=alpha, xi=p(intr.xi),
                   lam=p(intr.lam) if intr.model == "tscm" else 0.0)


def perturb_pose(pose, rot_deg=3.0, trans_frac=0.05, rng=None):
    rng = rng or np.random.default_rng(0)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    from .rig import compose, rotvec_to_matrix
    dr = Pose(rotvec_to_matrix(axis * math.radians(rot_deg)), np.zeros(3))
    jitter = pose.translation * rng.uniform(-trans_frac, trans_frac, 3)
    moved = compose(dr, pose)
    return Pose(moved.rotation, moved.translation + jitter)


def check_calibration(seed=0, noise_seeds=3):
    """Noise-free recovery plus the noisy mean-error band."""
    results = []
    image_size = (1024, 1024)
    truth = synthetic.default_intrinsics(image_size, alpha=0.58, xi=-0.18,
                                         lam=0.12)
    obs, gt_poses = make_calibration_dataset(truth, seed=seed,
                                             image_size=image_size)
    rng = np.random.default_rng(seed + 100)
    init_poses = {iid: perturb_pose(gt_poses[iid], rng=rng)
                  for iid, _, _ in obs.images}
    problem = CalibrationProblem(
        observations=obs,
        initial_intrinsics=perturb_intrinsics(truth, seed=seed),
        initial_poses=init_poses, model="tscm", image_size=image_size)
    res = optimize(problem)
    rel = max(
        abs(res.intrinsics.fx - truth.fx) / truth.fx,
        abs(res.intrinsics.fy - truth.fy) / truth.fy,
        abs(res.intrinsics.cx - truth.cx) / truth.cx,
        abs(res.intrinsics.cy - truth.cy) / truth.cy,
        abs(res.intrinsics.alpha - truth.alpha) / abs(truth.alpha),
        abs(res.intrinsics.xi - truth.xi) / abs(truth.xi),
        abs(res.intrinsics.lam - truth.lam) / abs(truth.lam),
    )
    ok = rel < 1e-3 and res.mean_reprojection_error < 1e-6
    results.append(("calibration_noise_free", ok,
                    f"max rel param error {rel:.2e}, mean reproj "
                    f"{res.mean_reprojection_error:.2e} px, "
                    f"{res.iterations} iters"))

    errs = []
    for s in range(noise_seeds):
        obs_n, gt_p = make_calibration_dataset(truth, noise_sigma=0.5,
                                               seed=seed + 10 + s,
                                               image_size=image_size)
        rngn = np.random.default_rng(seed + 200 + s)
        init_p = {iid: perturb_pose(gt_p[iid], rng=rngn)
                  for iid, _, _ in obs_n.images}
        prob = CalibrationProblem(
            observations=obs_n,
            initial_intrinsics=perturb_intrinsics(truth, seed=seed + s),
            initial_poses=init_p, model="tscm", image_size=image_size)
        errs.append(optimize(prob).mean_reprojection_error)
    in_band = all(0.3 <= e <= 0.7 for e in errs)
    results.append(("calibration_noise_band", in_band,
                    "mean errors " + ", ".join(f"{e:.3f}" for e in errs)
                    + " px (expected in [0.3, 0.7])"))
    return results


SUITES = {
    "roundtrip": lambda seed: check_roundtrip(seed)
    + check_model_reduction(seed),
    "sweep": lambda seed: check_camera_selection(seed) + check_sweep(seed),
    "calib": lambda seed: check_calibration(seed),
}


def run_suite(name, seed=0):
    if name == "all":
        out = []
        for key in ("roundtrip", "sweep", "calib"):
            out.extend(SUITES[key](seed))
        return out
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    return SUITES[name](seed)
