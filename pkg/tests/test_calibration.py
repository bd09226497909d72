"""Calibration tests: residual semantics, the robust loss, the coarse
initializer, optimizer recovery and the model comparison."""

import math

import numpy as np
import pytest

from omnisweep import synthetic, verify
from omnisweep.calibration import (CalibrationProblem, CornerObservations,
                                   DegenerateInputError, compare_models,
                                   huber_cost, initialize, optimize,
                                   residuals)
from omnisweep.rig import Pose, rotvec_to_matrix

IMAGE_SIZE = (1024, 1024)


@pytest.fixture(scope="module")
def truth_intr():
    return synthetic.default_intrinsics(IMAGE_SIZE, alpha=0.58, xi=-0.18,
                                        lam=0.12)


@pytest.fixture(scope="module")
def clean_dataset(truth_intr):
    return verify.make_calibration_dataset(truth_intr, seed=0,
                                           image_size=IMAGE_SIZE)


class TestResiduals:
    def test_zero_at_ground_truth(self, truth_intr, clean_dataset):
        obs, gt_poses = clean_dataset
        poses = {i: p for i, p in enumerate(gt_poses)}
        res, ok, _ = residuals(truth_intr, poses, obs)
        assert ok.all()
        assert np.abs(res).max() < 1e-9

    def test_focal_perturbation_grows_with_eccentricity(self, truth_intr,
                                                        clean_dataset):
        from dataclasses import replace
        obs, gt_poses = clean_dataset
        poses = {i: p for i, p in enumerate(gt_poses)}
        bumped = replace(truth_intr, fx=truth_intr.fx * 1.01,
                         fy=truth_intr.fy * 1.01)
        res, ok, _ = residuals(bumped, poses, obs)
        norms = np.linalg.norm(res, axis=1)
        pix = np.vstack([px for _, _, px in obs.images])
        ecc = np.linalg.norm(pix - [truth_intr.cx, truth_intr.cy], axis=1)
        assert norms[ok].max() > 0
        lo = norms[ok][ecc[ok] < np.quantile(ecc[ok], 0.2)].mean()
        hi = norms[ok][ecc[ok] > np.quantile(ecc[ok], 0.8)].mean()
        assert hi > 2.0 * lo

    def test_behind_camera_flagged_large(self, truth_intr):
        board = synthetic.board_grid(rows=4, cols=5, spacing=0.05)
        front = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        # a pose keeping every corner far outside the valid domain
        behind = Pose(rotvec_to_matrix(np.array([math.pi, 0.0, 0.0])),
                      np.array([0.0, 0.0, -2.0]))
        ids, xyz = board
        obs = CornerObservations(ids, xyz, (
            (0, ids, synthetic.render_corners(
                board, truth_intr, [front]).images[0][2]),
            (1, ids, np.full((len(ids), 2), 512.0)),
        ))
        res, ok, img = residuals(truth_intr, {0: front, 1: behind}, obs)
        assert ok[img == 0].all()
        assert not ok[img == 1].any()
        diag = math.hypot(2 * truth_intr.cx, 2 * truth_intr.cy)
        norms = np.linalg.norm(res[img == 1], axis=1)
        assert norms == pytest.approx(2.0 * diag, rel=1e-12)


class TestHuber:
    def test_quadratic_below_knee(self):
        delta = 1.0
        n = np.array([0.0, 0.3, 0.999, 1.0])
        assert np.allclose(huber_cost(n, delta), n * n)

    def test_linear_beyond_knee_with_continuous_slope(self):
        delta = 1.3
        eps = 1e-7
        below = (huber_cost(delta, delta)
                 - huber_cost(delta - eps, delta)) / eps
        above = (huber_cost(delta + eps, delta)
                 - huber_cost(delta, delta)) / eps
        assert below == pytest.approx(2 * delta, abs=1e-5)
        assert above == pytest.approx(2 * delta, abs=1e-5)
        big = np.array([5.0, 50.0])
        got = huber_cost(big, delta)
        assert np.allclose(got, 2 * delta * big - delta * delta)


class TestInitializer:
    def test_board_ahead_recovered(self, truth_intr):
        board = synthetic.board_grid(rows=6, cols=9, spacing=0.05)
        gt = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        obs = synthetic.render_corners(board, truth_intr, [gt, gt, gt],
                                       image_size=IMAGE_SIZE)
        problem = CalibrationProblem(observations=obs,
                                     initial_intrinsics=truth_intr,
                                     image_size=IMAGE_SIZE)
        _, poses = initialize(problem)
        got = poses[0]
        ang = math.degrees(np.arccos(np.clip(
            (np.trace(got.rotation.T @ gt.rotation) - 1) / 2, -1, 1)))
        assert ang < 10.0
        assert np.linalg.norm(got.translation - gt.translation) < 0.3

    def test_user_truth_passes_through(self, truth_intr, clean_dataset):
        obs, gt_poses = clean_dataset
        poses_in = {i: p for i, p in enumerate(gt_poses)}
        problem = CalibrationProblem(observations=obs,
                                     initial_intrinsics=truth_intr,
                                     initial_poses=poses_in,
                                     image_size=IMAGE_SIZE)
        intr, poses = initialize(problem)
        assert intr == truth_intr
        assert poses == poses_in

    def test_collinear_board_degenerate(self, truth_intr):
        k = 12
        ids = np.arange(k)
        xyz = np.stack([np.linspace(-0.2, 0.2, k), np.zeros(k),
                        np.zeros(k)], axis=1)
        pix = np.tile([512.0, 512.0], (k, 1))
        obs = CornerObservations(ids, xyz, tuple(
            (i, ids, pix) for i in range(3)))
        with pytest.raises(DegenerateInputError):
            initialize(CalibrationProblem(observations=obs,
                                          initial_intrinsics=truth_intr,
                                          image_size=IMAGE_SIZE))

    def test_too_few_images_degenerate(self, truth_intr):
        board = synthetic.board_grid()
        gt = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        obs = synthetic.render_corners(board, truth_intr, [gt, gt],
                                       image_size=IMAGE_SIZE)
        with pytest.raises(DegenerateInputError):
            initialize(CalibrationProblem(observations=obs,
                                          initial_intrinsics=truth_intr,
                                          image_size=IMAGE_SIZE))


class TestOptimize:
    def test_noise_free_recovery(self, truth_intr, clean_dataset):
        obs, gt_poses = clean_dataset
        rng = np.random.default_rng(100)
        init_poses = {iid: verify.perturb_pose(gt_poses[iid], rng=rng)
                      for iid, _, _ in obs.images}
        problem = CalibrationProblem(
            observations=obs,
            initial_intrinsics=verify.perturb_intrinsics(truth_intr, seed=0),
            initial_poses=init_poses, model="tscm", image_size=IMAGE_SIZE)
        res = optimize(problem)
        assert res.mean_reprojection_error < 1e-6
        for name in ("fx", "fy", "cx", "cy", "alpha", "xi", "lam"):
            got = getattr(res.intrinsics, name)
            want = getattr(truth_intr, name)
            assert abs(got - want) / abs(want) < 1e-3, name

    def test_objective_monotone_and_gradient_check(self, truth_intr,
                                                   clean_dataset):
        obs, gt_poses = clean_dataset
        rng = np.random.default_rng(101)
        init_poses = {iid: verify.perturb_pose(gt_poses[iid], rng=rng)
                      for iid, _, _ in obs.images}
        problem = CalibrationProblem(
            observations=obs,
            initial_intrinsics=verify.perturb_intrinsics(truth_intr, seed=1),
            initial_poses=init_poses, model="tscm", image_size=IMAGE_SIZE)
        res = optimize(problem)
        hist = res.objective_history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert res.gradient_check_error is not None
        assert res.gradient_check_error < 1e-4

    def test_noisy_error_band(self, truth_intr):
        errs = []
        for s in range(3):
            obs, gt = verify.make_calibration_dataset(
                truth_intr, noise_sigma=0.5, seed=50 + s,
                image_size=IMAGE_SIZE)
            rng = np.random.default_rng(60 + s)
            init_poses = {iid: verify.perturb_pose(gt[iid], rng=rng)
                          for iid, _, _ in obs.images}
            problem = CalibrationProblem(
                observations=obs,
                initial_intrinsics=verify.perturb_intrinsics(truth_intr,
                                                             seed=s),
                initial_poses=init_poses, model="tscm",
                image_size=IMAGE_SIZE)
            errs.append(optimize(problem).mean_reprojection_error)
        assert all(0.3 <= e <= 0.7 for e in errs), errs

    def test_degenerate_image_reporting(self, truth_intr):
        board = synthetic.board_grid()
        ids, xyz = board
        good = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        obs_ok = synthetic.render_corners(board, truth_intr,
                                          [good, good, good],
                                          image_size=IMAGE_SIZE)
        # append an image whose recorded pixels cannot reproject
        images = obs_ok.images + ((3, ids, np.full((len(ids), 2), 1e5)),)
        obs = CornerObservations(ids, xyz, images)
        res, ok, img = residuals(truth_intr,
                                 {0: good, 1: good, 2: good,
                                  3: Pose(np.eye(3),
                                          np.array([0.0, 0.0, -3.0]))},
                                 obs)
        from omnisweep.calibration import degenerate_images
        assert degenerate_images(ok, img) == [3]


class TestCompareModels:
    def test_refractive_data_orders_models(self):
        obs, _ = verify.make_comparison_dataset(lam=0.5, seed=400)
        res_d, res_t = compare_models(obs, image_size=IMAGE_SIZE)
        assert res_t.mean_reprojection_error < res_d.mean_reprojection_error

    def test_nested_dominance(self):
        obs, _ = verify.make_comparison_dataset(lam=0.5, seed=402)
        res_d, res_t = compare_models(obs, image_size=IMAGE_SIZE)
        assert (res_t.objective_history[-1]
                <= res_d.objective_history[-1] + 1e-9)

    def test_lam_zero_data_agrees(self):
        obs, _ = verify.make_comparison_dataset(lam=0.0, seed=404)
        res_d, res_t = compare_models(obs, image_size=IMAGE_SIZE)
        rel = abs(res_t.mean_reprojection_error
                  - res_d.mean_reprojection_error) \
            / res_d.mean_reprojection_error
        assert rel < 0.05


class TestObservationsIO:
    def test_json_schema_roundtrip(self, truth_intr, tmp_path):
        board = synthetic.board_grid(rows=3, cols=4, spacing=0.05)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        obs = synthetic.render_corners(board, truth_intr, [pose],
                                       image_size=IMAGE_SIZE)
        d = obs.to_dict()
        assert set(d) == {"board", "images"}
        assert set(d["board"][0]) == {"id", "xyz"}
        assert set(d["images"][0]) == {"id", "corners"}
        assert set(d["images"][0]["corners"][0]) == {"id", "uv"}
        path = tmp_path / "corners.json"
        obs.save(path)
        back = CornerObservations.load(path)
        assert np.array_equal(back.board_ids, obs.board_ids)
        assert np.allclose(back.board_xyz, obs.board_xyz)
        assert np.allclose(back.images[0][2], obs.images[0][2])

    def test_unknown_corner_rejected(self):
        ids = np.arange(4)
        xyz = np.zeros((4, 3))
        xyz[:, 0] = np.arange(4)
        xyz[1, 1] = 1.0
        with pytest.raises(ValueError):
            CornerObservations(ids, xyz,
                               ((0, np.array([9]), np.zeros((1, 2))),))
