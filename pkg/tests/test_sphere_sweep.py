"""Sphere-sweep tests: camera selection, cost volume semantics, the
bilateral pyramid and distance extraction."""

import math

import numpy as np
import pytest

from omnisweep import synthetic, verify
from omnisweep.camera_models import Intrinsics
from omnisweep.rig import Pose, RigCamera, RigConfig, rotvec_to_matrix
from omnisweep.sphere_sweep import (MAX_COST, SENTINEL, DistanceCandidates,
                                    NoVisibleCameraError, SphericalCoord,
                                    SphericalGrid, aggregate,
                                    aggregate_costs, bilateral_weight,
                                    build_volume, downsample,
                                    extract_distance, select_camera,
                                    select_cameras)


def two_camera_rig(image_size=(320, 320)):
    intr = synthetic.default_intrinsics(image_size)
    r0 = RigCamera(0, intr, Pose(np.eye(3), np.array([0.0, 0.0, 0.05])))
    back = rotvec_to_matrix(np.array([0.0, math.pi, 0.0]))
    r1 = RigCamera(1, intr, Pose(back, np.array([0.0, 0.0, -0.05])))
    return RigConfig((r0, r1), (0, 1))


class TestCandidates:
    def test_inverse_depth_spacing(self):
        c = DistanceCandidates.inverse_depth(0.3, 50.0, 32)
        inv = 1.0 / c.distances
        steps = np.diff(inv)
        assert np.allclose(steps, steps[0], rtol=1e-9)
        assert c.d_min == 0.3
        assert c.d_max == 50.0
        assert c.n_layers == 32

    def test_validation(self):
        with pytest.raises(ValueError):
            DistanceCandidates(np.array([1.0]))
        with pytest.raises(ValueError):
            DistanceCandidates(np.array([2.0, 1.0]))
        with pytest.raises(ValueError):
            DistanceCandidates(np.array([-1.0, 1.0]))

    def test_coord_validation(self):
        with pytest.raises(ValueError):
            SphericalCoord(theta=4.0, phi=0.0)
        with pytest.raises(ValueError):
            SphericalCoord(theta=0.0, phi=2.0)


class TestCameraSelection:
    def test_single_candidate_returned(self, default_cands):
        rig = two_camera_rig()
        cid = select_camera(0, SphericalCoord(0.5, 0.2), rig, default_cands)
        assert cid == 1

    def test_epipole_avoids_top_partner(self, default_cands, small_rig):
        # +z is the epipole of the top pair: the partner's sweep angle
        # degenerates there, so a bottom camera must win
        cid = select_camera(0, SphericalCoord(0.0, 0.0), small_rig,
                            default_cands)
        assert cid in (2, 3)

    def test_symmetric_tie_breaks_low_id(self, default_cands, small_rig):
        # on the top-pair epipole the two bottom cameras are mirror
        # images: exact tie, lowest id wins
        cid = select_camera(0, SphericalCoord(0.0, 0.0), small_rig,
                            default_cands)
        assert cid == 2

    def test_matches_brute_force(self, default_cands, small_rig):
        rng = np.random.default_rng(0)
        theta = rng.uniform(-math.pi, math.pi, 200)
        phi = np.arcsin(rng.uniform(-1, 1, 200))
        from omnisweep.sphere_sweep import direction_from_angles
        dirs = direction_from_angles(theta, phi)
        for ref in small_rig.reference_ids:
            _, got = select_cameras(ref, dirs, small_rig, default_cands)
            want = np.array([verify.brute_force_select(ref, t, p, small_rig,
                                                       default_cands)
                             for t, p in zip(theta, phi)])
            assert np.array_equal(got, want)

    def test_no_visible_camera_raises(self, default_cands):
        # narrow-domain cameras looking away never see backward probes
        intr = Intrinsics(fx=300.0, fy=300.0, cx=160.0, cy=160.0,
                          alpha=0.05, xi=0.0, lam=0.0, model="tscm")
        r0 = RigCamera(0, intr, Pose(np.eye(3), np.zeros(3)))
        r1 = RigCamera(1, intr,
                       Pose(np.eye(3), np.array([0.1, 0.0, 0.0])))
        rig = RigConfig((r0, r1), (0, 1))
        with pytest.raises(NoVisibleCameraError):
            select_camera(0, SphericalCoord(-math.pi, 0.0), rig,
                          default_cands)


class TestBuildVolume:
    def test_layer_aligned_sphere_wta(self, small_rig):
        cands = DistanceCandidates.inverse_depth(0.5, 8.0, 16)
        assert cands.distances[14] == 4.0
        ref = small_rig.camera(0)
        scene = synthetic.Scene((synthetic.SpherePrimitive(
            center=tuple(ref.center), radius=4.0,
            texture=synthetic.Texture(noise_scale=0.35, noise_octaves=3,
                                      seed=2)),))
        images, _ = synthetic.render_rig_views(scene, small_rig, (320, 320))
        grid = SphericalGrid(128, 64)
        vol = build_volume(images[0], images, small_rig, cands, grid,
                           ref_id=0)
        g = vol.guidance
        grad = np.zeros(g.shape[:2])
        grad[:, 1:] += np.abs(np.diff(g, axis=1)).sum(-1)
        grad[1:, :] += np.abs(np.diff(g, axis=0)).sum(-1)
        textured = vol.valid & (grad > 0.01)
        wta = np.argmin(vol.costs, axis=2)
        hit = (wta == 14)[textured]
        assert hit.mean() > 0.95

    def test_textureless_slice_flat(self, small_rig):
        flat = synthetic.Texture(color_a=(0.4, 0.5, 0.6),
                                 color_b=(0.4, 0.5, 0.6), checker_scale=0.0)
        scene = synthetic.Scene((synthetic.SpherePrimitive(
            center=(0.0, 0.0, 0.0), radius=4.0, texture=flat),))
        images, _ = synthetic.render_rig_views(scene, small_rig, (320, 320))
        cands = DistanceCandidates.inverse_depth(0.5, 8.0, 8)
        grid = SphericalGrid(64, 32)
        vol = build_volume(images[0], images, small_rig, cands, grid,
                           ref_id=0)
        th = grid.thetas()[None, :].repeat(32, 0)
        ph = grid.phis()[:, None].repeat(64, 1)
        interior = (np.abs(th) < 1.0) & (np.abs(ph) < 0.5) & vol.valid
        spread = vol.costs[interior].max(axis=1) \
            - vol.costs[interior].min(axis=1)
        assert np.quantile(spread, 0.9) < 1e-9

    def test_out_of_fov_gets_max_cost(self, sphere_views, small_rig,
                                      default_cands):
        images, _ = sphere_views
        grid = SphericalGrid(64, 32)
        vol = build_volume(images[0], images, small_rig, default_cands, grid,
                           ref_id=0)
        outside = ~vol.valid
        assert outside.any()
        assert np.all(vol.costs[outside] == MAX_COST)


class TestBilateral:
    def test_identical_colors_weight_one(self):
        img = np.full((4, 4, 3), 0.3)
        assert bilateral_weight(img, 1, 1, 1, 0, 0.05) == pytest.approx(1.0)

    def test_sigma_sqrt2_difference(self):
        sigma = 0.1
        img = np.zeros((2, 2, 3))
        img[1, 1] = sigma * math.sqrt(2.0) / math.sqrt(3.0)
        w = bilateral_weight(img, 0, 0, 1, 1, sigma)
        assert w == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(5, 5, 3))
        a = bilateral_weight(img, 1, 2, 1, 1, 0.07)
        b = bilateral_weight(img, 2, 3, -1, -1, 0.07)
        assert a == pytest.approx(b, rel=1e-12)


def oracle_downsample(img, guide, sigma):
    """Direct per-pixel transcription of the bilateral halving rule."""
    h, w = img.shape[:2]
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    out = np.zeros((h2, w2) + img.shape[2:])
    for r in range(h2):
        for c in range(w2):
            acc = np.zeros(img.shape[2:])
            tau = 0.0
            for m in (-1, 0, 1):
                for n in (-1, 0, 1):
                    rr, cc = 2 * r + m, 2 * c + n
                    if not (0 <= rr < h and 0 <= cc < w):
                        continue
                    d = guide[rr, cc] - guide[2 * r, 2 * c]
                    wgt = math.exp(-float(np.sum(d * d))
                                   / (2 * sigma * sigma))
                    tau += wgt
                    acc = acc + wgt * img[rr, cc]
            out[r, c] = acc / tau
    return out


class TestDownsample:
    def test_constant_preserved(self):
        img = np.full((8, 8, 3), 0.42)
        out = downsample(img)
        assert out.shape == (4, 4, 3)
        assert np.allclose(out, 0.42, atol=1e-12)

    def test_step_edge_against_oracle(self):
        img = np.zeros((8, 8, 3))
        img[:, 4:] = 1.0
        out = downsample(img, sigma_i=0.05)
        want = oracle_downsample(img, img, 0.05)
        assert np.allclose(out, want, atol=1e-12)
        # edge stays between coarse columns 1 and 2, values unmixed
        assert np.all(out[:, :2] < 1e-9)
        assert np.all(out[:, 2:] > 1.0 - 1e-9)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_two_by_two_border_rule(self):
        img = np.array([[[0.0], [1.0]], [[0.2], [0.8]]])
        rgb = np.repeat(img, 3, axis=2)
        out = downsample(rgb, sigma_i=1e6)  # near-uniform weights
        # single output pixel = mean of the in-bounds 2x2 support
        assert out.shape == (1, 1, 3)
        assert np.allclose(out[0, 0], 0.5, atol=1e-6)


class TestAggregate:
    def test_constant_slices_preserved(self):
        rng = np.random.default_rng(2)
        guide = rng.uniform(size=(32, 64, 3))
        costs = np.full((32, 64, 5), 1.234)
        out, _ = aggregate_costs(costs, guide, 0.05, 3)
        assert np.abs(out - 1.234).max() < 1e-12

    def test_noise_variance_reduced(self):
        rng = np.random.default_rng(3)
        guide = np.full((64, 64, 3), 0.5)
        costs = rng.uniform(size=(64, 64, 4))
        out, _ = aggregate_costs(costs, guide, 0.05, 3)
        assert out.var() < 0.5 * costs.var()

    def test_guidance_edge_preserved(self):
        h, w = 32, 64
        guide = np.zeros((h, w, 3))
        guide[:, w // 2:] = 1.0
        costs = np.zeros((h, w, 2))
        costs[:, w // 2:, :] = 2.0
        out, _ = aggregate_costs(costs, guide, 0.05, 3)
        # within 1 px of the guidance edge the cost step survives
        assert np.all(np.abs(out[:, :w // 2 - 1]) < 1e-9)
        assert np.all(np.abs(out[:, w // 2 + 1:] - 2.0) < 1e-9)

    def test_output_within_input_range(self):
        rng = np.random.default_rng(4)
        guide = rng.uniform(size=(32, 32, 3))
        costs = rng.uniform(0.2, 0.9, size=(32, 32, 6))
        out, _ = aggregate_costs(costs, guide, 0.05, 2)
        assert out.min() >= costs.min() - 1e-12
        assert out.max() <= costs.max() + 1e-12

    def test_work_scales_linearly(self):
        works = []
        for size in (64, 128, 256):
            rng = np.random.default_rng(5)
            guide = rng.uniform(size=(size, size, 3))
            costs = rng.uniform(size=(size, size, 2))
            _, work = aggregate_costs(costs, guide, 0.05, 3)
            works.append(work)
        for a, b in zip(works, works[1:]):
            assert b / a == pytest.approx(4.0, rel=0.2)

    def test_volume_wrapper_keeps_metadata(self, sphere_views, small_rig,
                                           default_cands):
        images, _ = sphere_views
        grid = SphericalGrid(64, 32)
        vol = build_volume(images[0], images, small_rig, default_cands,
                           grid, ref_id=0)
        agg = aggregate(vol, vol.guidance)
        assert agg.reference_id == vol.reference_id
        assert agg.costs.shape == vol.costs.shape
        assert np.array_equal(agg.selected_camera, vol.selected_camera)


class TestExtractDistance:
    def _volume(self, costs):
        h, w, _ = costs.shape
        from omnisweep.sphere_sweep import SphereSweepVolume
        return SphereSweepVolume(
            reference_id=0, grid=SphericalGrid(max(w, 2), max(h, 2)),
            costs=costs, selected_camera=np.zeros((h, w), dtype=np.int32),
            valid=np.ones((h, w), dtype=bool))

    def test_symmetric_neighbors_give_exact_layer(self):
        cands = DistanceCandidates(np.linspace(1.0, 10.0, 10))
        row = np.array([5.0, 1.0, 5.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0])
        costs = np.tile(row, (2, 2, 1))
        dmap = extract_distance(self._volume(costs), cands)
        assert dmap.distance[0, 0] == pytest.approx(cands.distances[1],
                                                    rel=1e-12)

    def test_parabola_vertex_quarter(self):
        # cost triple (4, 1, 2) puts the vertex at index 1.25
        cands = DistanceCandidates(np.linspace(1.0, 4.0, 4))
        row = np.array([4.0, 1.0, 2.0, 3.0])
        costs = np.tile(row, (2, 2, 1))
        dmap = extract_distance(self._volume(costs, cands), cands)
        inv = 1.0 / cands.distances
        want = 1.0 / (inv[1] * 0.75 + inv[2] * 0.25)
        assert dmap.distance[0, 0] == pytest.approx(want, rel=1e-12)

    def test_border_minimum_skips_refinement(self):
        cands = DistanceCandidates(np.linspace(1.0, 4.0, 4))
        row = np.array([0.5, 1.0, 2.0, 3.0])
        costs = np.tile(row, (2, 2, 1))
        dmap = extract_distance(self._volume(costs, cands), cands)
        assert dmap.distance[0, 0] == pytest.approx(1.0, rel=1e-12)

    def test_all_max_cost_gets_sentinel(self):
        cands = DistanceCandidates(np.linspace(1.0, 4.0, 4))
        costs = np.full((2, 2, 4), MAX_COST)
        dmap = extract_distance(self._volume(costs, cands), cands)
        assert np.all(dmap.distance == SENTINEL)
        assert np.all(dmap.confidence == 0.0)

    def test_refinement_stays_within_one_layer(self):
        rng = np.random.default_rng(6)
        cands = DistanceCandidates.inverse_depth(0.5, 8.0, 16)
        costs = rng.uniform(0.1, 1.0, size=(8, 8, 16))
        dmap = extract_distance(self._volume(costs, cands), cands)
        wta = np.argmin(costs, axis=2)
        inv = 1.0 / cands.distances
        got_inv = 1.0 / dmap.distance
        lo = inv[np.clip(wta + 1, 0, 15)] - 1e-12
        hi = inv[np.clip(wta - 1, 0, 15)] + 1e-12
        assert np.all((got_inv >= lo) & (got_inv <= hi))


class TestSweepAccuracy:
    def test_sphere_scene_distance_error(self):
        err, spacing, frac = verify.sweep_sphere_errors(
            grid_size=(128, 64), image_size=(320, 320))
        assert np.mean(err / spacing) < 0.5
        assert frac >= 0.9

    def test_noise_degrades_monotonically(self, small_rig):
        cands = DistanceCandidates.inverse_depth(0.5, 8.0, 16)
        ref = small_rig.camera(0)
        scene = synthetic.Scene((synthetic.SpherePrimitive(
            center=(0.0, 0.0, 0.0), radius=4.0,
            texture=synthetic.Texture(noise_scale=0.35, noise_octaves=3,
                                      seed=2)),))
        images, _ = synthetic.render_rig_views(scene, small_rig, (320, 320))
        grid = SphericalGrid(96, 48)
        dirs = grid.directions()
        oc = ref.center
        b = dirs @ oc
        q = oc @ oc - 16.0
        t_true = -b + np.sqrt(b * b - q)

        def mean_err(sigma, seed):
            rng = np.random.default_rng(seed)
            noisy = {cid: np.clip(img + rng.normal(0, sigma, img.shape),
                                  0, 1)
                     for cid, img in images.items()}
            vol = build_volume(noisy[0], noisy, small_rig, cands, grid,
                               ref_id=0)
            agg = aggregate(vol, vol.guidance)
            dmap = extract_distance(agg, cands)
            use = (dmap.distance > 0) & vol.valid
            return np.abs(dmap.distance[use] - t_true[use]).mean()

        medians = []
        for sigma in (0.0, 0.025, 0.05):
            medians.append(np.median([mean_err(sigma, 10 + s)
                                      for s in range(5)]))
        assert medians[0] <= medians[1] <= medians[2], medians
