"""Camera model tests: frozen high-precision oracle values, round trips,
domain predicates, model reduction and serialization."""

import json
import math

import mpmath as mp
import numpy as np
import pytest

from omnisweep import camera_models as cm
from omnisweep.verify import (random_intrinsics, roundtrip_max_error,
                              sample_domain_points)

mp.mp.dps = 50


def oracle_project(point, intr):
    """Independent high-precision scalar transcription of the forward
    model (the reference the tests were frozen from)."""
    x, y, z = (mp.mpf(repr(v)) for v in point)
    xi = mp.mpf(repr(intr.xi))
    lam = mp.mpf(repr(intr.lam))
    alpha = mp.mpf(repr(intr.alpha))
    d0 = mp.sqrt(x * x + y * y + z * z)
    d1 = mp.sqrt(x * x + y * y + (xi * d0 + z) ** 2)
    d2 = mp.sqrt(x * x + y * y + (xi * d0 + lam * d1 + z) ** 2)
    w1 = alpha / (1 - alpha)
    phi = z + xi * d0 + lam * d1 + w1 * d2
    return (float(intr.fx * x / phi + intr.cx),
            float(intr.fy * y / phi + intr.cy))


def oracle_w2(intr):
    xi = mp.mpf(repr(intr.xi))
    lam = mp.mpf(repr(intr.lam))
    alpha = mp.mpf(repr(intr.alpha))
    w1 = alpha / (1 - alpha)
    c = xi + lam
    return float((c + w1) / mp.sqrt(1 + c * c + 2 * w1 * c))


EXAMPLE_INTR = cm.Intrinsics(fx=300.0, fy=300.0, cx=512.0, cy=512.0,
                             alpha=0.6, xi=-0.2, lam=0.1, model="tscm")

# frozen from oracle_project / oracle_w2 at 50 digits
FROZEN_PIXEL = (547.93863205672898, 488.04091196218068)
FROZEN_W2 = 1.6614943214713947


class TestProjection:
    def test_frozen_pixel_matches_oracle(self):
        assert oracle_project((0.3, -0.2, 1.1), EXAMPLE_INTR) == \
            pytest.approx(FROZEN_PIXEL, abs=1e-11)

    def test_project_example(self):
        px, ok = cm.project(np.array([0.3, -0.2, 1.1]), EXAMPLE_INTR)
        assert ok
        assert px == pytest.approx(FROZEN_PIXEL, abs=1e-9)

    def test_on_axis_hits_principal_point(self):
        for model in ("dscm", "tscm"):
            intr = cm.Intrinsics(fx=250.0, fy=260.0, cx=333.0, cy=444.0,
                                 alpha=0.4, xi=0.1,
                                 lam=0.05 if model == "tscm" else 0.0,
                                 model=model)
            px, ok = cm.project(np.array([0.0, 0.0, 1.0]), intr)
            assert ok
            assert px == pytest.approx((333.0, 444.0), abs=1e-12)

    def test_behind_domain_is_invalid(self):
        w2 = EXAMPLE_INTR.w2
        p = np.array([0.1, 0.0, -(w2 + 0.05) * math.hypot(0.1, 0.0) * 2])
        px, ok = cm.project(p, EXAMPLE_INTR)
        assert not ok
        assert np.isnan(px).all()

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        intr = random_intrinsics(rng, "tscm")
        pts = sample_domain_points(rng, intr, 500)
        base, ok = cm.project(pts, intr)
        for s in (1e-3, 7.0, 1e4):
            scaled, ok_s = cm.project(pts * s, intr)
            assert np.array_equal(ok, ok_s)
            assert np.allclose(scaled[ok], base[ok], atol=1e-8)

    def test_domain_consistency(self):
        """project is invalid exactly where the domain predicate fails or
        the denominator guard triggers."""
        rng = np.random.default_rng(4)
        intr = random_intrinsics(rng, "tscm")
        d = rng.normal(size=(5000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = d * rng.uniform(0.2, 20.0, size=(5000, 1))
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        d0 = np.sqrt(x * x + y * y + z * z)
        d1 = np.sqrt(x * x + y * y + (intr.xi * d0 + z) ** 2)
        d2v = np.sqrt(x * x + y * y
                      + (intr.xi * d0 + intr.lam * d1 + z) ** 2)
        phi = z + intr.xi * d0 + intr.lam * d1 + intr.w1 * d2v
        expected = cm.in_valid_domain(pts, intr) & (phi > cm.EPS_PHI)
        _, ok = cm.project(pts, intr)
        assert np.array_equal(ok, expected)


class TestValidDomain:
    def test_forward_axis_always_valid(self):
        assert cm.in_valid_domain(np.array([0.0, 0.0, 1.0]), EXAMPLE_INTR)

    def test_backward_example_frozen(self):
        assert oracle_w2(EXAMPLE_INTR) == pytest.approx(FROZEN_W2, abs=1e-12)
        assert EXAMPLE_INTR.w2 == pytest.approx(FROZEN_W2, abs=1e-12)
        # -1 > -w2 * 1, so the point stays valid for this wide lens
        assert cm.in_valid_domain(np.array([0.0, 0.0, -1.0]), EXAMPLE_INTR)

    def test_boundary_is_strict(self):
        # xi = -w1 makes w2 exactly 0: the boundary plane is z = 0
        intr = cm.Intrinsics(fx=300.0, fy=300.0, cx=512.0, cy=512.0,
                             alpha=0.2, xi=-0.25, lam=0.0, model="tscm")
        assert intr.w2 == 0.0
        assert not cm.in_valid_domain(np.array([1.0, 0.0, 0.0]), intr)
        assert cm.in_valid_domain(np.array([1.0, 0.0, 1e-12]), intr)


class TestUnprojection:
    def test_principal_point_gives_axis(self):
        ray, ok = cm.unproject(np.array([512.0, 512.0]), EXAMPLE_INTR)
        assert ok
        assert ray == pytest.approx((0.0, 0.0, 1.0), abs=1e-12)

    def test_far_outside_image_circle_invalid(self):
        ray, ok = cm.unproject(np.array([512.0 + 5e4, 512.0]), EXAMPLE_INTR)
        assert not ok
        assert np.isnan(ray).all()

    def test_rays_are_unit(self):
        rng = np.random.default_rng(5)
        intr = random_intrinsics(rng, "tscm")
        pts = sample_domain_points(rng, intr, 2000)
        px, ok = cm.project(pts, intr)
        rays, rok = cm.unproject(px[ok], intr)
        assert rok.all()
        assert np.abs(np.linalg.norm(rays, axis=1) - 1.0).max() < 1e-12

    @pytest.mark.parametrize("model", ["dscm", "tscm"])
    @pytest.mark.parametrize("alpha_range", [(0.05, 0.45), (0.5, 0.68)])
    def test_roundtrip(self, model, alpha_range):
        rng = np.random.default_rng(hash((model, alpha_range)) % 2**32)
        for _ in range(4):
            intr = random_intrinsics(rng, model, alpha_range=alpha_range)
            pts = sample_domain_points(rng, intr, 2500)
            assert roundtrip_max_error(intr, pts) < 1e-8


class TestModelReduction:
    def test_direct_dscm_path_matches_general(self):
        rng = np.random.default_rng(6)
        intr = cm.Intrinsics(fx=280.0, fy=285.0, cx=500.0, cy=510.0,
                             alpha=0.55, xi=-0.3, lam=0.0, model="dscm")
        d = rng.normal(size=(5000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = d * rng.uniform(0.3, 30.0, size=(5000, 1))
        px_g, ok_g = cm.project(pts, intr)
        px_d, ok_d = cm.dscm_project(pts, intr)
        assert np.array_equal(ok_g, ok_d)
        assert np.allclose(px_g[ok_g], px_d[ok_g], atol=1e-12)

        pix = np.stack([rng.uniform(0, 1000, 3000),
                        rng.uniform(0, 1000, 3000)], axis=1)
        r_g, rok_g = cm.unproject(pix, intr)
        r_d, rok_d = cm.dscm_unproject(pix, intr)
        assert np.array_equal(rok_g, rok_d)
        assert np.allclose(r_g[rok_g], r_d[rok_g], atol=1e-12)

    def test_dscm_roundtrip(self):
        rng = np.random.default_rng(7)
        intr = cm.Intrinsics(fx=280.0, fy=280.0, cx=512.0, cy=512.0,
                             alpha=0.62, xi=-0.28, lam=0.0, model="dscm")
        pts = sample_domain_points(rng, intr, 3000)
        px, ok = cm.project(pts, intr)
        rays, rok = cm.dscm_unproject(px[ok], intr)
        assert rok.all()
        unit = pts[ok] / np.linalg.norm(pts[ok], axis=1, keepdims=True)
        chord = np.linalg.norm(rays - unit, axis=1)
        assert 2.0 * np.arcsin(chord / 2.0).max() < 1e-8


class TestJacobianContinuity:
    def test_central_difference_stability(self):
        """Finite-difference Jacobians at two step sizes agree; the
        calibration optimizer depends on this smoothness."""
        rng = np.random.default_rng(8)
        intr = random_intrinsics(rng, "tscm", alpha_range=(0.2, 0.6))
        pts = sample_domain_points(rng, intr, 100, radius_range=(1.0, 5.0))

        def fd_jac(p, h):
            cols = []
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                up, _ = cm.project(p + dp, intr)
                dn, _ = cm.project(p - dp, intr)
                cols.append((up - dn) / (2 * h))
            return np.stack(cols, axis=1)

        for p in pts:
            j1 = fd_jac(p, 1e-5)
            j2 = fd_jac(p, 1e-6)
            scale = max(np.abs(j1).max(), 1.0)
            assert np.abs(j1 - j2).max() / scale < 1e-5


class TestIntrinsicsType:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            cm.Intrinsics(fx=-1.0, fy=1.0, cx=0, cy=0, alpha=0.5, xi=0.0)
        with pytest.raises(ValueError):
            cm.Intrinsics(fx=1.0, fy=1.0, cx=0, cy=0, alpha=1.0, xi=0.0)
        with pytest.raises(ValueError):
            cm.Intrinsics(fx=1.0, fy=1.0, cx=0, cy=0, alpha=0.5, xi=0.0,
                          lam=0.1, model="dscm")

    def test_json_schema_and_roundtrip(self):
        d = EXAMPLE_INTR.to_dict()
        assert set(d) == {"model", "fx", "fy", "cx", "cy", "alpha", "xi",
                          "lambda"}
        assert d["model"] == "tscm"
        assert d["lambda"] == 0.1
        back = cm.Intrinsics.loads(EXAMPLE_INTR.dumps())
        assert back == EXAMPLE_INTR

    def test_json_values_are_plain_numbers(self):
        parsed = json.loads(EXAMPLE_INTR.dumps())
        for key in ("fx", "fy", "cx", "cy", "alpha", "xi", "lambda"):
            assert isinstance(parsed[key], float)
