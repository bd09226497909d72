"""Double Sphere and Triple Sphere fisheye camera models.

The triple sphere model chains three unit-sphere reprojections (axial
displacements ``xi`` and ``lam``, then a perspective step offset by
``alpha/(1-alpha)``) and can absorb the refraction of a water/housing/air
light path parametrically through ``lam``. The double sphere model is the
``lam = 0`` special case.

All operations are pure and vectorized over leading array dimensions:
``points`` is ``(..., 3)``, ``pixels`` is ``(..., 2)``. Validity is
reported through boolean masks; invalid output entries hold NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

DSCM = "dscm"
TSCM = "tscm"

# Projection denominator guard: points with phi at or below this project to
# unusably large pixel values and are reported invalid instead.
EPS_PHI = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Per-camera parameters: focal lengths, principal point and the three
    sphere displacements ``alpha``, ``xi``, ``lam`` (``lam`` is identically
    0 under the double sphere model)."""

    fx: float
    fy: float
    cx: float
    cy: float
    alpha: float
    xi: float
    lam: float = 0.0
    model: str = TSCM

    def __post_init__(self):
        if self.model not in (DSCM, TSCM):
            raise ValueError(f"unknown camera model {self.model!r}")
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1); the perspective "
                             "offset alpha/(1-alpha) diverges at 1")
        if self.model == DSCM and self.lam != 0.0:
            raise ValueError("double sphere model requires lam == 0")

    @property
    def w1(self) -> float:
        """Perspective offset of the final projection step."""
        return self.alpha / (1.0 - self.alpha)

    @property
    def w2(self) -> float:
        """Valid-domain coefficient: points with z > -w2*|p| project."""
        c = self.xi + self.lam
        s = 1.0 + c * c + 2.0 * self.w1 * c
        if s <= 0.0:
            return math.nan
        return (c + self.w1) / math.sqrt(s)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "alpha": self.alpha,
            "xi": self.xi,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            alpha=float(d["alpha"]),
            xi=float(d["xi"]),
            lam=float(d["lambda"]),
            model=str(d["model"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "Intrinsics":
        return cls.from_dict(json.loads(s))


def _split_points(points):
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError("points must have shape (..., 3)")
    return p[..., 0], p[..., 1], p[..., 2]


def _chain_distances(x, y, z, intr):
    """Sphere-chain distances d0, d1, d2 and the projection denominator."""
    r2 = x * x + y * y
    d0 = np.sqrt(r2 + z * z)
    t1 = intr.xi * d0 + z
    d1 = np.sqrt(r2 + t1 * t1)
    t2 = intr.xi * d0 + intr.lam * d1 + z
    d2 = np.sqrt(r2 + t2 * t2)
    phi = z + intr.xi * d0 + intr.lam * d1 + intr.w1 * d2
    return d0, d1, d2, t2, phi


def in_valid_domain(points, intr: Intrinsics):
    """True where z > -w2*|p| (strict), the model's projectable set."""
    x, y, z = _split_points(points)
    d0 = np.sqrt(x * x + y * y + z * z)
    w2 = intr.w2
    if math.isnan(w2):
        return np.zeros_like(z, dtype=bool)
    return z > -w2 * d0


def project(points, intr: Intrinsics):
    """Project 3D camera-frame points to continuous pixel coordinates.

    Returns ``(pixels, valid)``; pixels are NaN wherever the point falls
    outside the valid domain or the denominator is below ``EPS_PHI``.
    """
    x, y, z = _split_points(points)
    d0, d1, d2, t2, phi = _chain_distances(x, y, z, intr)
    w2 = intr.w2
    if math.isnan(w2):
        valid = np.zeros_like(z, dtype=bool)
    else:
        valid = (z > -w2 * d0) & (phi > EPS_PHI)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * x / phi + intr.cx
        v = intr.fy * y / phi + intr.cy
    pixels = np.stack([u, v], axis=-1)
    pixels[~valid] = np.nan
    return pixels, valid


def in_invertible_domain(points, intr: Intrinsics):
    """True where the projection is faithful (unproject recovers the ray).

    Projectable points whose third-sphere z-component falls below
    -min(w1, 1/w1) alias onto pixels owned by other rays; warping and
    visibility tests must exclude them. For alpha <= 0.5 this set equals
    the projectable set.
    """
    x, y, z = _split_points(points)
    d0, d1, d2, t2, phi = _chain_distances(x, y, z, intr)
    w2 = intr.w2
    if math.isnan(w2):
        return np.zeros_like(z, dtype=bool)
    w1 = intr.w1
    cap = w1 if w1 <= 1.0 else 1.0 / w1
    with np.errstate(divide="ignore", invalid="ignore"):
        tz = np.where(d2 > 0.0, t2 / np.where(d2 > 0.0, d2, 1.0), -np.inf)
    return (z > -w2 * d0) & (phi > EPS_PHI) & (tz > -cap)


def unproject(pixels, intr: Intrinsics):
    """Invert pixels to unit rays; returns ``(rays, valid)``.

    Valid pixels satisfy every square-root discriminant of the inverse
    sphere chain; rays are renormalized to unit length. The perspective
    offset used here must equal the one used by :func:`project` for the
    composition to invert it, for every alpha.
    """
    px = np.asarray(pixels, dtype=np.float64)
    if px.shape[-1] != 2:
        raise ValueError("pixels must have shape (..., 2)")
    x = (px[..., 0] - intr.cx) / intr.fx
    y = (px[..., 1] - intr.cy) / intr.fy
    r2 = x * x + y * y
    w1 = intr.w1
    xi = intr.xi
    lam = intr.lam

    disc_g = 1.0 + (1.0 - w1 * w1) * r2
    ok = disc_g >= 0.0
    safe_g = np.where(ok, disc_g, 0.0)
    gamma = (w1 + np.sqrt(safe_g)) / (r2 + 1.0)
    gz = gamma - w1

    disc_e = lam * lam * gz * gz - lam * lam + 1.0
    ok &= disc_e >= 0.0
    eta = lam * gz + np.sqrt(np.where(ok, disc_e, 0.0))
    mz = eta * gz - lam

    disc_m = xi * xi * mz * mz - xi * xi + 1.0
    ok &= disc_m >= 0.0
    mu = xi * mz + np.sqrt(np.where(ok, disc_m, 0.0))

    vx = mu * eta * gamma * x
    vy = mu * eta * gamma * y
    vz = mu * mz - xi
    rays = np.stack([vx, vy, vz], axis=-1)
    norm = np.sqrt(np.sum(rays * rays, axis=-1))
    ok &= norm > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rays = rays / np.where(ok, norm, 1.0)[..., None]
    rays[~ok] = np.nan
    return rays, ok


def fit_focal(alpha, xi, lam, half_fov_deg, pixel_radius):
    """Focal length that places the ``half_fov_deg`` ray at
    ``pixel_radius`` pixels from the principal point."""
    a = math.radians(half_fov_deg)
    x, z = math.sin(a), math.cos(a)
    d0 = 1.0
    t1 = xi * d0 + z
    d1 = math.sqrt(x * x + t1 * t1)
    t2 = xi * d0 + lam * d1 + z
    d2 = math.sqrt(x * x + t2 * t2)
    w1 = alpha / (1.0 - alpha)
    phi = z + xi * d0 + lam * d1 + w1 * d2
    if phi <= 0.0:
        raise ValueError("model parameters cannot reach that field of view")
    return pixel_radius * phi / x


def dscm_project(points, intr: Intrinsics):
    """Direct double sphere projection (no third-sphere terms).

    Cross-check path for the general model at ``lam = 0``.
    """
    x, y, z = _split_points(points)
    r2 = x * x + y * y
    d0 = np.sqrt(r2 + z * z)
    t1 = intr.xi * d0 + z
    d1 = np.sqrt(r2 + t1 * t1)
    w1 = intr.w1
    phi = z + intr.xi * d0 + w1 * d1
    c = intr.xi
    s = 1.0 + c * c + 2.0 * w1 * c
    if s <= 0.0:
        valid = np.zeros_like(z, dtype=bool)
    else:
        w2 = (c + w1) / math.sqrt(s)
        valid = (z > -w2 * d0) & (phi > EPS_PHI)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * x / phi + intr.cx
        v = intr.fy * y / phi + intr.cy
    pixels = np.stack([u, v], axis=-1)
    pixels[~valid] = np.nan
    return pixels, valid


def dscm_unproject(pixels, intr: Intrinsics):
    """Direct double sphere unprojection (two-sphere inverse chain)."""
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[..., 0] - intr.cx) / intr.fx
    y = (px[..., 1] - intr.cy) / intr.fy
    r2 = x * x + y * y
    w1 = intr.w1
    xi = intr.xi

    disc_g = 1.0 + (1.0 - w1 * w1) * r2
    ok = disc_g >= 0.0
    gamma = (w1 + np.sqrt(np.where(ok, disc_g, 0.0))) / (r2 + 1.0)
    gz = gamma - w1

    disc_m = xi * xi * gz * gz - xi * xi + 1.0
    ok &= disc_m >= 0.0
    mu = xi * gz + np.sqrt(np.where(ok, disc_m, 0.0))

    rays = np.stack([mu * gamma * x, mu * gamma * y, mu * gz - xi], axis=-1)
    norm = np.sqrt(np.sum(rays * rays, axis=-1))
    ok &= norm > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rays = rays / np.where(ok, norm, 1.0)[..., None]
    rays[~ok] = np.nan
    return rays, ok
