"""Synthetic ground truth: analytic ray-cast renders through the exact
camera models, plus calibration corner generation.

Every render is deterministic given (scene, seed); distances satisfy the
analytic primitive equations, so renders serve as independent oracles for
the sweep and stitching stages. Textures are procedural (value noise and
checker) so stereo matching always has gradients to work with.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import camera_models as cm
from .camera_models import Intrinsics, fit_focal
from .rig import Pose, RigConfig, default_rig, invert, transform
from .sphere_sweep import SENTINEL, SphericalGrid

_HIT_EPS = 1e-9


def _value_noise(u, v, scale, seed):
    """Smooth deterministic 2D value noise in [0, 1] (hash-lattice with
    quintic interpolation)."""
    u = np.asarray(u, dtype=np.float64) / scale
    v = np.asarray(v, dtype=np.float64) / scale
    iu = np.floor(u)
    iv = np.floor(v)
    fu = u - iu
    fv = v - iv

    def hash01(ix, iy):
        s = np.sin(ix * 12.9898 + iy * 78.233 + seed * 37.719) * 43758.5453
        return s - np.floor(s)

    a = hash01(iu, iv)
    b = hash01(iu + 1.0, iv)
    c = hash01(iu, iv + 1.0)
    d = hash01(iu + 1.0, iv + 1.0)
    su = fu * fu * fu * (fu * (fu * 6.0 - 15.0) + 10.0)
    sv = fv * fv * fv * (fv * (fv * 6.0 - 15.0) + 10.0)
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv


@dataclass(frozen=True)
class Texture:
    """Procedural surface color: two base colors mixed by value noise,
    optionally modulated by a checker pattern."""

    color_a: tuple = (0.25, 0.35, 0.55)
    color_b: tuple = (0.75, 0.65, 0.40)
    noise_scale: float = 0.5
    noise_octaves: int = 2
    checker_scale: float = 0.0   # 0 disables the checker
    checker_amp: float = 0.15
    seed: int = 0

    def sample(self, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        t = np.zeros_like(u)
        amp_total = 0.0
        amp = 1.0
        scale = self.noise_scale
        for o in range(self.noise_octaves):
            t += amp * _value_noise(u, v, scale, self.seed + o)
            amp_total += amp
            amp *= 0.5
            scale *= 0.5
        t /= amp_total
        ca = np.asarray(self.color_a)
        cb = np.asarray(self.color_b)
        col = ca + (cb - ca) * t[..., None]
        if self.checker_scale > 0.0:
            par = (np.floor(u / self.checker_scale)
                   + np.floor(v / self.checker_scale)) % 2.0
            col = col * (1.0 - self.checker_amp * par[..., None])
        return np.clip(col, 0.0, 1.0)

    def to_dict(self):
        return {"color_a": list(self.color_a), "color_b": list(self.color_b),
                "noise_scale": self.noise_scale,
                "noise_octaves": self.noise_octaves,
                "checker_scale": self.checker_scale,
                "checker_amp": self.checker_amp, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(color_a=tuple(d.get("color_a", (0.25, 0.35, 0.55))),
                   color_b=tuple(d.get("color_b", (0.75, 0.65, 0.4))),
                   noise_scale=float(d.get("noise_scale", 0.5)),
                   noise_octaves=int(d.get("noise_octaves", 2)),
                   checker_scale=float(d.get("checker_scale", 0.0)),
                   checker_amp=float(d.get("checker_amp", 0.15)),
                   seed=int(d.get("seed", 0)))


@dataclass(frozen=True)
class SpherePrimitive:
    center: tuple
    radius: float
    texture: Texture = field(default_factory=Texture)

    def intersect(self, origins, dirs):
        """Smallest positive ray parameter, inf where missed. Works from
        inside the sphere too (takes the far root)."""
        c = np.asarray(self.center, dtype=np.float64)
        oc = origins - c
        b = np.sum(oc * dirs, axis=-1)
        q = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - q
        ok = disc >= 0.0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t_near = -b - root
        t_far = -b + root
        t = np.where(t_near > _HIT_EPS, t_near, t_far)
        return np.where(ok & (t > _HIT_EPS), t, np.inf)

    def local_uv(self, points):
        rel = points - np.asarray(self.center)
        theta = np.arctan2(rel[..., 0], rel[..., 2])
        nrm = np.sqrt(np.sum(rel * rel, axis=-1))
        phi = np.arcsin(np.clip(rel[..., 1] / np.maximum(nrm, 1e-300),
                                -1.0, 1.0))
        return theta * self.radius, phi * self.radius

    def signed_clearance(self, point):
        return abs(np.linalg.norm(np.asarray(point)
                                  - np.asarray(self.center)) - self.radius)

    def to_dict(self):
        return {"type": "sphere", "center": list(self.center),
                "radius": self.radius, "texture": self.texture.to_dict()}


@dataclass(frozen=True)
class PlanePrimitive:
    """Finite square patch: centered at ``center``, oriented by
    ``normal``, with side length ``size``."""

    center: tuple
    normal: tuple
    size: float
    texture: Texture = field(default_factory=Texture)

    def _frame(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0.0, 0.0])
        if abs(n @ a) > 0.9:
            a = np.array([0.0, 1.0, 0.0])
        t1 = np.cross(n, a)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        return n, t1, t2

    def intersect(self, origins, dirs):
        n, t1, t2 = self._frame()
        c = np.asarray(self.center, dtype=np.float64)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - origins) @ n) / denom
        hit = (np.abs(denom) > 1e-12) & (t > _HIT_EPS)
        pts = origins + t[..., None] * dirs
        rel = pts - c
        inside = (np.abs(rel @ t1) <= self.size / 2.0) \
            & (np.abs(rel @ t2) <= self.size / 2.0)
        return np.where(hit & inside, t, np.inf)

    def local_uv(self, points):
        _, t1, t2 = self._frame()
        rel = points - np.asarray(self.center)
        return rel @ t1, rel @ t2

    def signed_clearance(self, point):
        n, _, _ = self._frame()
        return abs((np.asarray(point) - np.asarray(self.center)) @ n)

    def to_dict(self):
        return {"type": "plane", "center": list(self.center),
                "normal": list(self.normal), "size": self.size,
                "texture": self.texture.to_dict()}


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    background: tuple = (0.0, 0.0, 0.0)

    def validate_origin(self, origin):
        """Ray origins must keep clear of every primitive surface."""
        for p in self.primitives:
            if p.signed_clearance(origin) < 1e-6:
                raise ValueError("ray origin lies on a primitive surface")

    def cast(self, origins, dirs):
        """Nearest-hit color and distance; returns (colors, dist) with
        dist = inf where nothing is hit."""
        base = dirs[..., 0].shape
        best_t = np.full(base, np.inf)
        colors = np.broadcast_to(np.asarray(self.background, dtype=np.float64),
                                 base + (3,)).copy()
        for prim in self.primitives:
            t = prim.intersect(origins, dirs)
            closer = t < best_t
            if not closer.any():
                continue
            pts = origins + t[..., None] * dirs
            u, v = prim.local_uv(pts)
            col = prim.texture.sample(u, v)
            colors = np.where(closer[..., None], col, colors)
            best_t = np.where(closer, t, best_t)
        return colors, best_t

    def to_dict(self):
        return {"background": list(self.background),
                "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d):
        prims = []
        for p in d["primitives"]:
            tex = Texture.from_dict(p.get("texture", {}))
            if p["type"] == "sphere":
                prims.append(SpherePrimitive(tuple(p["center"]),
                                             float(p["radius"]), tex))
            elif p["type"] == "plane":
                prims.append(PlanePrimitive(tuple(p["center"]),
                                            tuple(p["normal"]),
                                            float(p["size"]), tex))
            else:
                raise ValueError(f"unknown primitive type {p['type']!r}")
        return cls(tuple(prims), tuple(d.get("background", (0.0, 0.0, 0.0))))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def render_fisheye(scene: Scene, intrinsics: Intrinsics, pose: Pose, size):
    """Render one fisheye view; ``pose`` maps camera to world. Returns
    (image, distance) where distance is meters along each pixel ray
    (SENTINEL for pixels outside the model's image or rays that miss
    every primitive against an empty background)."""
    w, h = size
    scene.validate_origin(pose.translation)
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    pixels = np.stack([uu, vv], axis=-1)
    rays_cam, ok = cm.unproject(pixels, intrinsics)
    rays = np.where(ok[..., None], rays_cam, 0.0) @ pose.rotation.T
    colors, t = scene.cast(pose.translation, rays)
    hit = ok & np.isfinite(t)
    image = np.where(hit[..., None], colors, 0.0)
    bg = np.asarray(scene.background, dtype=np.float64)
    image = np.where((ok & ~np.isfinite(t))[..., None], bg, image)
    dist = np.where(hit, t, SENTINEL)
    return image, dist


def render_equirect(scene: Scene, origin, size):
    """Analytic equirectangular render from ``origin`` (rig frame axes).
    Returns (image, distance); distance is SENTINEL where no surface."""
    w, h = size
    grid = SphericalGrid(w, h)
    dirs = grid.directions()
    origin = np.asarray(origin, dtype=np.float64)
    scene.validate_origin(origin)
    colors, t = scene.cast(origin, dirs)
    hit = np.isfinite(t)
    image = np.where(hit[..., None], colors,
                     np.asarray(scene.background, dtype=np.float64))
    dist = np.where(hit, t, SENTINEL)
    return image, dist


def board_grid(rows=6, cols=9, spacing=0.04):
    """Planar calibration board corners in the board frame (z = 0)."""
    ids = np.arange(rows * cols)
    r, c = np.divmod(ids, cols)
    xyz = np.stack([
        (c - (cols - 1) / 2.0) * spacing,
        (r - (rows - 1) / 2.0) * spacing,
        np.zeros_like(ids, dtype=np.float64),
    ], axis=-1)
    return ids, xyz


def render_corners(board, intrinsics: Intrinsics, poses, noise_sigma=0.0,
                   seed=0, image_size=None):
    """Project board corners through each board-to-camera pose and add
    i.i.d. Gaussian pixel noise. Corners that leave the valid domain (or
    the image bounds, when given) are omitted; a board fully behind the
    camera yields an empty image entry."""
    from .calibration import CornerObservations

    ids, xyz = board
    rng = np.random.default_rng(seed)
    images = []
    for n, pose in enumerate(poses):
        pts = transform(pose, xyz)
        px, ok = cm.project(pts, intrinsics)
        if noise_sigma > 0.0:
            px = px + rng.normal(0.0, noise_sigma, px.shape)
        if image_size is not None:
            w, h = image_size
            ok = ok & (px[..., 0] >= 0) & (px[..., 0] <= w - 1) \
                & (px[..., 1] >= 0) & (px[..., 1] <= h - 1)
        images.append((n, ids[ok].copy(), px[ok].copy()))
    return CornerObservations(board_ids=ids, board_xyz=xyz,
                              images=tuple(images))


def _rotation_between(a, b):
    """Rotation matrix taking unit vector a to unit vector b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1.0 + 1e-12:
        # antipodal: rotate half-turn about any perpendicular axis
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        perp /= np.linalg.norm(perp)
        k = np.array([[0, -perp[2], perp[1]],
                      [perp[2], 0, -perp[0]],
                      [-perp[1], perp[0], 0]])
        return np.eye(3) + 2.0 * (k @ k)
    k = np.array([[0, -v[2], v[1]],
                  [v[2], 0, -v[0]],
                  [-v[1], v[0], 0]])
    return np.eye(3) + k + k @ k / (1.0 + c)


def calibration_poses(n_boards=8, seed=0, dist_range=(0.7, 1.7),
                      max_off_axis_deg=80.0, tilt_deg=20.0):
    """Board-to-camera poses spreading boards across the fisheye view.

    Board centers are placed along directions up to ``max_off_axis_deg``
    from the optical axis (wide lenses need eccentric boards to constrain
    the radial profile); each board roughly faces the camera with a
    random tilt and roll.
    """
    from .rig import rotvec_to_matrix

    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(n_boards):
        off = math.radians(rng.uniform(5.0, max_off_axis_deg))
        az = rng.uniform(-math.pi, math.pi)
        direction = np.array([math.sin(off) * math.cos(az),
                              math.sin(off) * math.sin(az),
                              math.cos(off)])
        center = rng.uniform(*dist_range) * direction
        facing = _rotation_between(np.array([0.0, 0.0, 1.0]), -direction)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        tilt = rotvec_to_matrix(axis * math.radians(
            rng.uniform(-tilt_deg, tilt_deg)))
        poses.append(Pose(tilt @ facing, center))
    return poses


def default_intrinsics(image_size=(640, 640), alpha=0.58, xi=-0.18, lam=0.12,
                       model="tscm", fov_deg=220.0):
    """Underwater-flavored triple sphere intrinsics with the full fisheye
    circle placed at 47% of the image width."""
    w, h = image_size
    if model == "dscm":
        lam = 0.0
    f = fit_focal(alpha, xi, lam, fov_deg / 2.0, 0.47 * w)
    return Intrinsics(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0, alpha=alpha,
                      xi=xi, lam=lam, model=model)


def default_rig_config(baseline=0.12, image_size=(640, 640)):
    """The standard 4-camera rig with matched synthetic intrinsics."""
    return default_rig(baseline, default_intrinsics(image_size))


def default_scene():
    """Bundled test scene: a large textured enclosing sphere with a plane
    and a small sphere for parallax structure."""
    enclosure = SpherePrimitive(
        center=(0.0, 0.0, 0.0), radius=4.0,
        texture=Texture(color_a=(0.20, 0.35, 0.50),
                        color_b=(0.80, 0.70, 0.45),
                        noise_scale=1.1, noise_octaves=2, seed=3))
    wall = PlanePrimitive(
        center=(0.0, 0.0, 2.2), normal=(0.0, 0.0, -1.0), size=2.4,
        texture=Texture(color_a=(0.55, 0.30, 0.25),
                        color_b=(0.85, 0.80, 0.60),
                        noise_scale=0.5, noise_octaves=2,
                        checker_scale=0.45, checker_amp=0.10, seed=11))
    blob = SpherePrimitive(
        center=(-1.2, 0.25, -0.9), radius=0.45,
        texture=Texture(color_a=(0.30, 0.55, 0.30),
                        color_b=(0.75, 0.85, 0.55),
                        noise_scale=0.35, noise_octaves=2, seed=7))
    return Scene((enclosure, wall, blob))


def render_rig_views(scene: Scene, rig: RigConfig, size):
    """Render all rig cameras; returns ({id: image}, {id: distance})."""
    images = {}
    dists = {}
    for cam in rig.cameras:
        img, dist = render_fisheye(scene, cam.intrinsics, cam.pose, size)
        images[cam.camera_id] = img
        dists[cam.camera_id] = dist
    return images, dists
