"""Sphere-sweep distance estimation on a spherical grid.

Pipeline stages: per-pixel camera selection (widest sweep angle wins),
cost-volume construction by warping the selected camera through concentric
distance shells, edge-preserving pyramid aggregation, and winner-takes-all
extraction with quadratic sub-candidate refinement.

Grids are equirectangular over the full sphere, axis-aligned with the rig
frame and centered at the reference camera; pixels outside the reference
field of view are masked. Distances are meters along the grid direction
from the reference camera center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from . import _kernels_numpy as _npk
from .camera_models import Intrinsics, in_invertible_domain, project
from .rig import RigConfig, invert, transform

# L1 distance between pure black and pure white over 3 unit-range channels;
# assigned to warps that leave every camera's view.
MAX_COST = 3.0

# Distance value marking pixels with no estimate.
SENTINEL = -1.0

DEFAULT_FOV_DEG = 220.0
DEFAULT_SIGMA_I = 0.05
DEFAULT_LEVELS = 3


class NoVisibleCameraError(RuntimeError):
    """No candidate camera sees both sweep probe points."""


@dataclass(frozen=True)
class SphericalCoord:
    """Azimuth/elevation pair; theta in [-pi, pi), phi in [-pi/2, pi/2]."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (-math.pi <= self.theta < math.pi):
            raise ValueError("theta out of [-pi, pi)")
        if not (-math.pi / 2 <= self.phi <= math.pi / 2):
            raise ValueError("phi out of [-pi/2, pi/2]")


def direction_from_angles(theta, phi):
    """Unit direction for azimuth/elevation: +z at (0, 0), +y at phi=pi/2."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    cp = np.cos(phi)
    x, y, z = np.broadcast_arrays(cp * np.sin(theta), np.sin(phi),
                                  cp * np.cos(theta))
    return np.stack([x, y, z], axis=-1)


def angles_from_direction(d):
    d = np.asarray(d, dtype=np.float64)
    norm = np.sqrt(np.sum(d * d, axis=-1))
    theta = np.arctan2(d[..., 0], d[..., 2])
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arcsin(np.clip(d[..., 1] / norm, -1.0, 1.0))
    return theta, phi


@dataclass(frozen=True)
class SphericalGrid:
    """Equirectangular sampling of the full sphere (theta along columns,
    phi along rows, row 0 at the top / +phi)."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")

    def thetas(self):
        j = np.arange(self.width)
        return -math.pi + (j + 0.5) * (2.0 * math.pi / self.width)

    def phis(self):
        i = np.arange(self.height)
        return math.pi / 2 - (i + 0.5) * (math.pi / self.height)

    def directions(self):
        th = self.thetas()
        ph = self.phis()
        return direction_from_angles(th[None, :], ph[:, None])

    def angles_to_pixel(self, theta, phi):
        """Continuous (col, row) of given angles; theta wraps."""
        col = (np.asarray(theta) + math.pi) / (2.0 * math.pi) * self.width - 0.5
        row = (math.pi / 2 - np.asarray(phi)) / math.pi * self.height - 0.5
        return col, row


@dataclass(frozen=True)
class DistanceCandidates:
    """Strictly increasing sweep distances (meters)."""

    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        if d.ndim != 1 or d.size < 2:
            raise ValueError("need at least 2 candidate distances")
        if not np.all(np.diff(d) > 0):
            raise ValueError("candidate distances must be strictly increasing")
        if not np.all(d > 0):
            raise ValueError("candidate distances must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "distances", d)

    @classmethod
    def inverse_depth(cls, d_min=0.3, d_max=50.0, n_layers=32):
        """Candidates uniform in inverse distance (disparity-linear)."""
        inv = np.linspace(1.0 / d_min, 1.0 / d_max, n_layers)
        d = 1.0 / inv
        d[0] = d_min
        d[-1] = d_max
        return cls(d)

    @property
    def n_layers(self):
        return self.distances.size

    @property
    def d_min(self):
        return float(self.distances[0])

    @property
    def d_max(self):
        return float(self.distances[-1])

    def local_spacing(self, d):
        """Candidate spacing around distance d (half-sum of neighbors)."""
        d = np.asarray(d, dtype=np.float64)
        idx = np.clip(np.searchsorted(self.distances, d), 1,
                      self.n_layers - 1)
        return self.distances[idx] - self.distances[idx - 1]


@dataclass
class SphereSweepVolume:
    reference_id: int
    grid: SphericalGrid
    costs: np.ndarray            # (H, W, N)
    selected_camera: np.ndarray  # (H, W) camera ids, -1 where none
    valid: np.ndarray            # (H, W) reference FOV / selection mask


@dataclass
class DistanceMap:
    reference_id: int
    grid: SphericalGrid
    distance: np.ndarray    # (H, W) meters, SENTINEL where unestimated
    confidence: np.ndarray  # (H, W) in [0, 1]
    d_min: float
    d_max: float
    n_layers: int


def normalize_mean_intensity(image, target=0.5):
    """Scale an image so its mean intensity equals ``target``; keeps the
    nominal [0, 1] working range comparable across cameras."""
    img = np.asarray(image, dtype=np.float64)
    mean = img.mean()
    if mean <= 0.0:
        return img.copy()
    return img * (target / mean)


def _camera_derived(intr: Intrinsics):
    w1 = intr.w1
    zcap = w1 if w1 <= 1.0 else 1.0 / w1
    return np.array([w1, intr.w2, zcap], dtype=np.float64)


def _pack_cameras(rig: RigConfig, images=None):
    """Pack rig cameras (and optionally images) into kernel-ready arrays,
    ordered by position in the rig's camera list."""
    cams = rig.cameras
    c = len(cams)
    rot_wc = np.zeros((c, 3, 3))
    t_wc = np.zeros((c, 3))
    intr = np.zeros((c, 7))
    drv = np.zeros((c, 3))
    centers = np.zeros((c, 3))
    axes = np.zeros((c, 3))
    stack = None
    for k, cam in enumerate(cams):
        inv = invert(cam.pose)
        rot_wc[k] = inv.rotation
        t_wc[k] = inv.translation
        i = cam.intrinsics
        intr[k] = [i.fx, i.fy, i.cx, i.cy, i.alpha, i.xi, i.lam]
        drv[k] = _camera_derived(i)
        centers[k] = cam.center
        axes[k] = cam.axis
    if images is not None:
        shapes = {np.asarray(images[cam.camera_id]).shape for cam in cams}
        if len(shapes) != 1:
            raise ValueError("all camera images must share one shape")
        stack = np.ascontiguousarray(
            np.stack([np.asarray(images[cam.camera_id], dtype=np.float64)
                      for cam in cams]))
    return rot_wc, t_wc, intr, drv, centers, axes, stack


def sample_fisheye(image, camera, points):
    """Sample a camera's image at world points (rig frame); returns
    (colors, ok). Uses the faithful projection so fold-over regions of
    wide-alpha models never alias."""
    cam_from_rig = invert(camera.pose)
    pts_cam = transform(cam_from_rig, points)
    i = camera.intrinsics
    intr = np.array([i.fx, i.fy, i.cx, i.cy, i.alpha, i.xi, i.lam])
    u, v, ok = _npk.project_faithful(pts_cam, intr, _camera_derived(i))
    col, sok = _npk.bilinear_sample(np.asarray(image, dtype=np.float64), u, v)
    return col, ok & sok


def reference_mask(grid: SphericalGrid, camera, fov_deg=DEFAULT_FOV_DEG):
    """Grid pixels within the reference camera's field of view."""
    dirs = grid.directions()
    coscap = math.cos(math.radians(fov_deg) / 2.0)
    return dirs @ camera.axis >= coscap


def select_cameras(ref_id, dirs, rig: RigConfig, cands: DistanceCandidates):
    """Per-pixel sweep-camera choice: the non-reference camera seeing both
    probe points (nearest and farthest shell) under the widest angle.

    Returns (packed_index, camera_id) arrays; -1 where no camera sees
    both probes. Ties break to the lowest camera id.
    """
    ref = rig.camera(ref_id)
    d = np.asarray(dirs, dtype=np.float64)
    p_near = ref.center + cands.d_min * d
    p_far = ref.center + cands.d_max * d
    base = d[..., 0].shape
    best_cos = np.full(base, np.inf)
    best_idx = np.full(base, -1, dtype=np.int32)
    best_id = np.full(base, -1, dtype=np.int32)
    order = sorted(range(len(rig.cameras)),
                   key=lambda k: rig.cameras[k].camera_id)
    for k in order:
        cam = rig.cameras[k]
        if cam.camera_id == ref_id:
            continue
        cam_from_rig = invert(cam.pose)
        # visibility must match the warp: only faithfully projectable
        # probe points count as seen
        ok0 = in_invertible_domain(transform(cam_from_rig, p_near),
                                   cam.intrinsics)
        ok1 = in_invertible_domain(transform(cam_from_rig, p_far),
                                   cam.intrinsics)
        u0 = p_near - cam.center
        u1 = p_far - cam.center
        n0 = np.sqrt(u0[..., 0] ** 2 + u0[..., 1] ** 2 + u0[..., 2] ** 2)
        n1 = np.sqrt(u1[..., 0] ** 2 + u1[..., 1] ** 2 + u1[..., 2] ** 2)
        dot = (u0[..., 0] * u1[..., 0] + u0[..., 1] * u1[..., 1]
               + u0[..., 2] * u1[..., 2])
        with np.errstate(divide="ignore", invalid="ignore"):
            cosq = dot / (n0 * n1)
        seen = ok0 & ok1 & (n0 > 0.0) & (n1 > 0.0)
        score = np.where(seen, cosq, np.inf)
        better = score < best_cos  # smaller cosine = wider angle
        best_cos = np.where(better, score, best_cos)
        best_idx = np.where(better, np.int32(k), best_idx)
        best_id = np.where(better, np.int32(cam.camera_id), best_id)
    return best_idx, best_id


def select_camera(ref_id, coord: SphericalCoord, rig: RigConfig,
                  cands: DistanceCandidates):
    """Single-coordinate camera selection; raises NoVisibleCameraError
    when no candidate sees both probe points."""
    dirs = direction_from_angles(coord.theta, coord.phi)[None]
    _, cam_id = select_cameras(ref_id, dirs, rig, cands)
    cid = int(cam_id[0])
    if cid < 0:
        raise NoVisibleCameraError(
            f"no camera sees both sweep probes at {coord}")
    return cid


def build_volume(ref_image, images, rig: RigConfig, cands: DistanceCandidates,
                 grid: SphericalGrid, ref_id=None, fov_deg=DEFAULT_FOV_DEG,
                 workers=None):
    """Build the matching-cost volume for one reference camera.

    ``images`` maps camera id to an HxWx3 float image in [0, 1];
    ``ref_image`` is the reference camera's image (it may also appear in
    ``images``). Costs are L1 color distances against the reference
    resampled to the spherical grid; warps that no camera sees are filled
    with MAX_COST.
    """
    if ref_id is None:
        ref_id = rig.reference_ids[0]
    ref = rig.camera(ref_id)
    _accel.set_workers(workers)
    kern = _accel.get_kernels()

    norm_images = {cid: normalize_mean_intensity(img)
                   for cid, img in images.items()}
    norm_ref = normalize_mean_intensity(ref_image)

    dirs = np.ascontiguousarray(grid.directions())
    mask = reference_mask(grid, ref, fov_deg)
    ref_colors, ref_ok = sample_fisheye(norm_ref, ref, ref.center + dirs)
    mask = mask & ref_ok

    sel_idx, sel_id = select_cameras(ref_id, dirs, rig, cands)
    rot_wc, t_wc, intr, drv, _, _, stack = _pack_cameras(rig, norm_images)
    costs = kern.build_cost_volume(
        dirs, mask, np.ascontiguousarray(sel_idx),
        np.ascontiguousarray(ref_colors), ref.center.astype(np.float64),
        cands.distances.astype(np.float64), rot_wc, t_wc, intr, drv,
        stack, MAX_COST)
    vol = SphereSweepVolume(reference_id=ref_id, grid=grid, costs=costs,
                            selected_camera=np.where(mask, sel_id, -1),
                            valid=mask & (sel_idx >= 0))
    vol.guidance = ref_colors
    return vol


def bilateral_weight(image, x, y, m, n, sigma_i):
    """Color-similarity weight between pixel (x, y) and its (x+m, y+n)
    neighbor: exp(-|I(x,y)-I(x+m,y+n)|^2 / (2 sigma^2))."""
    img = np.asarray(image, dtype=np.float64)
    a = img[x, y]
    b = img[x + m, y + n]
    diff = np.atleast_1d(a - b)
    return float(np.exp(-np.sum(diff * diff) / (2.0 * sigma_i * sigma_i)))


def downsample(image, guide=None, sigma_i=DEFAULT_SIGMA_I, workers=None):
    """Halve an image with the edge-preserving bilateral kernel. Border
    taps are dropped from both the sum and the normalizer."""
    _accel.set_workers(workers)
    kern = _accel.get_kernels()
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if guide is None:
        guide = img if img.shape[2] == 3 else np.repeat(img, 3, axis=2)
    out = kern.downsample_costs(
        np.ascontiguousarray(img),
        np.ascontiguousarray(np.asarray(guide, dtype=np.float64)), sigma_i)
    return out[..., 0] if squeeze else out


def _pyramid_work(h, w, n, levels):
    """Number of tap multiply-adds the pyramid performs; linear in h*w."""
    work = 0
    fh, fw = h, w
    for _ in range(levels):
        h2, w2 = (fh + 1) // 2, (fw + 1) // 2
        taps_r = sum(min(2 * r + 1 + 1, fh) - max(2 * r - 1, 0)
                     for r in range(h2))
        taps_c = sum(min(2 * c + 1 + 1, fw) - max(2 * c - 1, 0)
                     for c in range(w2))
        work += taps_r * taps_c * n          # downsample taps
        work += fh * fw * 4 * n              # guided upsample taps
        fh, fw = h2, w2
    return work


def aggregate_costs(costs, guidance, sigma_i=DEFAULT_SIGMA_I,
                    n_levels=DEFAULT_LEVELS, workers=None):
    """Down/up bilateral pyramid over every cost layer; returns
    (aggregated, work) where work counts tap operations (O(pixels))."""
    _accel.set_workers(workers)
    kern = _accel.get_kernels()
    costs = np.ascontiguousarray(costs, dtype=np.float64)
    guidance = np.ascontiguousarray(guidance, dtype=np.float64)
    h, w, n = costs.shape

    guides = [guidance]
    level_costs = costs
    for _ in range(n_levels):
        g = guides[-1]
        level_costs = kern.downsample_costs(level_costs, g, sigma_i)
        guides.append(kern.downsample_guide(g, sigma_i))
    agg = level_costs
    for lvl in range(n_levels - 1, -1, -1):
        agg = kern.upsample_costs(agg, guides[lvl], guides[lvl + 1], sigma_i)
    return agg, _pyramid_work(h, w, n, n_levels)


def aggregate(volume: SphereSweepVolume, guidance_image,
              sigma_i=DEFAULT_SIGMA_I, n_levels=DEFAULT_LEVELS, workers=None):
    """Edge-preserving aggregation of a sweep volume (new volume returned)."""
    agg, work = aggregate_costs(volume.costs, guidance_image, sigma_i,
                                n_levels, workers)
    out = SphereSweepVolume(reference_id=volume.reference_id,
                            grid=volume.grid, costs=agg,
                            selected_camera=volume.selected_camera,
                            valid=volume.valid)
    out.aggregation_work = work
    if hasattr(volume, "guidance"):
        out.guidance = volume.guidance
    return out


def extract_distance(volume: SphereSweepVolume,
                     cands: DistanceCandidates) -> DistanceMap:
    """Winner-takes-all over layers plus quadratic refinement of the
    minimum; fractional indices are mapped to meters by interpolating in
    inverse distance. Border-layer minima skip refinement; all-MAX_COST
    pixels get the sentinel."""
    costs = volume.costs
    h, w, n = costs.shape
    idx = np.argmin(costs, axis=2)
    rows, cols = np.indices((h, w))
    c0 = costs[rows, cols, idx]

    interior = (idx > 0) & (idx < n - 1)
    im = np.clip(idx - 1, 0, n - 1)
    ip = np.clip(idx + 1, 0, n - 1)
    cm = costs[rows, cols, im]
    cp = costs[rows, cols, ip]
    denom = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(denom > 0.0, (cm - cp) / (2.0 * denom), 0.0)
    delta = np.clip(delta, -1.0, 1.0)
    frac = idx + np.where(interior, delta, 0.0)

    inv_d = 1.0 / cands.distances
    lo = np.clip(np.floor(frac).astype(np.int64), 0, n - 2)
    t = frac - lo
    inv_star = inv_d[lo] * (1.0 - t) + inv_d[lo + 1] * t
    dist = 1.0 / inv_star

    # strict margin below MAX_COST: aggregation of all-MAX pixels can land
    # an ulp away from the exact fill value
    estimated = volume.valid & (c0 < MAX_COST - 1e-9)
    dist = np.where(estimated, dist, SENTINEL)
    conf = np.where(estimated, np.clip(1.0 - c0 / MAX_COST, 0.0, 1.0), 0.0)
    return DistanceMap(reference_id=volume.reference_id, grid=volume.grid,
                       distance=dist, confidence=conf,
                       d_min=cands.d_min, d_max=cands.d_max,
                       n_layers=cands.n_layers)
