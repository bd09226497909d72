"""Distance-aware 360 panorama stitching.

Fuses the per-reference distance maps into one map at the rig origin
(splatting, nearer-wins collisions, confidence-weighted diffusion
inpainting), then composes the panorama by projecting every camera onto
the fused geometry and blending with weights that favor pixels near each
camera's optical axis.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .rig import RigConfig
from .sphere_sweep import (DEFAULT_FOV_DEG, DEFAULT_LEVELS, DEFAULT_SIGMA_I,
                           SENTINEL, DistanceCandidates, DistanceMap,
                           SphericalGrid, aggregate, build_volume,
                           extract_distance, _pack_cameras)

INPAINT_MAX_ITERS = 50
INPAINT_TOL_FACTOR = 1e-4


@dataclass
class Panorama:
    """Equirectangular RGB image (width = 2 * height) plus coverage."""

    pixels: np.ndarray
    coverage_mask: np.ndarray

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if w != 2 * h:
            raise ValueError("panorama width must be twice its height")
        if self.coverage_mask.shape != (h, w):
            raise ValueError("coverage mask must match the image")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass
class StitchParams:
    grid_size: tuple = (512, 256)
    pano_size: tuple = (2048, 1024)
    sigma_i: float = DEFAULT_SIGMA_I
    n_levels: int = DEFAULT_LEVELS
    psi0_deg: float = 60.0
    feather: float = 0.05
    fov_deg: float = DEFAULT_FOV_DEG
    workers: int | None = None


@dataclass
class StitchResult:
    panorama: Panorama
    fused: DistanceMap
    distance_maps: list
    timings: dict
    weight_sum: np.ndarray


def fuse_distance_maps(maps, rig: RigConfig,
                       out_grid: SphericalGrid | None = None) -> DistanceMap:
    """Fuse reference distance maps into one map at the rig origin.

    Every estimated source pixel is lifted to its world point and splatted
    into the output grid; collisions keep the nearer distance (ties keep
    the lower reference id). Holes are filled by confidence-weighted
    4-neighbor diffusion that never leaves [d_min, d_max].
    """
    maps = sorted(maps, key=lambda m: m.reference_id)
    if not maps:
        raise ValueError("need at least one distance map")
    grid = out_grid or maps[0].grid
    h, w = grid.height, grid.width
    d_min = min(m.d_min for m in maps)
    d_max = max(m.d_max for m in maps)

    dist = np.full((h, w), np.inf)
    conf = np.zeros((h, w))
    for m in maps:
        ref = rig.camera(m.reference_id)
        dirs = m.grid.directions()
        est = m.distance > 0
        if not est.any():
            continue
        pts = ref.center + m.distance[est, None] * dirs[est]
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        r = np.clip(r, d_min, d_max)
        theta = np.arctan2(pts[:, 0], pts[:, 2])
        phi = np.arcsin(np.clip(pts[:, 1] / np.where(r > 0, r, 1.0),
                                -1.0, 1.0))
        col = np.floor((theta + math.pi) / (2.0 * math.pi) * w).astype(int)
        col = np.clip(col, 0, w - 1)
        row = np.floor((math.pi / 2 - phi) / math.pi * h).astype(int)
        row = np.clip(row, 0, h - 1)
        flat = row * w + col
        # nearest candidate per target cell, stable for deterministic ties
        order = np.lexsort((np.arange(flat.size), r, flat))
        flat_sorted = flat[order]
        first = np.ones(flat_sorted.size, dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        pick = order[first]
        tgt = flat[pick]
        better = r[pick] < dist.ravel()[tgt]
        tgt = tgt[better]
        dist.ravel()[tgt] = r[pick][better]
        conf.ravel()[tgt] = m.confidence[est][pick][better]

    filled = np.isfinite(dist)
    dist = np.where(filled, dist, SENTINEL)
    dist, conf = _inpaint(dist, conf, d_max)
    return DistanceMap(reference_id=-1, grid=grid, distance=dist,
                       confidence=conf, d_min=d_min, d_max=d_max,
                       n_layers=maps[0].n_layers)


def _inpaint(dist, conf, d_max, max_iters=INPAINT_MAX_ITERS):
    """Confidence-weighted Jacobi diffusion into sentinel pixels; source
    pixels stay fixed. Stops when the largest update falls below
    ``INPAINT_TOL_FACTOR * d_max`` and no new pixels were filled."""
    dist = dist.copy()
    conf = conf.copy()
    holes = dist == SENTINEL
    if not holes.any():
        return dist, conf
    tol = INPAINT_TOL_FACTOR * d_max
    for _ in range(max_iters):
        has = dist != SENTINEL
        vals = np.where(has, dist, 0.0)
        wgts = np.where(has, conf, 0.0)
        acc = np.zeros_like(dist)
        wacc = np.zeros_like(dist)
        cacc = np.zeros_like(dist)
        # horizontal neighbors wrap in theta
        for shift in (1, -1):
            acc += np.roll(vals * wgts, shift, axis=1)
            wacc += np.roll(wgts, shift, axis=1)
            cacc += np.roll(wgts * conf, shift, axis=1)
        # vertical neighbors clamp at the poles
        acc[1:] += (vals * wgts)[:-1]
        wacc[1:] += wgts[:-1]
        cacc[1:] += (wgts * conf)[:-1]
        acc[:-1] += (vals * wgts)[1:]
        wacc[:-1] += wgts[1:]
        cacc[:-1] += (wgts * conf)[1:]

        can = holes & (wacc > 0.0)
        if not can.any():
            break
        new_vals = acc[can] / wacc[can]
        old = dist[can]
        had = old != SENTINEL
        delta = np.abs(new_vals[had] - old[had]).max() if had.any() else np.inf
        grew = np.count_nonzero(~had) > 0
        dist[can] = new_vals
        conf[can] = cacc[can] / wacc[can]
        if not grew and delta < tol:
            break
    return dist, conf


def _bilinear_wrap(img, col, row):
    """Bilinear sample with horizontal wrap and vertical clamp."""
    h, w = img.shape[:2]
    c0 = np.floor(col).astype(np.int64)
    r0 = np.floor(row).astype(np.int64)
    fc = col - c0
    fr = row - r0
    c1 = (c0 + 1) % w
    c0 = c0 % w
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    v00 = img[r0c, c0]
    v01 = img[r0c, c1]
    v10 = img[r1c, c0]
    v11 = img[r1c, c1]
    return (v00 * (1 - fc) + v01 * fc) * (1 - fr) \
        + (v10 * (1 - fc) + v11 * fc) * fr


def compose_panorama(images, fused: DistanceMap, rig: RigConfig,
                     out_size=(2048, 1024), psi0_deg=60.0, feather=0.05,
                     fov_deg=DEFAULT_FOV_DEG, workers=None):
    """Blend all cameras onto the panorama grid at the fused geometry.

    Blend weight per camera: exp(-(psi/psi0)^2) faded to zero over the
    last ``feather`` fraction of the field of view, where psi is the
    angular displacement from that camera's optical axis. Returns
    (Panorama, weight_sum) with weight_sum the per-pixel sum of the
    normalized weights (1 where covered).
    """
    w, h = out_size
    grid = SphericalGrid(w, h)
    _accel.set_workers(workers)
    kern = _accel.get_kernels()

    dirs = np.ascontiguousarray(grid.directions())
    th = grid.thetas()
    ph = grid.phis()
    col, row = fused.grid.angles_to_pixel(th[None, :], ph[:, None])
    col = np.broadcast_to(col, (h, w)).astype(np.float64)
    row = np.broadcast_to(row, (h, w)).astype(np.float64)
    src = np.where(fused.distance > 0, fused.distance, fused.d_max)
    dist = np.ascontiguousarray(_bilinear_wrap(src, col, row))

    rot_wc, t_wc, intr, drv, centers, axes, stack = _pack_cameras(rig, images)
    rgb, wsum, covered = kern.compose_panorama_kernel(
        dirs, dist, rot_wc, t_wc, intr, drv, centers, axes, stack,
        math.radians(psi0_deg), math.radians(fov_deg) / 2.0, feather)
    return Panorama(pixels=rgb, coverage_mask=covered), wsum


def stitch(images, rig: RigConfig, cands: DistanceCandidates,
           params: StitchParams | None = None) -> StitchResult:
    """Full pipeline: two reference sweeps, aggregation, extraction,
    fusion and composition, with per-stage wall-clock timings."""
    params = params or StitchParams()
    grid = SphericalGrid(*params.grid_size)
    timings = {}
    maps = []
    for ref_id in rig.reference_ids:
        t0 = time.perf_counter()
        vol = build_volume(images[ref_id], images, rig, cands, grid,
                           ref_id=ref_id, fov_deg=params.fov_deg,
                           workers=params.workers)
        timings[f"volume_ref{ref_id}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        agg = aggregate(vol, vol.guidance, sigma_i=params.sigma_i,
                        n_levels=params.n_levels, workers=params.workers)
        timings[f"aggregate_ref{ref_id}"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        maps.append(extract_distance(agg, cands))
        timings[f"extract_ref{ref_id}"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fused = fuse_distance_maps(maps, rig)
    timings["fuse"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    pano, wsum = compose_panorama(images, fused, rig,
                                  out_size=params.pano_size,
                                  psi0_deg=params.psi0_deg,
                                  feather=params.feather,
                                  fov_deg=params.fov_deg,
                                  workers=params.workers)
    timings["compose"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())
    return StitchResult(panorama=pano, fused=fused, distance_maps=maps,
                        timings=timings, weight_sum=wsum)


def psnr(a, b, mask=None, peak=1.0):
    """Peak signal-to-noise ratio between two images over a mask."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if mask is not None:
        a = a[mask]
        b = b[mask]
    mse = np.mean((a - b) ** 2)
    if mse <= 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
