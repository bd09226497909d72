"""Pure-numpy implementations of the hot kernels.

Semantics (operation order, border handling, fallback rules) mirror the
numba kernels in ``_kernels_numba``; the test suite asserts both paths
agree. This module is always importable and serves as the fallback when
numba is disabled or missing.
"""

import numpy as np

EPS_PHI = 1e-9

IS_NUMBA = False


def project_faithful(points, intr, drv):
    """Project camera-frame points, valid only where the projection is
    faithful (invertible). ``intr`` = (fx,fy,cx,cy,alpha,xi,lam), ``drv``
    = (w1, w2, zcap). Returns (u, v, ok)."""
    fx, fy, cx, cy, _alpha, xi, lam = intr
    w1, w2, zcap = drv
    x = points[..., 0]
    y = points[..., 1]
    z = points[..., 2]
    r2 = x * x + y * y
    d0 = np.sqrt(r2 + z * z)
    ok = z > -w2 * d0
    t1 = xi * d0 + z
    d1 = np.sqrt(r2 + t1 * t1)
    t2 = xi * d0 + lam * d1 + z
    d2 = np.sqrt(r2 + t2 * t2)
    phi = z + xi * d0 + lam * d1 + w1 * d2
    ok = ok & (phi > EPS_PHI) & (t2 > -zcap * d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(ok, fx * x / phi + cx, -1.0)
        v = np.where(ok, fy * y / phi + cy, -1.0)
    return u, v, ok


def bilinear_sample(img, u, v):
    """Bilinearly sample an HxWxC image at continuous (u=col, v=row).

    Returns (colors, ok); samples outside [0, W-1]x[0, H-1] are invalid.
    """
    h, w = img.shape[:2]
    ok = (u >= 0.0) & (v >= 0.0) & (u <= w - 1.0) & (v <= h - 1.0)
    uu = np.where(ok, u, 0.0)
    vv = np.where(ok, v, 0.0)
    x0 = np.clip(np.floor(uu).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(vv).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = uu - x0
    fy = vv - y0
    c00 = img[y0, x0]
    c01 = img[y0, x1]
    c10 = img[y1, x0]
    c11 = img[y1, x1]
    fx = fx[..., None]
    fy = fy[..., None]
    col = (c00 * (1.0 - fx) + c01 * fx) * (1.0 - fy) \
        + (c10 * (1.0 - fx) + c11 * fx) * fy
    return col, ok


def build_cost_volume(dirs, valid, sel, ref_colors, ref_center, dists,
                      cam_rot_wc, cam_t_wc, cam_intr, cam_drv, images,
                      max_cost):
    """L1 matching costs of warping each selected camera onto the
    reference spherical grid at every candidate distance.

    dirs: (H,W,3) unit directions in the rig frame; valid: (H,W) grid
    mask; sel: (H,W) packed camera index (-1 where none); images:
    (C,Hc,Wc,3) photometrically normalized colors.
    """
    h, w = valid.shape
    n = dists.shape[0]
    costs = np.full((h, w, n), max_cost, dtype=np.float64)
    usable = valid & (sel >= 0)
    for ci in range(images.shape[0]):
        mask = usable & (sel == ci)
        if not mask.any():
            continue
        d = dirs[mask]
        rc = ref_colors[mask]
        rot = cam_rot_wc[ci]
        trans = cam_t_wc[ci]
        for i in range(n):
            pts = ref_center + dists[i] * d
            pts_cam = pts @ rot.T + trans
            u, v, ok = project_faithful(pts_cam, cam_intr[ci], cam_drv[ci])
            col, sok = bilinear_sample(images[ci], u, v)
            ok = ok & sok
            cost = np.abs(col - rc).sum(axis=-1)
            costs[mask, i] = np.where(ok, cost, max_cost)
    return costs


def _tap_weights(guide, center, rows, cols, row_ok, col_ok, sigma):
    g = guide[rows][:, cols]
    diff = g - center
    w = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma * sigma))
    return np.where(row_ok[:, None] & col_ok[None, :], w, 0.0)


def downsample_guide(guide, sigma):
    """Halve a guidance image with self-guided bilateral weights."""
    h, w = guide.shape[:2]
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    cr = 2 * np.arange(h2)
    cc = 2 * np.arange(w2)
    center = guide[cr][:, cc]
    acc = np.zeros((h2, w2, guide.shape[2]))
    tau = np.zeros((h2, w2))
    for m in (-1, 0, 1):
        rows = cr + m
        row_ok = (rows >= 0) & (rows < h)
        rows = np.clip(rows, 0, h - 1)
        for nn in (-1, 0, 1):
            cols = cc + nn
            col_ok = (cols >= 0) & (cols < w)
            cols = np.clip(cols, 0, w - 1)
            wgt = _tap_weights(guide, center, rows, cols, row_ok, col_ok,
                               sigma)
            tau += wgt
            acc += wgt[..., None] * guide[rows][:, cols]
    return acc / tau[..., None]


def downsample_costs(costs, guide, sigma):
    """Halve every cost layer using bilateral weights from the guidance."""
    h, w = guide.shape[:2]
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    cr = 2 * np.arange(h2)
    cc = 2 * np.arange(w2)
    center = guide[cr][:, cc]
    acc = np.zeros((h2, w2, costs.shape[2]))
    tau = np.zeros((h2, w2))
    for m in (-1, 0, 1):
        rows = cr + m
        row_ok = (rows >= 0) & (rows < h)
        rows = np.clip(rows, 0, h - 1)
        for nn in (-1, 0, 1):
            cols = cc + nn
            col_ok = (cols >= 0) & (cols < w)
            cols = np.clip(cols, 0, w - 1)
            wgt = _tap_weights(guide, center, rows, cols, row_ok, col_ok,
                               sigma)
            tau += wgt
            acc += wgt[..., None] * costs[rows][:, cols]
    return acc / tau[..., None]


def upsample_costs(coarse, fine_guide, coarse_guide, sigma):
    """Guided upsampling: each fine pixel blends its 4 nearest coarse
    pixels with bilateral weights against the fine guidance; degenerate
    (all-zero) weights fall back to a plain average."""
    h, w = fine_guide.shape[:2]
    h2, w2 = coarse.shape[:2]
    r0 = np.minimum(np.arange(h) // 2, h2 - 1)
    r1 = np.minimum(r0 + 1, h2 - 1)
    c0 = np.minimum(np.arange(w) // 2, w2 - 1)
    c1 = np.minimum(c0 + 1, w2 - 1)
    acc = np.zeros((h, w, coarse.shape[2]))
    wsum = np.zeros((h, w))
    plain = np.zeros_like(acc)
    for rows, cols in ((r0, c0), (r0, c1), (r1, c0), (r1, c1)):
        g = coarse_guide[rows][:, cols]
        diff = fine_guide - g
        wgt = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * sigma * sigma))
        wsum += wgt
        vals = coarse[rows][:, cols]
        acc += wgt[..., None] * vals
        plain += 0.25 * vals
    low = wsum < 1e-12
    out = np.where(low[..., None], plain,
                   acc / np.where(low, 1.0, wsum)[..., None])
    return out


def compose_panorama_kernel(dirs, dist, cam_rot_wc, cam_t_wc, cam_intr,
                            cam_drv, cam_center, cam_axis, images,
                            psi0, fov_half, feather_frac):
    """Distance-aware blend of all cameras on the panorama grid.

    Returns (rgb, weight_sum, covered); weight_sum holds the sum of the
    normalized blend weights at covered pixels (== 1 up to rounding).
    """
    h, w = dist.shape
    c = images.shape[0]
    pts = dist[..., None] * dirs
    weights = np.zeros((c, h, w))
    colors = np.zeros((c, h, w, 3))
    knee = (1.0 - feather_frac) * fov_half
    for ci in range(c):
        rel = pts - cam_center[ci]
        nrm = np.sqrt(np.sum(rel * rel, axis=-1))
        safe = np.where(nrm > 0.0, nrm, 1.0)
        cospsi = (rel @ cam_axis[ci]) / safe
        psi = np.arccos(np.clip(cospsi, -1.0, 1.0))
        vis = (psi <= fov_half) & (nrm > 0.0)
        pts_cam = pts @ cam_rot_wc[ci].T + cam_t_wc[ci]
        u, v, ok = project_faithful(pts_cam, cam_intr[ci], cam_drv[ci])
        col, sok = bilinear_sample(images[ci], u, v)
        ok = ok & sok & vis
        feather = np.clip((fov_half - psi) / (fov_half - knee), 0.0, 1.0)
        wgt = np.exp(-(psi / psi0) ** 2) * feather
        weights[ci] = np.where(ok, wgt, 0.0)
        colors[ci] = np.where(ok[..., None], col, 0.0)
    total = weights.sum(axis=0)
    covered = total > 0.0
    safe_total = np.where(covered, total, 1.0)
    rgb = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    for ci in range(c):
        wn = weights[ci] / safe_total
        rgb += wn[..., None] * colors[ci]
        wsum += wn
    rgb[~covered] = 0.0
    wsum[~covered] = 0.0
    return rgb, wsum, covered
