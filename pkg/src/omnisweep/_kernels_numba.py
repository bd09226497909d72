"""Numba-jitted implementations of the hot kernels.

Each kernel mirrors the numpy fallback in ``_kernels_numpy`` operation by
operation; parallel loops write disjoint output cells so results are
identical for any thread count.
"""

import numpy as np
from numba import njit, prange

EPS_PHI = 1e-9

IS_NUMBA = True


@njit(cache=True)
def _project_faithful_scalar(x, y, z, fx, fy, cx, cy, xi, lam, w1, w2, zcap):
    r2 = x * x + y * y
    d0 = np.sqrt(r2 + z * z)
    if not (z > -w2 * d0):
        return -1.0, -1.0, False
    t1 = xi * d0 + z
    d1 = np.sqrt(r2 + t1 * t1)
    t2 = xi * d0 + lam * d1 + z
    d2 = np.sqrt(r2 + t2 * t2)
    phi = z + xi * d0 + lam * d1 + w1 * d2
    if not (phi > EPS_PHI):
        return -1.0, -1.0, False
    if not (t2 > -zcap * d2):
        return -1.0, -1.0, False
    return fx * x / phi + cx, fy * y / phi + cy, True


@njit(cache=True)
def _bilinear_scalar(img, u, v):
    h = img.shape[0]
    w = img.shape[1]
    if not (u >= 0.0 and v >= 0.0 and u <= w - 1.0 and v <= h - 1.0):
        return 0.0, 0.0, 0.0, False
    x0 = int(np.floor(u))
    if x0 > w - 2:
        x0 = w - 2
    if x0 < 0:
        x0 = 0
    y0 = int(np.floor(v))
    if y0 > h - 2:
        y0 = h - 2
    if y0 < 0:
        y0 = 0
    x1 = x0 + 1
    y1 = y0 + 1
    gx = u - x0
    gy = v - y0
    r = (img[y0, x0, 0] * (1.0 - gx) + img[y0, x1, 0] * gx) * (1.0 - gy) \
        + (img[y1, x0, 0] * (1.0 - gx) + img[y1, x1, 0] * gx) * gy
    g = (img[y0, x0, 1] * (1.0 - gx) + img[y0, x1, 1] * gx) * (1.0 - gy) \
        + (img[y1, x0, 1] * (1.0 - gx) + img[y1, x1, 1] * gx) * gy
    b = (img[y0, x0, 2] * (1.0 - gx) + img[y0, x1, 2] * gx) * (1.0 - gy) \
        + (img[y1, x0, 2] * (1.0 - gx) + img[y1, x1, 2] * gx) * gy
    return r, g, b, True


@njit(cache=True, parallel=True)
def build_cost_volume(dirs, valid, sel, ref_colors, ref_center, dists,
                      cam_rot_wc, cam_t_wc, cam_intr, cam_drv, images,
                      max_cost):
    h, w = valid.shape
    n = dists.shape[0]
    costs = np.full((h, w, n), max_cost, dtype=np.float64)
    for row in prange(h):
        for col in range(w):
            if not valid[row, col]:
                continue
            ci = sel[row, col]
            if ci < 0:
                continue
            dx = dirs[row, col, 0]
            dy = dirs[row, col, 1]
            dz = dirs[row, col, 2]
            rr = ref_colors[row, col, 0]
            rg = ref_colors[row, col, 1]
            rb = ref_colors[row, col, 2]
            fx = cam_intr[ci, 0]
            fy = cam_intr[ci, 1]
            cx = cam_intr[ci, 2]
            cy = cam_intr[ci, 3]
            xi = cam_intr[ci, 5]
            lam = cam_intr[ci, 6]
            w1 = cam_drv[ci, 0]
            w2 = cam_drv[ci, 1]
            zcap = cam_drv[ci, 2]
            r00 = cam_rot_wc[ci, 0, 0]
            r01 = cam_rot_wc[ci, 0, 1]
            r02 = cam_rot_wc[ci, 0, 2]
            r10 = cam_rot_wc[ci, 1, 0]
            r11 = cam_rot_wc[ci, 1, 1]
            r12 = cam_rot_wc[ci, 1, 2]
            r20 = cam_rot_wc[ci, 2, 0]
            r21 = cam_rot_wc[ci, 2, 1]
            r22 = cam_rot_wc[ci, 2, 2]
            tx = cam_t_wc[ci, 0]
            ty = cam_t_wc[ci, 1]
            tz = cam_t_wc[ci, 2]
            for i in range(n):
                px = ref_center[0] + dists[i] * dx
                py = ref_center[1] + dists[i] * dy
                pz = ref_center[2] + dists[i] * dz
                qx = r00 * px + r01 * py + r02 * pz + tx
                qy = r10 * px + r11 * py + r12 * pz + ty
                qz = r20 * px + r21 * py + r22 * pz + tz
                u, v, ok = _project_faithful_scalar(
                    qx, qy, qz, fx, fy, cx, cy, xi, lam, w1, w2, zcap)
                if ok:
                    cr, cg, cb, sok = _bilinear_scalar(images[ci], u, v)
                    if sok:
                        costs[row, col, i] = (np.abs(cr - rr)
                                              + np.abs(cg - rg)
                                              + np.abs(cb - rb))
    return costs


@njit(cache=True, parallel=True)
def downsample_guide(guide, sigma):
    h, w, ch = guide.shape
    h2 = (h + 1) // 2
    w2 = (w + 1) // 2
    out = np.zeros((h2, w2, ch))
    for orow in prange(h2):
        r = 2 * orow
        for ocol in range(w2):
            c = 2 * ocol
            g0 = guide[r, c, 0]
            g1 = guide[r, c, 1]
            g2 = guide[r, c, 2]
            tau = 0.0
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for m in range(-1, 2):
                rr = r + m
                if rr < 0 or rr >= h:
                    continue
                for nn in range(-1, 2):
                    cc = c + nn
                    if cc < 0 or cc >= w:
                        continue
                    d0 = guide[rr, cc, 0] - g0
                    d1 = guide[rr, cc, 1] - g1
                    d2 = guide[rr, cc, 2] - g2
                    wgt = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                                 / (2.0 * sigma * sigma))
                    tau += wgt
                    a0 += wgt * guide[rr, cc, 0]
                    a1 += wgt * guide[rr, cc, 1]
                    a2 += wgt * guide[rr, cc, 2]
            out[orow, ocol, 0] = a0 / tau
            out[orow, ocol, 1] = a1 / tau
            out[orow, ocol, 2] = a2 / tau
    return out


@njit(cache=True, parallel=True)
def downsample_costs(costs, guide, sigma):
    h, w = guide.shape[:2]
    n = costs.shape[2]
    h2 = (h + 1) // 2
    w2 = (w + 1) // 2
    out = np.zeros((h2, w2, n))
    for orow in prange(h2):
        wloc = np.empty(9)
        rloc = np.empty(9, dtype=np.int64)
        cloc = np.empty(9, dtype=np.int64)
        for ocol in range(w2):
            r = 2 * orow
            c = 2 * ocol
            g0 = guide[r, c, 0]
            g1 = guide[r, c, 1]
            g2 = guide[r, c, 2]
            tau = 0.0
            k = 0
            for m in range(-1, 2):
                rr = r + m
                if rr < 0 or rr >= h:
                    continue
                for nn in range(-1, 2):
                    cc = c + nn
                    if cc < 0 or cc >= w:
                        continue
                    d0 = guide[rr, cc, 0] - g0
                    d1 = guide[rr, cc, 1] - g1
                    d2 = guide[rr, cc, 2] - g2
                    wgt = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                                 / (2.0 * sigma * sigma))
                    tau += wgt
                    wloc[k] = wgt
                    rloc[k] = rr
                    cloc[k] = cc
                    k += 1
            for i in range(n):
                acc = 0.0
                for j in range(k):
                    acc += wloc[j] * costs[rloc[j], cloc[j], i]
                out[orow, ocol, i] = acc / tau
    return out


@njit(cache=True, parallel=True)
def upsample_costs(coarse, fine_guide, coarse_guide, sigma):
    h, w = fine_guide.shape[:2]
    h2, w2 = coarse.shape[:2]
    n = coarse.shape[2]
    out = np.zeros((h, w, n))
    for row in prange(h):
        r0 = row // 2
        if r0 > h2 - 1:
            r0 = h2 - 1
        r1 = r0 + 1
        if r1 > h2 - 1:
            r1 = h2 - 1
        for col in range(w):
            c0 = col // 2
            if c0 > w2 - 1:
                c0 = w2 - 1
            c1 = c0 + 1
            if c1 > w2 - 1:
                c1 = w2 - 1
            f0 = fine_guide[row, col, 0]
            f1 = fine_guide[row, col, 1]
            f2 = fine_guide[row, col, 2]
            # tap order matches the numpy path: (r0,c0),(r0,c1),(r1,c0),(r1,c1)
            d0 = f0 - coarse_guide[r0, c0, 0]
            d1 = f1 - coarse_guide[r0, c0, 1]
            d2 = f2 - coarse_guide[r0, c0, 2]
            w00 = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                         / (2.0 * sigma * sigma))
            d0 = f0 - coarse_guide[r0, c1, 0]
            d1 = f1 - coarse_guide[r0, c1, 1]
            d2 = f2 - coarse_guide[r0, c1, 2]
            w01 = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                         / (2.0 * sigma * sigma))
            d0 = f0 - coarse_guide[r1, c0, 0]
            d1 = f1 - coarse_guide[r1, c0, 1]
            d2 = f2 - coarse_guide[r1, c0, 2]
            w10 = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                         / (2.0 * sigma * sigma))
            d0 = f0 - coarse_guide[r1, c1, 0]
            d1 = f1 - coarse_guide[r1, c1, 1]
            d2 = f2 - coarse_guide[r1, c1, 2]
            w11 = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2)
                         / (2.0 * sigma * sigma))
            wsum = w00 + w01 + w10 + w11
            if wsum < 1e-12:
                for i in range(n):
                    p = 0.25 * coarse[r0, c0, i]
                    p += 0.25 * coarse[r0, c1, i]
                    p += 0.25 * coarse[r1, c0, i]
                    p += 0.25 * coarse[r1, c1, i]
                    out[row, col, i] = p
            else:
                for i in range(n):
                    acc = w00 * coarse[r0, c0, i]
                    acc += w01 * coarse[r0, c1, i]
                    acc += w10 * coarse[r1, c0, i]
                    acc += w11 * coarse[r1, c1, i]
                    out[row, col, i] = acc / wsum
    return out


@njit(cache=True, parallel=True)
def compose_panorama_kernel(dirs, dist, cam_rot_wc, cam_t_wc, cam_intr,
                            cam_drv, cam_center, cam_axis, images,
                            psi0, fov_half, feather_frac):
    h, w = dist.shape
    c = images.shape[0]
    rgb = np.zeros((h, w, 3))
    wsum = np.zeros((h, w))
    covered = np.zeros((h, w), dtype=np.bool_)
    knee = (1.0 - feather_frac) * fov_half
    denom = fov_half - knee
    if denom <= 0.0:
        denom = 1e-12
    for row in prange(h):
        wloc = np.empty(c)
        cloc = np.empty((c, 3))
        for col in range(w):
            px = dist[row, col] * dirs[row, col, 0]
            py = dist[row, col] * dirs[row, col, 1]
            pz = dist[row, col] * dirs[row, col, 2]
            for ci in range(c):
                wloc[ci] = 0.0
                cloc[ci, 0] = 0.0
                cloc[ci, 1] = 0.0
                cloc[ci, 2] = 0.0
                relx = px - cam_center[ci, 0]
                rely = py - cam_center[ci, 1]
                relz = pz - cam_center[ci, 2]
                nrm = np.sqrt(relx * relx + rely * rely + relz * relz)
                if not (nrm > 0.0):
                    continue
                cospsi = (relx * cam_axis[ci, 0] + rely * cam_axis[ci, 1]
                          + relz * cam_axis[ci, 2]) / nrm
                if cospsi > 1.0:
                    cospsi = 1.0
                elif cospsi < -1.0:
                    cospsi = -1.0
                psi = np.arccos(cospsi)
                if psi > fov_half:
                    continue
                qx = (cam_rot_wc[ci, 0, 0] * px + cam_rot_wc[ci, 0, 1] * py
                      + cam_rot_wc[ci, 0, 2] * pz + cam_t_wc[ci, 0])
                qy = (cam_rot_wc[ci, 1, 0] * px + cam_rot_wc[ci, 1, 1] * py
                      + cam_rot_wc[ci, 1, 2] * pz + cam_t_wc[ci, 1])
                qz = (cam_rot_wc[ci, 2, 0] * px + cam_rot_wc[ci, 2, 1] * py
                      + cam_rot_wc[ci, 2, 2] * pz + cam_t_wc[ci, 2])
                u, v, ok = _project_faithful_scalar(
                    qx, qy, qz,
                    cam_intr[ci, 0], cam_intr[ci, 1], cam_intr[ci, 2],
                    cam_intr[ci, 3], cam_intr[ci, 5], cam_intr[ci, 6],
                    cam_drv[ci, 0], cam_drv[ci, 1], cam_drv[ci, 2])
                if not ok:
                    continue
                cr, cg, cb, sok = _bilinear_scalar(images[ci], u, v)
                if not sok:
                    continue
                feather = (fov_half - psi) / denom
                if feather > 1.0:
                    feather = 1.0
                elif feather < 0.0:
                    feather = 0.0
                wgt = np.exp(-(psi / psi0) ** 2) * feather
                wloc[ci] = wgt
                cloc[ci, 0] = cr
                cloc[ci, 1] = cg
                cloc[ci, 2] = cb
            total = 0.0
            for ci in range(c):
                total += wloc[ci]
            if total > 0.0:
                covered[row, col] = True
                s = 0.0
                for ci in range(c):
                    wn = wloc[ci] / total
                    rgb[row, col, 0] += wn * cloc[ci, 0]
                    rgb[row, col, 1] += wn * cloc[ci, 1]
                    rgb[row, col, 2] += wn * cloc[ci, 2]
                    s += wn
                wsum[row, col] = s
    return rgb, wsum, covered
