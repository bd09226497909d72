"""File IO: PFM float maps (little-endian), PNG images, JSON sidecars."""

from __future__ import annotations

import json

import numpy as np
from PIL import Image


def write_pfm(path, data):
    """Write a 2D (grayscale, "Pf") or HxWx3 (color, "PF") float32 map.

    Rows are stored bottom-up with a negative scale marking little-endian,
    which is the layout stereo tooling expects.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        tag = b"Pf"
        h, w = data.shape
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
        h, w = data.shape[:2]
    else:
        raise ValueError("expected HxW or HxWx3 data")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"Pf":
            channels = 1
        elif tag == b"PF":
            channels = 3
        else:
            raise ValueError(f"not a PFM file: header {tag!r}")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(w * h * channels * 4), dtype=dtype)
    data = raw.reshape(h, w, channels).astype(np.float32)
    if channels == 1:
        data = data[:, :, 0]
    return np.flipud(data).copy()


def write_distance_map(path, dist_map):
    """Write a DistanceMap as PFM plus a JSON sidecar next to it."""
    path = str(path)
    write_pfm(path, dist_map.distance)
    sidecar = {
        "reference_id": dist_map.reference_id,
        "grid": {"width": dist_map.grid.width, "height": dist_map.grid.height},
        "d_min": float(dist_map.d_min),
        "d_max": float(dist_map.d_max),
        "n_layers": int(dist_map.n_layers),
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def read_distance_map(path):
    """Read a PFM distance map and its sidecar; returns (DistanceMap)."""
    from .sphere_sweep import DistanceMap, SphericalGrid

    path = str(path)
    dist = read_pfm(path).astype(np.float64)
    with open(path + ".json") as f:
        sc = json.load(f)
    grid = SphericalGrid(sc["grid"]["width"], sc["grid"]["height"])
    conf = np.where(dist > 0, 1.0, 0.0)
    return DistanceMap(reference_id=sc["reference_id"], grid=grid,
                       distance=dist, confidence=conf,
                       d_min=sc["d_min"], d_max=sc["d_max"],
                       n_layers=sc["n_layers"])


def write_png(path, image, alpha=None):
    """Write a float image in [0, 1] (HxW or HxWx3) as an 8-bit PNG.

    ``alpha`` is an optional boolean/float mask written as the alpha
    channel (used for panorama coverage).
    """
    arr = np.asarray(image, dtype=np.float64)
    arr8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if arr8.ndim == 2:
        arr8 = np.stack([arr8] * 3, axis=-1)
    if alpha is not None:
        a = np.asarray(alpha, dtype=np.float64)
        a8 = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
        arr8 = np.dstack([arr8, a8])
        Image.fromarray(arr8, mode="RGBA").save(path)
    else:
        Image.fromarray(arr8, mode="RGB").save(path)


def read_png(path):
    """Read a PNG as float RGB in [0, 1]; returns (image, alpha or None)."""
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return np.stack([arr] * 3, axis=-1), None
    if arr.shape[2] == 4:
        return arr[:, :, :3].copy(), arr[:, :, 3].copy()
    return arr[:, :, :3].copy(), None
