"""SE(3) pose algebra and the 4-camera rig layout.

Poses are rotation-matrix + translation pairs, validated on construction
(orthonormality and det +1 within 1e-10). The rig frame has its origin at
the centroid of the camera centers with +z along the forward top camera's
optical axis; camera poses map camera coordinates into the rig frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .camera_models import Intrinsics, fit_focal

_ORTHO_TOL = 1e-10


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_out = rotation @ x_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _freeze(self.rotation)
        t = _freeze(self.translation)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        drift = np.abs(r.T @ r - np.eye(3)).max()
        if drift > _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (drift {drift:.2e})")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"q": [float(v) for v in matrix_to_quat(self.rotation)],
                "t": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(quat_to_matrix(np.asarray(d["q"], dtype=np.float64)),
                   np.asarray(d["t"], dtype=np.float64))


def compose(a: Pose, b: Pose) -> Pose:
    """a then applied after b: (a*b)(x) = a(b(x))."""
    return Pose(a.rotation @ b.rotation,
                a.rotation @ b.translation + a.translation)


def invert(a: Pose) -> Pose:
    rt = a.rotation.T
    return Pose(rt, -rt @ a.translation)


def transform(a: Pose, points):
    """Apply the pose to points of shape (..., 3)."""
    p = np.asarray(points, dtype=np.float64)
    return p @ a.rotation.T + a.translation


def matrix_to_quat(r) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotvec_to_matrix(v) -> np.ndarray:
    """Axis-angle vector (angle = norm) to rotation matrix (Rodrigues)."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        k = np.array([
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ])
        return np.eye(3) + k  # first-order term is exact enough here
    axis = v / angle
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def matrix_to_rotvec(r) -> np.ndarray:
    q = matrix_to_quat(r)
    w = min(1.0, max(-1.0, float(q[0])))
    angle = 2.0 * math.acos(w)
    s = math.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return q[1:] * 2.0
    return q[1:] / s * angle


@dataclass(frozen=True)
class RigCamera:
    """One rig slot: camera id, intrinsics and camera-to-rig pose."""

    camera_id: int
    intrinsics: Intrinsics
    pose: Pose

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def axis(self) -> np.ndarray:
        """Optical axis direction in the rig frame."""
        return self.pose.rotation[:, 2]


@dataclass(frozen=True)
class RigConfig:
    """Ordered camera list plus the two stitching reference ids."""

    cameras: tuple
    reference_ids: tuple

    def __post_init__(self):
        cams = tuple(self.cameras)
        refs = tuple(int(i) for i in self.reference_ids)
        if len(cams) < 2:
            raise ValueError("a rig needs at least 2 cameras")
        ids = [c.camera_id for c in cams]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")
        if len(refs) != 2 or refs[0] == refs[1]:
            raise ValueError("reference_ids must name two distinct cameras")
        for r in refs:
            if r not in ids:
                raise ValueError(f"reference id {r} not in rig")
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "reference_ids", refs)

    def camera(self, camera_id: int) -> RigCamera:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise KeyError(f"no camera with id {camera_id}")

    @property
    def camera_ids(self):
        return [c.camera_id for c in self.cameras]

    def to_dict(self) -> dict:
        return {
            "cameras": [
                {"id": c.camera_id,
                 "intrinsics": c.intrinsics.to_dict(),
                 "pose": c.pose.to_dict()}
                for c in self.cameras
            ],
            "reference_ids": list(self.reference_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigConfig":
        cams = tuple(
            RigCamera(int(c["id"]),
                      Intrinsics.from_dict(c["intrinsics"]),
                      Pose.from_dict(c["pose"]))
            for c in d["cameras"]
        )
        return cls(cams, tuple(d["reference_ids"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, s: str) -> "RigConfig":
        return cls.from_dict(json.loads(s))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.dumps())
            f.write("\n")

    @classmethod
    def load(cls, path) -> "RigConfig":
        with open(path) as f:
            return cls.loads(f.read())


def default_rig(baseline: float, intrinsics=None) -> RigConfig:
    """The 4-camera layout: two top cameras facing front/back, two bottom
    cameras facing the perpendicular directions, with every adjacent
    top-bottom pair separated by exactly ``baseline``.

    Camera ids: 0 top-front (+z), 1 top-back (-z), 2 bottom (+x),
    3 bottom (-x). The rig origin is the centroid of the four centers.
    """
    if baseline <= 0.0:
        raise ValueError("baseline must be positive")
    s = baseline / math.sqrt(6.0)
    h = s
    down = np.array([0.0, -1.0, 0.0])  # camera +y (image down) in rig frame

    def cam_rot(axis):
        z = np.asarray(axis, dtype=np.float64)
        y = down
        x = np.cross(y, z)
        return np.column_stack([x, y, z])

    if intrinsics is None:
        intrinsics = [None] * 4
    if isinstance(intrinsics, Intrinsics):
        intrinsics = [intrinsics] * 4
    layout = [
        (0, (0.0, h, s), (0.0, 0.0, 1.0)),
        (1, (0.0, h, -s), (0.0, 0.0, -1.0)),
        (2, (s, -h, 0.0), (1.0, 0.0, 0.0)),
        (3, (-s, -h, 0.0), (-1.0, 0.0, 0.0)),
    ]
    cams = []
    for (cid, center, axis), intr in zip(layout, intrinsics):
        if intr is None:
            alpha, xi, lam = 0.58, -0.18, 0.12
            f = fit_focal(alpha, xi, lam, 110.0, 0.47 * 640)
            intr = Intrinsics(fx=f, fy=f, cx=320.0, cy=320.0, alpha=alpha,
                              xi=xi, lam=lam, model="tscm")
        cams.append(RigCamera(cid, intr, Pose(cam_rot(axis), np.array(center))))
    return RigConfig(tuple(cams), (0, 1))
