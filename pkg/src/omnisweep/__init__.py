"""Omnidirectional fisheye toolkit: double/triple sphere camera models,
robust multi-image calibration, sphere-sweep distance estimation and
distance-aware 360 panorama stitching, with a built-in synthetic
ray-casting oracle."""

from .camera_models import (DSCM, TSCM, Intrinsics, dscm_project,
                            dscm_unproject, in_invertible_domain,
                            in_valid_domain, project, unproject)
from .calibration import (CalibrationProblem, CalibrationResult,
                          CornerObservations, DegenerateInputError,
                          compare_models, initialize, optimize, residuals)
from .rig import Pose, RigCamera, RigConfig, compose, default_rig, invert, \
    transform
from .sphere_sweep import (DistanceCandidates, DistanceMap,
                           NoVisibleCameraError, SphereSweepVolume,
                           SphericalCoord, SphericalGrid, aggregate,
                           bilateral_weight, build_volume, downsample,
                           extract_distance, select_camera)
from .stitcher import (Panorama, StitchParams, StitchResult,
                       compose_panorama, fuse_distance_maps, psnr, stitch)

__version__ = "0.1.0"

__all__ = [
    "DSCM", "TSCM", "Intrinsics", "project", "unproject", "in_valid_domain",
    "in_invertible_domain", "dscm_project", "dscm_unproject",
    "Pose", "RigCamera", "RigConfig", "compose", "invert", "transform",
    "default_rig",
    "CornerObservations", "CalibrationProblem", "CalibrationResult",
    "DegenerateInputError", "residuals", "initialize", "optimize",
    "compare_models",
    "SphericalCoord", "SphericalGrid", "DistanceCandidates",
    "SphereSweepVolume", "DistanceMap", "NoVisibleCameraError",
    "select_camera", "build_volume", "bilateral_weight", "downsample",
    "aggregate", "extract_distance",
    "Panorama", "StitchParams", "StitchResult", "fuse_distance_maps",
    "compose_panorama", "stitch", "psnr",
]
