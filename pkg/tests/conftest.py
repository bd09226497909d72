import numpy as np
import pytest

from omnisweep import synthetic
from omnisweep.sphere_sweep import DistanceCandidates


@pytest.fixture(scope="session")
def small_rig():
    return synthetic.default_rig_config(baseline=0.12, image_size=(320, 320))


@pytest.fixture(scope="session")
def sphere_scene():
    """Single textured sphere centered at the rig origin."""
    return synthetic.Scene((synthetic.SpherePrimitive(
        center=(0.0, 0.0, 0.0), radius=4.0,
        texture=synthetic.Texture(noise_scale=0.35, noise_octaves=3,
                                  seed=5)),))


@pytest.fixture(scope="session")
def sphere_views(small_rig, sphere_scene):
    images, dists = synthetic.render_rig_views(sphere_scene, small_rig,
                                               (320, 320))
    return images, dists


@pytest.fixture(scope="session")
def default_cands():
    return DistanceCandidates.inverse_depth(0.3, 50.0, 32)
