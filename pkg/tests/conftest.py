"""Shared fixtures: seeded generators, small cameras and a GaussianSet factory."""

import numpy as np
import pytest

from gmae.camera import CameraConfig
from gmae.gaussians import GaussianSet


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def cam16():
    """16x16 image split into four 8x8 tiles."""
    return CameraConfig(height=16, width=16, tile_size=8)


@pytest.fixture
def cam64():
    return CameraConfig(height=64, width=64)


@pytest.fixture
def make_set():
    """Build a GaussianSet from plain lists; identity rotation unless given."""

    def build(centers, scales, colors, opacities, quaternions=None):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        k = len(centers)
        if quaternions is None:
            quaternions = np.tile([1.0, 0.0, 0.0, 0.0], (k, 1))
        return GaussianSet(
            centers=centers,
            scales=np.asarray(scales, dtype=np.float64).reshape(k, 3),
            quaternions=np.asarray(quaternions, dtype=np.float64).reshape(k, 4),
            colors=np.asarray(colors, dtype=np.float64).reshape(k, 3),
            opacities=np.asarray(opacities, dtype=np.float64).reshape(k),
        )

    return build


def random_set(rng, k: int, scale=(0.02, 0.15)) -> GaussianSet:
    """k Gaussians with distinct depths and random rotations."""
    q = rng.normal(size=(k, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        centers=np.column_stack([rng.uniform(-1, 1, size=(k, 2)), rng.permutation(k) / k * 1.8 - 0.9]),
        scales=rng.uniform(*scale, size=(k, 3)),
        quaternions=q,
        colors=rng.uniform(0.01, 0.99, size=(k, 3)),
        opacities=rng.uniform(0.05, 0.95, size=k),
    )


@pytest.fixture
def scene_factory():
    return random_set
