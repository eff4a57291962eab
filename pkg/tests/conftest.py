"""Shared fixtures: seeded generators, small scenes, random rotations."""

import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from rotsfm.geometry import exp_so3
from rotsfm.simulate import SceneKind, SceneSpec, generate


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def standard_scene():
    return generate(SceneSpec(SceneKind.STANDARD, n_points=200, seed=11))


@pytest.fixture(scope="session")
def noisy_standard_scene():
    return generate(SceneSpec(SceneKind.STANDARD, n_points=300, noise_max_px=2.0, seed=12))


@pytest.fixture(scope="session")
def circular_scene():
    return generate(SceneSpec(SceneKind.CIRCULAR, n_cameras=6, n_points=150, seed=5))
