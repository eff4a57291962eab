"""
Core geometry.

 Group 1 - vectors: skew, hom, unit
 Group 2 - SO(3): exp/log, projection, quaternions, rotation error
 Group 3 - poses and the epipolar vectors
 Group 4 - MatchedPair validation
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_rotation
from rotsfm.errors import DataError, DegenerateError
from rotsfm.geometry import (CameraPose, MatchedPair, as_rotation, back_project, exp_so3, hom,
                             is_rotation, log_so3, project, project_to_so3,
                             quaternion_from_rotation, relative_pose, rotation_error,
                             rotation_from_euler, rotation_from_quaternion, skew, theta, unit)


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_skew_is_cross_product(rng):
    a, b = rng.standard_normal((2, 3))
    assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)
    assert_allclose(skew(a), -skew(a).T)


def test_skew_stacks(rng):
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((5, 3))
    assert_allclose(np.einsum("nij,nj->ni", skew(a), b), np.cross(a, b), atol=1e-14)


def test_hom_and_unit():
    assert_allclose(hom([0.5, -2.0]), [0.5, -2.0, 1.0])
    assert hom(np.zeros((4, 2))).shape == (4, 3)
    assert_allclose(np.linalg.norm(unit([[3.0, 4.0, 0.0], [0.0, 0.0, 2.0]]), axis=1), 1.0)
    with pytest.raises(DataError):
        hom([1.0, 2.0, 3.0])


# ── Group 2 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(5))
def test_exp_log_inverse(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(3)
    w *= rng.uniform(0.0, 3.0) / np.linalg.norm(w)
    r = exp_so3(w)
    assert is_rotation(r)
    assert_allclose(log_so3(r), w, atol=1e-12)


def test_log_small_and_near_pi():
    tiny = np.array([1e-10, -2e-10, 3e-10])
    assert_allclose(log_so3(exp_so3(tiny)), tiny, atol=1e-20)
    axis = unit(np.array([0.3, -0.4, 0.85]))
    r = exp_so3((np.pi - 1e-9) * axis)
    assert_allclose(exp_so3(log_so3(r)), r, atol=1e-8)
    assert np.linalg.norm(log_so3(r)) == pytest.approx(np.pi - 1e-9, abs=1e-7)


def test_project_to_so3(rng):
    r = random_rotation(rng)
    noisy = r + 1e-3 * rng.standard_normal((3, 3))
    p = project_to_so3(noisy)
    assert is_rotation(p)
    assert rotation_error(r, p) < 1e-2
    assert_allclose(project_to_so3(r), r, atol=1e-14)


def test_quaternion_roundtrip(rng):
    r = random_rotation(rng)
    q = quaternion_from_rotation(r)
    assert q[0] >= 0.0
    assert np.linalg.norm(q) == pytest.approx(1.0)
    assert_allclose(rotation_from_quaternion(q), r, atol=1e-14)
    assert_allclose(rotation_from_quaternion([1.0, 0.0, 0.0, 0.0]), np.eye(3))


def test_euler_about_single_axis():
    r = rotation_from_euler([0.0, 0.0, 0.3])
    assert_allclose(r, exp_so3([0.0, 0.0, 0.3]), atol=1e-15)


def test_rotation_error_properties(rng):
    r = random_rotation(rng)
    axis = unit(rng.standard_normal(3))
    assert rotation_error(r, exp_so3(0.25 * axis) @ r) == pytest.approx(0.25, abs=1e-12)
    assert rotation_error(r, r) == pytest.approx(0.0, abs=1e-12)
    q = random_rotation(rng)
    r2 = exp_so3(0.1 * axis) @ r
    base = rotation_error(r, r2)
    assert rotation_error(q @ r, q @ r2) == pytest.approx(base, abs=1e-12)
    assert rotation_error(r @ q, r2 @ q) == pytest.approx(base, abs=1e-12)


def test_as_rotation_rejects_reflection():
    with pytest.raises(DataError):
        as_rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(DataError):
        CameraPose(2.0 * np.eye(3))


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_relative_pose_maps_camera_frames(rng):
    pi = CameraPose(random_rotation(rng), rng.standard_normal(3))
    pj = CameraPose(random_rotation(rng), rng.standard_normal(3))
    x = rng.standard_normal((4, 3)) * 5.0
    r_ij, t_ij = relative_pose(pi, pj)
    assert_allclose(pj.to_camera(x), pi.to_camera(x) @ r_ij.T + t_ij, atol=1e-12)


def test_project_back_project():
    pose = CameraPose(rotation_from_euler([0.1, -0.2, 0.3]), np.array([1.0, 2.0, -3.0]))
    point = pose.center + pose.rotation.T @ np.array([0.4, -0.3, 7.0])
    obs, depth = project(pose, point)
    assert depth == pytest.approx(7.0)
    assert_allclose(back_project(pose, obs, depth), point, atol=1e-12)
    with pytest.raises(DegenerateError):
        project(pose, pose.center + pose.rotation.T @ np.array([1.0, 0.0, 0.0]))


def test_theta_vanishes_without_baseline(rng):
    r = random_rotation(rng, 0.5)
    pc = rng.uniform(-1.0, 1.0, (6, 3)) + np.array([0.0, 0.0, 5.0])
    pj = pc @ r.T
    x_i = pc[:, :2] / pc[:, 2:]
    x_j = pj[:, :2] / pj[:, 2:]
    assert np.max(np.abs(theta(r, x_i, x_j))) < 1e-12


# ── Group 4 ───────────────────────────────────────────────────────────────────

def test_matched_pair_validation():
    x = np.zeros((3, 2))
    pair = MatchedPair(0, 1, x, x, [5, 6, 7])
    assert len(pair) == 3 and pair.key == (0, 1)
    assert pair.swapped().key == (1, 0)
    assert list(pair.permuted([2, 0, 1]).track_ids) == [7, 5, 6]
    with pytest.raises(DataError):
        MatchedPair(0, 1, x, x, [5, 5, 7])
    with pytest.raises(DataError):
        MatchedPair(0, 1, np.zeros((0, 2)), np.zeros((0, 2)), [])
    with pytest.raises(DataError):
        MatchedPair(0, 1, x, np.full((3, 2), np.nan), [1, 2, 3])
