#!/usr/bin/env python3
"""
Elementary rigid-body geometry shared by every other module.

Conventions
  - skew(a) @ b == np.cross(a, b)
  - a pose (R, t) maps a world point X to camera coordinates R (X - t);
    t is therefore the camera centre
  - observations are normalized image coordinates (x, y); hom() appends the 1

Functions accept single vectors or stacked arrays: an observation argument is
either shape (2,) or (m, 2), a vector argument (3,) or (m, 3).
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from rotsfm.config import ROT_TOL
from rotsfm.errors import DataError, DegenerateError

E3 = np.array([0.0, 0.0, 1.0])

_NEAR_PI = 1e-6
_SMALL_ANGLE = 1e-8


# ---------- vectors ----------
def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def hom(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise DataError(f"observation must have 2 components, got shape {x.shape}")
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0.0, n, 1.0)


# ---------- SO(3) ----------
def exp_so3(omega) -> np.ndarray:
    """Rodrigues formula; second-order Taylor terms below 1e-8 rad."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    k = skew(omega)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arctan2(np.linalg.norm(w), cos_a))
    if angle < _SMALL_ANGLE:
        return w
    if np.pi - angle < _NEAR_PI:
        # sin(angle) ~ 0: read the axis off the symmetric part
        b = 0.5 * (r + r.T)
        aat = (b - cos_a * np.eye(3)) / (1.0 - cos_a)
        col = int(np.argmax(np.diag(aat)))
        axis = aat[:, col] / np.sqrt(max(aat[col, col], 1e-300))
        axis = axis / np.linalg.norm(axis)
        if axis @ w < 0.0:
            axis = -axis
        return angle * axis
    return w * (angle / np.sin(angle))


def project_to_so3(m) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar factor with det +1)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(m, tol: float = ROT_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return (np.linalg.norm(m.T @ m - np.eye(3)) <= tol
            and abs(np.linalg.det(m) - 1.0) <= tol)


def as_rotation(m, name: str = "rotation") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if not is_rotation(m):
        raise DataError(f"{name} is not a valid rotation matrix")
    return m


def rotation_from_quaternion(q_wxyz) -> np.ndarray:
    w, x, y, z = (float(v) for v in q_wxyz)
    return _ScipyRotation.from_quat([x, y, z, w]).as_matrix()


def quaternion_from_rotation(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0."""
    x, y, z, w = _ScipyRotation.from_matrix(np.asarray(r, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return -q if q[0] < 0.0 else q


def rotation_from_euler(angles_xyz) -> np.ndarray:
    """Rz @ Ry @ Rx from per-axis angles (radians)."""
    return _ScipyRotation.from_euler("xyz", np.asarray(angles_xyz, dtype=float)).as_matrix()


def rotation_error(r_gt, r_e) -> float:
    """
    Angle of r_gt^T r_e in radians, in [0, pi].

    Same value as arccos(clamp((trace - 1)/2)), evaluated through atan2 so
    small angles keep full precision.
    """
    d = np.asarray(r_gt, dtype=float).T @ np.asarray(r_e, dtype=float)
    s = 0.5 * np.linalg.norm([d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1]])
    c = (np.trace(d) - 1.0) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


# ---------- epipolar vectors ----------
def theta(r_ij, x_i, x_j) -> np.ndarray:
    """[R_ij X_i]x X_j; vanishes when the two rays are parallel."""
    rx = hom(x_i) @ np.asarray(r_ij, dtype=float).T
    return np.cross(rx, hom(x_j))


def alpha(r_ij, t_ij, x_i) -> np.ndarray:
    return np.cross(hom(x_i) @ np.asarray(r_ij, dtype=float).T, np.asarray(t_ij, dtype=float))


def beta(t_ij, x_j) -> np.ndarray:
    return np.cross(hom(x_j), np.asarray(t_ij, dtype=float))


# ---------- poses ----------
@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", as_rotation(self.rotation, "camera rotation"))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise DataError("camera translation must be finite")
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def to_camera(self, points_world) -> np.ndarray:
        return (np.asarray(points_world, dtype=float) - self.translation) @ self.rotation.T


def relative_pose(pose_i: CameraPose, pose_j: CameraPose) -> Tuple[np.ndarray, np.ndarray]:
    """(R_ij, t_ij) with X_j = R_ij X_i + t_ij for camera-frame points."""
    r_ij = pose_j.rotation @ pose_i.rotation.T
    t_ij = pose_j.rotation @ (pose_i.translation - pose_j.translation)
    return r_ij, t_ij


def project(pose: CameraPose, point_world) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized observation(s) and depth(s) of world point(s)."""
    pc = pose.to_camera(point_world)
    z = pc[..., 2]
    if np.any(np.abs(z) < 1e-12):
        raise DegenerateError("point lies in the camera plane (depth ~ 0)")
    return pc[..., :2] / z[..., None], z


def back_project(pose: CameraPose, obs, depth) -> np.ndarray:
    pc = hom(obs) * np.asarray(depth, dtype=float)[..., None]
    return pc @ pose.rotation + pose.translation


# ---------- matched observations ----------
@dataclass(frozen=True, eq=False)
class MatchedPair:
    """Correspondences between two views; x_i, x_j are (m, 2) normalized arrays."""
    left_view: int
    right_view: int
    x_i: np.ndarray
    x_j: np.ndarray
    track_ids: np.ndarray

    def __post_init__(self):
        x_i = np.atleast_2d(np.asarray(self.x_i, dtype=float))
        x_j = np.atleast_2d(np.asarray(self.x_j, dtype=float))
        ids = np.asarray(self.track_ids, dtype=np.int64).reshape(-1)
        if x_i.shape != x_j.shape or x_i.shape[-1] != 2 or len(ids) != len(x_i):
            raise DataError(f"pair {self.left_view}-{self.right_view}: inconsistent observation arrays")
        if len(ids) == 0:
            raise DataError(f"pair {self.left_view}-{self.right_view} has no matched points")
        if len(np.unique(ids)) != len(ids):
            raise DataError(f"pair {self.left_view}-{self.right_view}: duplicate track ids")
        if not (np.all(np.isfinite(x_i)) and np.all(np.isfinite(x_j))):
            raise DataError(f"pair {self.left_view}-{self.right_view}: non-finite observation")
        object.__setattr__(self, "x_i", x_i)
        object.__setattr__(self, "x_j", x_j)
        object.__setattr__(self, "track_ids", ids)

    def __len__(self) -> int:
        return len(self.track_ids)

    @property
    def key(self) -> Tuple[int, int]:
        return (self.left_view, self.right_view)

    def swapped(self) -> "MatchedPair":
        return MatchedPair(self.right_view, self.left_view, self.x_j, self.x_i, self.track_ids)

    def permuted(self, order) -> "MatchedPair":
        order = np.asarray(order)
        return MatchedPair(self.left_view, self.right_view,
                           self.x_i[order], self.x_j[order], self.track_ids[order])
