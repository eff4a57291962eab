#!/usr/bin/env python3
"""
Independent reference computations used to cross-check the fast paths:
a classical Jacobi eigen-solver, midpoint triangulation, the
bundle-adjustment reprojection cost and a point-by-point rebuild of the
averaged reprojection residual at any rotations.
"""

from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from rotsfm.config import THETA_EPS
from rotsfm.errors import DataError, DegenerateError
from rotsfm.geometry import CameraPose, hom, relative_pose, unit
from rotsfm.graph import ViewGraph

JACOBI_TOL = 1e-14
JACOBI_MAX_ROTATIONS = 100
MIDPOINT_MAX_COND = 1e8


# ---------- eigen-decomposition ----------
def jacobi_eigen(sym) -> Tuple[np.ndarray, np.ndarray]:
    """
    Classical Jacobi: zero the largest off-diagonal entry until the
    off-diagonal norm is below JACOBI_TOL (relative to ||A||_F).
    Returns ascending eigenvalues and the eigenvectors as columns.
    """
    a = np.array(sym, dtype=float)
    if a.shape != (3, 3):
        raise DataError("jacobi_eigen expects a 3x3 matrix")
    scale = max(float(np.linalg.norm(a)), 1e-300)
    if np.linalg.norm(a - a.T) > 1e-9 * max(1.0, scale):
        raise DataError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(3)
    for _ in range(JACOBI_MAX_ROTATIONS):
        off = np.sqrt(2.0 * (a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2))
        if off <= JACOBI_TOL * scale:
            break
        p, q = max(((0, 1), (0, 2), (1, 2)), key=lambda pq: abs(a[pq]))
        th = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
        t = (1.0 if th >= 0 else -1.0) / (abs(th) + np.sqrt(th * th + 1.0))
        c = 1.0 / np.sqrt(t * t + 1.0)
        s = t * c
        rot = np.eye(3)
        rot[p, p] = rot[q, q] = c
        rot[p, q] = s
        rot[q, p] = -s
        a = rot.T @ a @ rot
        v = v @ rot
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


# ---------- triangulation ----------
def triangulate_midpoint(poses: Sequence[CameraPose], obs: Sequence) -> np.ndarray:
    """Point minimizing the summed squared distance to every observation ray."""
    if len(poses) != len(obs) or len(poses) < 2:
        raise DataError("triangulation needs at least two (pose, observation) pairs")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for pose, x in zip(poses, obs):
        d = unit(pose.rotation.T @ hom(np.asarray(x, dtype=float)))
        proj = np.eye(3) - np.outer(d, d)
        a += proj
        b += proj @ pose.center
    if np.linalg.cond(a) > MIDPOINT_MAX_COND:
        raise DegenerateError("observation rays are (nearly) parallel")
    return np.linalg.solve(a, b)


# ---------- bundle-adjustment cost ----------
def ba_residual(pose: CameraPose, point_world, obs) -> np.ndarray:
    """R(X - t) / e3.R(X - t) - hom(x); the last component is always 0."""
    pc = pose.to_camera(np.asarray(point_world, dtype=float))
    if abs(pc[2]) < 1e-12:
        raise DegenerateError("point lies in the camera plane")
    return pc / pc[2] - hom(np.asarray(obs, dtype=float))


def f_ba(graph: ViewGraph, poses: Mapping[int, CameraPose], points: Mapping[int, np.ndarray]) -> float:
    total = 0.0
    for k in sorted(graph.tracks):
        for v, x in sorted(graph.tracks[k].items()):
            r = ba_residual(poses[v], points[k], x)
            total += float(r @ r)
    return total


def weighted_depth_point(graph: ViewGraph, poses: Mapping[int, CameraPose], view: int,
                         point: int) -> np.ndarray:
    """
    World point seen from `view`: for every edge through (view, point), the
    other view's ray scaled by its analytic depth, averaged with weights
    ||theta|| / sum ||theta||.
    """
    estimates, weights = [], []
    for key in graph.incident(view):
        pair = graph.edges[key]
        hit = np.flatnonzero(pair.track_ids == point)
        if not len(hit):
            continue
        n = int(hit[0])
        other = key[1] if key[0] == view else key[0]
        x_v = pair.x_i[n] if key[0] == view else pair.x_j[n]
        x_o = pair.x_j[n] if key[0] == view else pair.x_i[n]
        r_vo, t_vo = relative_pose(poses[view], poses[other])
        a = r_vo @ hom(x_v)
        b = hom(x_o)
        th = np.linalg.norm(np.cross(a, b))
        if th < 1e-14:
            continue
        depth_o = np.linalg.norm(np.cross(a, t_vo)) / th
        pose_o = poses[other]
        estimates.append(pose_o.rotation.T @ (depth_o * b) + pose_o.center)
        weights.append(th)
    if not weights:
        raise DegenerateError(f"no edge with parallax for view {view}, point {point}")
    w = np.asarray(weights)
    return (w[:, None] * np.asarray(estimates)).sum(axis=0) / w.sum()


def ba_residuals_by_block(graph: ViewGraph, poses: Mapping[int, CameraPose]) -> Dict[Tuple[int, int], np.ndarray]:
    """BA residual of every (view, point) block at its weighted-depth point."""
    blocks = sorted({(v, int(k)) for key, pair in graph.edges.items()
                     for k in pair.track_ids for v in key})
    out = {}
    for v, k in blocks:
        pt = weighted_depth_point(graph, poses, v, k)
        out[(v, k)] = ba_residual(poses[v], pt, graph.tracks[k][v])
    return out


# ---------- averaged reprojection at arbitrary rotations ----------
def _direction_between(x_from, x_to, r) -> np.ndarray:
    """Unit t minimizing sum (theta . t)^2, theta = (r hom(x_from)) x hom(x_to)."""
    ps = np.zeros((3, 3))
    for p, q in zip(x_from, x_to):
        th = np.cross(r @ hom(p), hom(q))
        ps += np.outer(th, th)
    return jacobi_eigen(ps)[1][:, 0]


def _reprojection_from(r, t, x_from, x_to) -> Tuple[np.ndarray, float]:
    """
    Point on the x_from ray at its analytic depth, moved into the x_to frame
    by (r, t) and projected; returned with the parallax weight ||theta||.
    """
    a = r @ hom(np.asarray(x_from, dtype=float))
    b = hom(np.asarray(x_to, dtype=float))
    th = np.cross(a, b)
    th_n = float(np.linalg.norm(th))
    if th_n <= THETA_EPS * np.linalg.norm(a) * np.linalg.norm(b):
        y = a
    else:
        bt = np.cross(b, t)
        sign = -1.0 if th @ bt < 0.0 else 1.0
        depth = np.linalg.norm(bt) / th_n
        y = depth * a + sign * t
    return y / y[2], th_n


def averaged_reprojection_blocks(graph: ViewGraph, rotations: Mapping[int, np.ndarray]
                                 ) -> Dict[Tuple[int, int], np.ndarray]:
    """
    Residual of every (view, point) block, one point at a time: each edge
    through the view re-estimates its translation from the rotations alone,
    reprojects the point from the other view, and the reprojections are
    averaged with ||theta|| weights before the observation is subtracted.
    """
    moves = {}
    for (i, j), pair in graph.edges.items():
        r_ij = rotations[j] @ rotations[i].T
        moves[(i, j)] = (r_ij, _direction_between(pair.x_i, pair.x_j, r_ij))
        moves[(j, i)] = (r_ij.T, _direction_between(pair.x_j, pair.x_i, r_ij.T))

    acc: Dict[Tuple[int, int], np.ndarray] = {}
    total: Dict[Tuple[int, int], float] = {}
    for (i, j), pair in graph.edges.items():
        for n, k in enumerate(pair.track_ids):
            for view, other, x_v, x_o in ((j, i, pair.x_j[n], pair.x_i[n]),
                                           (i, j, pair.x_i[n], pair.x_j[n])):
                r, t = moves[(other, view)]
                proj, w = _reprojection_from(r, t, x_o, x_v)
                block = (view, int(k))
                acc[block] = acc.get(block, np.zeros(3)) + w * proj
                total[block] = total.get(block, 0.0) + w
    return {b: acc[b] / total[b] - hom(np.asarray(graph.tracks[b[1]][b[0]], dtype=float))
            for b in sorted(acc) if total[b] > 0.0}
