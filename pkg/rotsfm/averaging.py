#!/usr/bin/env python3
"""
Global rotations from per-edge relative rotations, and gauge alignment.

init_rotations
  1) spanning tree over the edges (edges with more matches first), composing
     R_j = R_ij R_i outward from the gauge view
  2) chordal L2 sweeps: every view takes the SO(3) projection of the sum of
     the estimates its neighbours imply for it
  3) IRLS with Cauchy weights on the chordal edge residuals

Relative rotations are keyed (i, j) with i < j and mean R_ij = R_j R_i^T.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional

import numpy as np
import scipy.sparse
from loguru import logger
from scipy.sparse.csgraph import breadth_first_order, minimum_spanning_tree

from rotsfm.config import CAUCHY_FACTOR, CHORDAL_SWEEPS, IRLS_SWEEPS
from rotsfm.errors import DataError
from rotsfm.geometry import as_rotation, exp_so3, log_so3, project_to_so3, rotation_error
from rotsfm.graph import EdgeKey, ViewGraph


@dataclass(frozen=True, eq=False)
class GlobalRotations:
    rotations: Dict[int, np.ndarray]
    gauge: int

    def __post_init__(self):
        if self.gauge not in self.rotations:
            raise DataError(f"gauge view {self.gauge} has no rotation")
        for v, r in self.rotations.items():
            as_rotation(r, f"rotation of view {v}")

    def __getitem__(self, view: int) -> np.ndarray:
        return self.rotations[view]

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self.rotations))

    def __len__(self) -> int:
        return len(self.rotations)

    def relative(self, i: int, j: int) -> np.ndarray:
        return self.rotations[j] @ self.rotations[i].T

    def regauged(self, q) -> "GlobalRotations":
        """Same cameras described in a world frame rotated by q (R_i -> R_i q^T)."""
        q = np.asarray(q, dtype=float)
        return GlobalRotations({v: r @ q.T for v, r in self.rotations.items()}, self.gauge)

    @classmethod
    def from_poses(cls, poses, gauge: Optional[int] = None) -> "GlobalRotations":
        rots = {v: p.rotation for v, p in poses.items()}
        return cls(rots, min(rots) if gauge is None else gauge)


def _oriented(relative: Mapping[EdgeKey, np.ndarray], src: int, dst: int) -> np.ndarray:
    """Rotation taking view src's frame to view dst's."""
    if (src, dst) in relative:
        return relative[(src, dst)]
    return relative[(dst, src)].T


def _spanning_seed(graph: ViewGraph, relative, gauge: int) -> Dict[int, np.ndarray]:
    n = len(graph.view_ids)
    keys = list(relative)
    weights = [1.0 / (1.0 + len(graph.edges[k])) if k in graph.edges else 1.0 for k in keys]
    rows = [graph.index_of(i) for i, _ in keys]
    cols = [graph.index_of(j) for _, j in keys]
    adj = scipy.sparse.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
    tree = minimum_spanning_tree(adj)
    tree = tree + tree.T
    order, parents = breadth_first_order(tree, graph.index_of(gauge), directed=False,
                                         return_predecessors=True)
    rots = {gauge: np.eye(3)}
    for node in order[1:]:
        child = graph.view_ids[node]
        parent = graph.view_ids[parents[node]]
        rots[child] = _oriented(relative, parent, child) @ rots[parent]
    return rots


def _chordal_sweeps(rots, relative, weights, gauge: int, sweeps: int):
    neighbours: Dict[int, list] = {}
    for (i, j), r_ij in relative.items():
        w = weights[(i, j)]
        neighbours.setdefault(j, []).append((i, r_ij, w))        # R_j ~ R_ij R_i
        neighbours.setdefault(i, []).append((j, r_ij.T, w))      # R_i ~ R_ij^T R_j
    for _ in range(sweeps):
        change = 0.0
        for v in sorted(neighbours):
            if v == gauge:
                continue
            acc = sum(w * (r @ rots[u]) for u, r, w in neighbours[v])
            new = project_to_so3(acc)
            change = max(change, float(np.linalg.norm(new - rots[v])))
            rots[v] = new
        if change < 1e-13:
            break
    return rots


def chordal_residuals(rots, relative) -> Dict[EdgeKey, float]:
    return {(i, j): float(np.linalg.norm(r @ rots[i] - rots[j])) for (i, j), r in relative.items()}


def init_rotations(
    graph: ViewGraph,
    relative: Mapping[EdgeKey, np.ndarray],
    irls: bool = True,
    sweeps: int = CHORDAL_SWEEPS,
    irls_sweeps: int = IRLS_SWEEPS,
) -> GlobalRotations:
    rel = {}
    for (i, j), r in relative.items():
        if i == j:
            raise DataError(f"relative rotation {(i, j)} joins a view to itself")
        key, r = ((i, j), r) if i < j else ((j, i), np.asarray(r).T)
        rel[key] = as_rotation(r, f"relative rotation {key}")
    missing = [v for v in (k for key in rel for k in key) if v not in graph.view_ids]
    if missing:
        raise DataError(f"relative rotations reference unknown views {sorted(set(missing))}")
    graph.require_connected(list(rel))

    gauge = graph.view_ids[0]
    rots = _spanning_seed(graph, rel, gauge)
    weights = {key: 1.0 for key in rel}
    rots = _chordal_sweeps(rots, rel, weights, gauge, sweeps)

    if irls:
        for _ in range(irls_sweeps):
            res = chordal_residuals(rots, rel)
            scale = CAUCHY_FACTOR * float(np.median(list(res.values())))
            if scale <= 1e-15:
                break
            weights = {key: 1.0 / (1.0 + (res[key] / scale) ** 2) for key in rel}
            rots = _chordal_sweeps(rots, rel, weights, gauge, sweeps)

    logger.debug("initialised {} rotations from {} edges", len(rots), len(rel))
    return GlobalRotations(rots, gauge)


# ---------- gauge alignment ----------
def align_rotations(est: Mapping[int, np.ndarray], gt: Mapping[int, np.ndarray],
                    iterations: int = 50) -> np.ndarray:
    """
    W minimising sum_i angle(R_est_i W, R_gt_i)^2 over the common views.

    A change of world frame right-multiplies camera rotations, so W is the
    rotation mean of R_est_i^T R_gt_i: chordal seed, then geodesic steps.
    """
    views = sorted(set(est) & set(gt))
    if not views:
        raise DataError("no common views to align")
    diffs = [np.asarray(est[v]).T @ np.asarray(gt[v]) for v in views]
    w = project_to_so3(sum(diffs))
    for _ in range(iterations):
        step = np.mean([log_so3(w.T @ d) for d in diffs], axis=0)
        w = w @ exp_so3(step)
        if np.linalg.norm(step) < 1e-15:
            break
    return w


def aligned_errors(est: Mapping[int, np.ndarray], gt: Mapping[int, np.ndarray]) -> Dict[int, float]:
    w = align_rotations(est, gt)
    return {v: rotation_error(gt[v], np.asarray(est[v]) @ w) for v in sorted(set(est) & set(gt))}


def as_mapping(rotations) -> Dict[int, np.ndarray]:
    if isinstance(rotations, GlobalRotations):
        return dict(rotations.rotations)
    return {int(v): np.asarray(r) for v, r in rotations.items()}


def relative_from(rotations: Mapping[int, np.ndarray], keys) -> Dict[EdgeKey, np.ndarray]:
    return {(i, j): rotations[j] @ rotations[i].T for i, j in keys}
