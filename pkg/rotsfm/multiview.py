#!/usr/bin/env python3
"""
Global reprojection residual over a view graph and multi-view rotation
optimization.

Each edge (i, j) contributes, for every shared point k, a pose-only
reprojection of k into view i and into view j, computed from the relative
rotation R_j R_i^T and that edge's analytic translation. The residual of
(view i, point k) is the ||theta||-weighted average of those reprojections
minus the observation.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse
from loguru import logger

from rotsfm.averaging import GlobalRotations
from rotsfm.config import THETA_EPS, LMConfig
from rotsfm.errors import DataError, DegenerateError
from rotsfm.geometry import MatchedPair, exp_so3, hom, project_to_so3, unit
from rotsfm.graph import EdgeKey, ViewGraph
from rotsfm.lm import huber_blocks, levenberg_marquardt
from rotsfm.translation import solve_translation
from rotsfm.twoview import FORMS, pose_only_coord

DENSE_VIEW_LIMIT = 200


@dataclass(frozen=True, eq=False)
class EdgeWeighting:
    theta_norm: Dict[EdgeKey, np.ndarray]                   # per edge, per shared point
    omega_ik: Dict[Tuple[int, int], float]                  # (view, point) -> sum of ||theta||
    omega_ijk: Dict[EdgeKey, Tuple[np.ndarray, np.ndarray]]  # weights for the i and j blocks

    def weight(self, edge: EdgeKey, view: int, point: int, graph: ViewGraph) -> float:
        pair = graph.edges[edge]
        pos = int(np.flatnonzero(pair.track_ids == point)[0])
        return float(self.omega_ijk[edge][0 if view == edge[0] else 1][pos])


@dataclass
class MultiViewResult:
    rotations: GlobalRotations
    cost_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""


def analytical_depths(r_ij, t_ij, x_i, x_j) -> Tuple[np.ndarray, np.ndarray]:
    """Depths of the point along view i's and view j's ray, for translation t_ij."""
    a = hom(x_i) @ np.asarray(r_ij, dtype=float).T
    b = hom(x_j)
    t = np.asarray(t_ij, dtype=float)
    th_n = np.linalg.norm(np.cross(a, b), axis=-1)
    if np.any(th_n < THETA_EPS):
        raise DegenerateError("zero parallax: analytic depth undefined")
    d_i = np.linalg.norm(np.cross(b, t), axis=-1) / th_n
    d_j = np.linalg.norm(np.cross(a, t), axis=-1) / th_n
    return d_i, d_j


# ---------- per-edge terms ----------
def _ratio(w: np.ndarray, total: np.ndarray) -> np.ndarray:
    return np.divide(w, total, out=np.zeros_like(w), where=total > 0.0)


@dataclass
class _EdgeTerms:
    weight: np.ndarray    # ||theta||, zero where the edge gives nothing
    proj_i: np.ndarray    # (m, 3) reprojection into view i
    proj_j: np.ndarray


@dataclass
class _Frame:
    state: Tuple[np.ndarray, ...]
    terms: Dict[EdgeKey, _EdgeTerms]
    acc: np.ndarray
    omega: np.ndarray
    mask: np.ndarray


class GrrmEvaluator:
    """Indexes the (view, point) blocks of a graph and evaluates the residual."""

    def __init__(self, graph: ViewGraph, form: str = "coordinate"):
        if form not in FORMS:
            raise DataError(f"unknown residual form {form!r}; expected one of {FORMS}")
        if not graph.edges:
            raise DataError("view graph has no edges")
        self.graph = graph
        self.form = form
        self.views = graph.view_ids
        blocks = sorted({(v, int(k)) for (i, j), pair in graph.edges.items()
                         for k in pair.track_ids for v in (i, j)})
        self.blocks = blocks
        self.block_of = {b: n for n, b in enumerate(blocks)}
        self.edge_rows: Dict[EdgeKey, Tuple[np.ndarray, np.ndarray]] = {}
        for (i, j), pair in graph.edges.items():
            self.edge_rows[(i, j)] = (
                np.array([self.block_of[(i, int(k))] for k in pair.track_ids]),
                np.array([self.block_of[(j, int(k))] for k in pair.track_ids]),
            )
        obs = hom(np.array([graph.tracks[k][v] for v, k in blocks]))
        self.target = unit(obs) if form == "bearing" else obs
        self.incident = {v: graph.incident(v) for v in self.views}

    # ---------- building blocks ----------
    def edge_terms(self, key: EdgeKey, r_i: np.ndarray, r_j: np.ndarray) -> _EdgeTerms:
        pair: MatchedPair = self.graph.edges[key]
        r_ij = r_j @ r_i.T
        _, sol = solve_translation(pair, r_ij)
        m = len(pair)
        if not sol.present:
            nan = np.full((m, 3), np.nan)
            return _EdgeTerms(np.zeros(m), nan, nan)
        t = sol.direction
        pj = pose_only_coord(r_ij, t, pair.x_i, pair.x_j)
        pi = pose_only_coord(r_ij.T, -(r_ij.T @ t), pair.x_j, pair.x_i)
        weight = np.linalg.norm(np.cross(hom(pair.x_i) @ r_ij.T, hom(pair.x_j)), axis=1)
        if self.form == "bearing":
            return _EdgeTerms(weight, pi.bearing, pj.bearing)
        ok = pi.valid & pj.valid
        return _EdgeTerms(np.where(ok, weight, 0.0), pi.coord, pj.coord)

    def _accumulate(self, terms: Dict[EdgeKey, _EdgeTerms]):
        nb = len(self.blocks)
        acc = np.zeros((nb, 3))
        omega = np.zeros(nb)
        for key, tm in terms.items():
            rows_i, rows_j = self.edge_rows[key]
            w = tm.weight
            use = w > 0.0
            np.add.at(omega, rows_i[use], w[use])
            np.add.at(omega, rows_j[use], w[use])
            np.add.at(acc, rows_i[use], w[use, None] * tm.proj_i[use])
            np.add.at(acc, rows_j[use], w[use, None] * tm.proj_j[use])
        return acc, omega

    def _blocks_from(self, acc, omega, mask) -> np.ndarray:
        live = mask & (omega > 0.0)
        out = np.zeros_like(acc)
        out[live] = acc[live] / omega[live, None] - self.target[live]
        return out

    def frame(self, state) -> _Frame:
        rots = dict(zip(self.views, state))
        terms = {key: self.edge_terms(key, rots[key[0]], rots[key[1]]) for key in self.graph.edges}
        acc, omega = self._accumulate(terms)
        return _Frame(tuple(state), terms, acc, omega, omega > 0.0)

    # ---------- public evaluations ----------
    def residual_blocks(self, rotations) -> Tuple[np.ndarray, np.ndarray]:
        """(n_blocks, 3) residuals and the mask of blocks that are defined."""
        fr = self.frame(self._state_of(rotations))
        return self._blocks_from(fr.acc, fr.omega, fr.mask), fr.mask

    def weighting(self, rotations) -> EdgeWeighting:
        fr = self.frame(self._state_of(rotations))
        theta_norm, omega_ijk = {}, {}
        for key, tm in fr.terms.items():
            rows_i, rows_j = self.edge_rows[key]
            theta_norm[key] = tm.weight
            omega_ijk[key] = (_ratio(tm.weight, fr.omega[rows_i]), _ratio(tm.weight, fr.omega[rows_j]))
        omega_ik = {b: float(fr.omega[n]) for n, b in enumerate(self.blocks)}
        return EdgeWeighting(theta_norm, omega_ik, omega_ijk)

    def _state_of(self, rotations) -> Tuple[np.ndarray, ...]:
        rots = rotations.rotations if isinstance(rotations, GlobalRotations) else rotations
        missing = [v for v in self.views if v not in rots]
        if missing:
            raise DataError(f"no rotation for views {missing}")
        return tuple(np.asarray(rots[v], dtype=float) for v in self.views)

    # ---------- LM plumbing ----------
    def residual(self, state, fr: Optional[_Frame], huber: Optional[float] = None) -> np.ndarray:
        cur = self.frame(state)
        mask = cur.mask if fr is None else fr.mask
        return huber_blocks(self._blocks_from(cur.acc, cur.omega, mask).reshape(-1), 3, huber)

    def jacobian(self, fr: _Frame, free: List[int], h: float, huber: Optional[float] = None):
        """Central differences, recomputing only the edges a shifted view touches."""
        n_rows = 3 * len(self.blocks)
        data, rows_out, cols_out = [], [], []
        for p, view_pos in enumerate(free):
            view = self.views[view_pos]
            edges = self.incident[view]
            rows = np.unique(np.concatenate([np.concatenate(self.edge_rows[e]) for e in edges]))
            local = {e: (np.searchsorted(rows, self.edge_rows[e][0]),
                         np.searchsorted(rows, self.edge_rows[e][1])) for e in edges}
            for axis in range(3):
                d = np.zeros(3)
                d[axis] = h
                sides = []
                for sgn in (1.0, -1.0):
                    state = list(fr.state)
                    state[view_pos] = exp_so3(sgn * d) @ state[view_pos]
                    acc = fr.acc[rows].copy()
                    omega = fr.omega[rows].copy()
                    for e in edges:
                        li, lj = local[e]
                        old = fr.terms[e]
                        new = self.edge_terms(e, state[self.views.index(e[0])],
                                              state[self.views.index(e[1])])
                        for tm, s in ((old, -1.0), (new, 1.0)):
                            use = tm.weight > 0.0
                            np.add.at(omega, li[use], s * tm.weight[use])
                            np.add.at(omega, lj[use], s * tm.weight[use])
                            np.add.at(acc, li[use], s * tm.weight[use, None] * tm.proj_i[use])
                            np.add.at(acc, lj[use], s * tm.weight[use, None] * tm.proj_j[use])
                    live = fr.mask[rows] & (omega > 1e-300)
                    blk = np.zeros((len(rows), 3))
                    blk[live] = acc[live] / omega[live, None] - self.target[rows][live]
                    sides.append(huber_blocks(blk.reshape(-1), 3, huber))
                col = (sides[0] - sides[1]) / (2.0 * h)
                flat_rows = (3 * rows[:, None] + np.arange(3)).reshape(-1)
                nz = col != 0.0
                data.append(col[nz])
                rows_out.append(flat_rows[nz])
                cols_out.append(np.full(int(nz.sum()), 3 * p + axis))
        jac = scipy.sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows_out), np.concatenate(cols_out))),
            shape=(n_rows, 3 * len(free)))
        return jac if len(self.views) >= DENSE_VIEW_LIMIT else jac.toarray()


# ---------- module-level operations ----------
def edge_weights(graph: ViewGraph, rotations: GlobalRotations) -> EdgeWeighting:
    return GrrmEvaluator(graph).weighting(rotations)


def grrm_residual(graph: ViewGraph, rotations: GlobalRotations, view_i: int, point_k: int,
                  form: str = "coordinate") -> np.ndarray:
    ev = GrrmEvaluator(graph, form)
    if (view_i, point_k) not in ev.block_of:
        raise DataError(f"point {point_k} is not matched in view {view_i}")
    blocks, mask = ev.residual_blocks(rotations)
    n = ev.block_of[(view_i, point_k)]
    if not mask[n]:
        logger.info("block (view {}, point {}) dropped: every edge degenerate", view_i, point_k)
        raise DegenerateError(f"no non-degenerate edge for view {view_i}, point {point_k}")
    return blocks[n]


def f_grrm(graph: ViewGraph, rotations: GlobalRotations, form: str = "coordinate") -> float:
    blocks, _ = GrrmEvaluator(graph, form).residual_blocks(rotations)
    return float(np.sum(blocks * blocks))


def optimize_global(graph: ViewGraph, init: GlobalRotations, cfg: Optional[LMConfig] = None,
                    form: str = "coordinate") -> MultiViewResult:
    cfg = cfg or LMConfig.multi_view()
    graph.require_connected()
    ev = GrrmEvaluator(graph, form)
    state0 = ev._state_of(init)
    gauge_pos = ev.views.index(init.gauge)
    free = [p for p in range(len(ev.views)) if p != gauge_pos]
    if not free:
        return MultiViewResult(init, [], 0, True, "single view")

    def retract(state, delta):
        out = list(state)
        for n, p in enumerate(free):
            out[p] = exp_so3(delta[3 * n:3 * n + 3]) @ out[p]
        return tuple(out)

    def prepare(state):
        fr = ev.frame(state)
        dropped = int(np.sum(~fr.mask))
        if dropped:
            logger.debug("{} residual blocks without a non-degenerate edge this iteration", dropped)
        return fr

    def normalize(state):
        return tuple(project_to_so3(r) for r in state)

    out = levenberg_marquardt(
        lambda s, fr: ev.residual(s, fr, cfg.huber_scale),
        state0, retract, 3 * len(free), cfg,
        prepare=prepare,
        jacobian=lambda s, fr: ev.jacobian(fr, free, cfg.fd_step, cfg.huber_scale),
        normalize=normalize,
    )
    rots = GlobalRotations(dict(zip(ev.views, out.state)), init.gauge)
    logger.info("multi-view: {} after {} iterations, cost {:.6e}", out.message, out.iterations, out.cost)
    return MultiViewResult(rots, out.cost_trace, out.iterations, out.converged, out.message)
