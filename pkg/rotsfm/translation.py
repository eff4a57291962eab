#!/usr/bin/env python3
"""
Relative-translation direction from a matched pair and a relative rotation.

Every correspondence contributes theta theta^T to a 3x3 summary matrix P^S;
the translation direction spans its null space. The smallest eigenvalue is
taken in closed form (trigonometric Cardano) and the eigenvector as the
largest cross product of two rows of P^S - lambda I.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from rotsfm.config import CARDANO_CLAMP, CARDANO_P_TOL, EPS_ABS, TOL_RANK, TOL_XI
from rotsfm.errors import NumericalError
from rotsfm.geometry import MatchedPair, hom, theta


class RankClass(str, Enum):
    RANK0 = "Rank0"
    RANK1 = "Rank1"
    RANK2 = "Rank2"   # two or more significant eigenvalues


@dataclass(frozen=True, eq=False)
class ObservationSummary:
    ps: np.ndarray
    m_ij: int
    trace: float

    @classmethod
    def from_matrix(cls, ps, m_ij: int = 1) -> "ObservationSummary":
        ps = np.asarray(ps, dtype=float)
        ps = 0.5 * (ps + ps.T)
        return cls(ps=ps, m_ij=int(m_ij), trace=float(np.trace(ps)))


@dataclass(frozen=True, eq=False)
class TranslationSolution:
    direction: Optional[np.ndarray]   # None when the null space is not one-dimensional
    lambda_min: float
    rank_class: RankClass
    xi_norms: Tuple[float, float, float]

    @property
    def present(self) -> bool:
        return self.direction is not None


# ---------- per-point and accumulated matrices ----------
def point_matrix(r_ij, x_i, x_j) -> np.ndarray:
    th = theta(r_ij, x_i, x_j)
    return th[..., :, None] * th[..., None, :]


def point_matrix_expanded(r_ij, x_i, x_j) -> np.ndarray:
    """
    Same matrix written without factoring:
    -X_j theta^T [R X_i]x + R X_i theta^T [X_j]x + ||theta||^2 I.
    """
    a = hom(x_i) @ np.asarray(r_ij, dtype=float).T
    b = hom(x_j)
    th = np.cross(a, b)
    # theta^T [v]x == (theta x v)^T
    term_a = -b[..., :, None] * np.cross(th, a)[..., None, :]
    term_b = a[..., :, None] * np.cross(th, b)[..., None, :]
    sq = np.sum(th * th, axis=-1)[..., None, None]
    return term_a + term_b + sq * np.eye(3)


def accumulate_ps(pair: MatchedPair, r_ij) -> ObservationSummary:
    th = theta(r_ij, pair.x_i, pair.x_j)
    # sum of outer products == M M^T with theta stacked as columns of M
    return ObservationSummary.from_matrix(th.T @ th, len(pair))


# ---------- closed-form eigenvalues ----------
def eigenvalues_cardano(sym) -> np.ndarray:
    """All three eigenvalues of a symmetric 3x3 matrix, ascending."""
    a = np.asarray(sym, dtype=float)
    a = 0.5 * (a + a.T)
    tr = float(np.trace(a))
    mean = tr / 3.0
    dev = a - mean * np.eye(3)
    p = -0.5 * float(np.sum(dev * dev))
    ref = max(tr * tr, float(np.sum(a * a)))
    if ref == 0.0 or abs(p) <= CARDANO_P_TOL * ref:
        return np.full(3, mean)
    s = np.sqrt(-p / 3.0)
    arg = float(np.linalg.det(dev)) / (2.0 * s ** 3)
    if abs(arg) > 1.0 + CARDANO_CLAMP:
        raise NumericalError(f"Cardano argument {arg!r} outside [-1, 1]")
    phi = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
    hi = mean + 2.0 * s * np.cos(phi)
    if arg >= 0.0:
        # the two smaller roots may nearly coincide, where the arccos branch
        # loses digits; deflate the well-separated largest one instead
        pair = _deflated_pair(a, hi)
        if pair is not None:
            return np.sort(np.array([pair[0], pair[1], hi]))
    lo = mean + 2.0 * s * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = tr - hi - lo
    return np.sort(np.array([lo, mid, hi]))


def _deflated_pair(a: np.ndarray, top: float):
    rows = a - top * np.eye(3)
    cands = np.array([np.cross(rows[0], rows[1]), np.cross(rows[0], rows[2]), np.cross(rows[1], rows[2])])
    norms = np.linalg.norm(cands, axis=1)
    k = int(np.argmax(norms))
    if norms[k] == 0.0:
        return None
    u = cands[k] / norms[k]
    e = np.zeros(3)
    e[int(np.argmin(np.abs(u)))] = 1.0
    q1 = e - (e @ u) * u
    q1 /= np.linalg.norm(q1)
    q = np.stack([q1, np.cross(u, q1)], axis=1)
    b = q.T @ a @ q
    centre = 0.5 * (b[0, 0] + b[1, 1])
    radius = np.hypot(0.5 * (b[0, 0] - b[1, 1]), 0.5 * (b[0, 1] + b[1, 0]))
    return centre - radius, centre + radius


def lambda_min_cardano(s: ObservationSummary) -> float:
    return float(eigenvalues_cardano(s.ps)[0])


def rank_classify(s: ObservationSummary) -> RankClass:
    eig = eigenvalues_cardano(s.ps)
    thr = TOL_RANK * max(s.trace, EPS_ABS)
    count = int(np.sum(eig > thr))
    if count == 0:
        return RankClass.RANK0
    if count == 1:
        return RankClass.RANK1
    return RankClass.RANK2


def canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0.0 else -v
    return v


def min_eigenvector_xi(s: ObservationSummary, lambda_min: float) -> TranslationSolution:
    rows = s.ps - lambda_min * np.eye(3)
    xis = np.array([
        np.cross(rows[0], rows[1]),
        np.cross(rows[0], rows[2]),
        np.cross(rows[1], rows[2]),
    ])
    norms = np.linalg.norm(xis, axis=1)
    rank = rank_classify(s)
    best = float(norms.max())
    if rank is not RankClass.RANK2 or best < TOL_XI * max(s.trace * s.trace, EPS_ABS):
        return TranslationSolution(None, float(lambda_min), rank, tuple(float(n) for n in norms))
    # lowest index among near-ties
    k = int(np.flatnonzero(norms >= best - 1e-12 * best)[0])
    direction = canonical_sign(xis[k] / norms[k])
    return TranslationSolution(direction, float(lambda_min), rank, tuple(float(n) for n in norms))


def solve_translation(pair: MatchedPair, r_ij) -> Tuple[ObservationSummary, TranslationSolution]:
    summary = accumulate_ps(pair, r_ij)
    return summary, min_eigenvector_xi(summary, lambda_min_cardano(summary))
