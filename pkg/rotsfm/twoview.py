#!/usr/bin/env python3
"""
Two-view reprojection residuals without 3D points, and relative-rotation
optimization on top of them.

A correspondence (x_i, x_j) together with (R_ij, t) predicts where x_j should
be seen without triangulating:

    Y = ||[X_j]x t|| R X_i + ||theta|| t,   predicted bearing = Y / ||Y||

TRRM replaces t by a function of the rotation and the observations, which
leaves a residual that depends on the rotation alone. The analytic choice is
the null vector of P^S(R_ij); the refined choice starts there and descends
on the residual itself, so the rotation-only cost at R is the local minimum
over translations.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger

from rotsfm.config import (COORD_EPS, FD_STEP, THETA_EPS, THRESHOLD_PR, THRESHOLD_RS,
                           TRANSLATION_HALVINGS, TRANSLATION_SWEEPS, TRANSLATION_TOL, LMConfig)
from rotsfm.detect import SceneLabel, classify
from rotsfm.errors import DataError, DegenerateError
from rotsfm.geometry import (E3, MatchedPair, as_rotation, exp_so3, hom, project_to_so3,
                             skew, unit)
from rotsfm.lm import finite_difference_jacobian, huber_blocks, levenberg_marquardt
from rotsfm.translation import (ObservationSummary, canonical_sign, lambda_min_cardano,
                                min_eigenvector_xi, solve_translation, accumulate_ps)

FORMS = ("bearing", "coordinate")
TRANSLATIONS = ("analytic", "refined")


class PoseOnlyProjection(NamedTuple):
    coord: np.ndarray     # (..., 3) with third component 1; nan where invalid
    bearing: np.ndarray   # (..., 3) unit
    valid: np.ndarray     # (...,) coordinate form defined


@dataclass(frozen=True, eq=False)
class ResidualVector:
    blocks: np.ndarray    # (m, 6): view-i block then view-j block
    track_ids: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    @property
    def cost(self) -> float:
        return float(np.sum(self.blocks * self.blocks))


@dataclass(frozen=True, eq=False)
class TwoViewProblem:
    pair: MatchedPair
    r_init: np.ndarray
    scene_label: SceneLabel

    def __post_init__(self):
        object.__setattr__(self, "r_init", as_rotation(self.r_init, "initial rotation"))
        object.__setattr__(self, "scene_label", SceneLabel(self.scene_label))

    @classmethod
    def build(cls, pair: MatchedPair, r_init, threshold_rs: float = THRESHOLD_RS,
              threshold_pr: float = THRESHOLD_PR) -> "TwoViewProblem":
        report = classify(pair, r_init, threshold_rs, threshold_pr)
        return cls(pair, r_init, report.label)


@dataclass
class TwoViewResult:
    rotation: np.ndarray
    cost_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""

    @property
    def cost(self) -> float:
        return self.cost_trace[-1] if self.cost_trace else float("nan")


@dataclass
class PAResult:
    rotation: np.ndarray
    translation: np.ndarray
    cost_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False
    message: str = ""


# ---------- pose-only projections ----------
def _col(v) -> np.ndarray:
    return np.asarray(v, dtype=float)[..., None]


def pose_only_coord(r_ij, t_dir, x_i, x_j) -> PoseOnlyProjection:
    r_ij = np.asarray(r_ij, dtype=float)
    a = hom(x_i) @ r_ij.T
    b = hom(x_j)
    th = np.cross(a, b)
    th_n = np.linalg.norm(th, axis=-1)

    t = np.asarray(t_dir, dtype=float)
    t_n = np.linalg.norm(t)
    if t_n == 0.0:
        y = a
    else:
        t = t / t_n
        bt = np.cross(b, t)
        # orient t so the point sits in front of view i: theta . ([X_j]x t) >= 0
        sign = np.where(np.sum(th * bt, axis=-1) < 0.0, -1.0, 1.0)
        y = _col(np.linalg.norm(bt, axis=-1)) * a + _col(th_n * sign) * t
        flat = th_n <= THETA_EPS * np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
        y = np.where(_col(flat), a, y)

    y_n = np.linalg.norm(y, axis=-1)
    valid = np.abs(y[..., 2]) >= COORD_EPS * y_n
    safe = np.where(valid, y[..., 2], 1.0)
    coord = np.where(_col(valid), y / _col(safe), np.nan)
    return PoseOnlyProjection(coord, y / _col(y_n), np.asarray(valid))


def _check_form(form: str):
    if form not in FORMS:
        raise DataError(f"unknown residual form {form!r}; expected one of {FORMS}")


def _check_translation(translation: str):
    if translation not in TRANSLATIONS:
        raise DataError(f"unknown translation mode {translation!r}; expected one of {TRANSLATIONS}")


def _block(obs, proj: PoseOnlyProjection, form: str) -> np.ndarray:
    if form == "bearing":
        return unit(hom(obs)) - proj.bearing
    return hom(obs) - proj.coord


def pa_residual(r_ij, t_dir, x_i, x_j, form: str = "bearing") -> np.ndarray:
    """Stacked [view-i block, view-j block]; shape (6,) or (m, 6)."""
    _check_form(form)
    r_ij = np.asarray(r_ij, dtype=float)
    t = np.asarray(t_dir, dtype=float)
    proj_j = pose_only_coord(r_ij, t, x_i, x_j)
    proj_i = pose_only_coord(r_ij.T, -(r_ij.T @ t), x_j, x_i)
    return np.concatenate([_block(x_i, proj_i, form), _block(x_j, proj_j, form)], axis=-1)


def pure_rotation_residual(r_ij, x_i, x_j, form: str = "bearing") -> np.ndarray:
    return pa_residual(r_ij, np.zeros(3), x_i, x_j, form)


def s_matrix(r_ij, x_i, x_j) -> np.ndarray:
    """-[[X_j]x theta]x [R X_i]x; maps t to ||theta|| Y on noise-free data."""
    a = hom(x_i) @ np.asarray(r_ij, dtype=float).T
    b = hom(x_j)
    th = np.cross(a, b)
    return -skew(np.cross(b, th)) @ skew(a)


def s_matrix_residual(r_ij, t, x_i, x_j) -> np.ndarray:
    """View-j coordinate residual [e3]x [X_j]x S t / (e3 . S t)."""
    st = s_matrix(r_ij, x_i, x_j) @ np.asarray(t, dtype=float)
    num = np.cross(E3, np.cross(hom(x_j), st))
    return num / st[..., 2:3]


# ---------- rotation-only residual ----------
def _retract_direction(t: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return unit(t + _sphere_basis(t) @ delta)


def refine_translation(pair: MatchedPair, r_ij, t0, form: str = "bearing",
                       huber_scale: Optional[float] = None,
                       sweeps: int = TRANSLATION_SWEEPS) -> np.ndarray:
    """
    Gauss-Newton on the translation direction with the rotation held fixed,
    minimizing the same pose-only residual as the optimizers. Only steps that
    lower the cost are taken, so the result is never worse than t0.
    """
    r_ij = np.asarray(r_ij, dtype=float)

    def residual(t, _ctx):
        return huber_blocks(pa_residual(r_ij, t, pair.x_i, pair.x_j, form).reshape(-1), 3,
                            huber_scale)

    t = unit(np.asarray(t0, dtype=float).reshape(3))
    r = residual(t, None)
    cost = float(r @ r)
    if not np.isfinite(cost):
        return canonical_sign(t)
    for _ in range(sweeps):
        jac = finite_difference_jacobian(residual, t, _retract_direction, 2, FD_STEP)
        step = -np.linalg.lstsq(jac, r, rcond=None)[0]
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) < TRANSLATION_TOL:
            break
        for _ in range(TRANSLATION_HALVINGS):
            cand = _retract_direction(t, step)
            rc = residual(cand, None)
            cand_cost = float(rc @ rc)
            if cand_cost < cost:
                break
            step = 0.5 * step
        else:
            break
        t, r, cost = cand, rc, cand_cost
    return canonical_sign(t)


def trrm_translation(problem: TwoViewProblem, r_ij, form: str = "bearing",
                     translation: str = "analytic",
                     huber_scale: Optional[float] = None) -> np.ndarray:
    """Translation direction the rotation-only residual uses at r_ij."""
    _check_translation(translation)
    pair = problem.pair
    _, sol = solve_translation(pair, r_ij)
    if not sol.present:
        raise DegenerateError(
            f"pair {pair.key}: translation direction absent ({sol.rank_class.value})")
    if translation == "analytic":
        return sol.direction
    return refine_translation(pair, r_ij, sol.direction, form, huber_scale)


def trrm_residual(problem: TwoViewProblem, r_ij, form: str = "bearing",
                  translation: str = "analytic",
                  huber_scale: Optional[float] = None) -> ResidualVector:
    pair = problem.pair
    if problem.scene_label is SceneLabel.ROTATION_SINGULAR:
        raise DegenerateError(f"pair {pair.key} is rotation-singular; no residual defined")
    if problem.scene_label is SceneLabel.PURE_ROTATION_LIKE:
        blocks = pure_rotation_residual(r_ij, pair.x_i, pair.x_j, form)
    else:
        t = trrm_translation(problem, r_ij, form, translation, huber_scale)
        blocks = pa_residual(r_ij, t, pair.x_i, pair.x_j, form)
    return ResidualVector(np.atleast_2d(blocks), pair.track_ids)


def trrm_cost(problem: TwoViewProblem, r_ij, form: str = "bearing",
              translation: str = "analytic") -> float:
    return trrm_residual(problem, r_ij, form, translation).cost


def _retract_rotation(r: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return exp_so3(delta) @ r


def optimize_two_view(problem: TwoViewProblem, cfg: Optional[LMConfig] = None,
                      form: str = "bearing", translation: str = "refined") -> TwoViewResult:
    """
    LM over the relative rotation alone. The translation is re-solved inside
    every residual evaluation: "analytic" takes the null vector of P^S(R),
    "refined" polishes it on the reprojection residual, which puts the optimum
    where the joint rotation and translation adjustment puts it.
    """
    cfg = cfg or LMConfig.two_view()
    _check_form(form)
    _check_translation(translation)
    if problem.scene_label is SceneLabel.ROTATION_SINGULAR:
        logger.info("pair {}: rotation-singular scene, rotation left unchanged", problem.pair.key)
        return TwoViewResult(problem.r_init.copy(), [], 0, False, "rotation-singular scene skipped")

    def residual(r, _ctx):
        blocks = trrm_residual(problem, r, form, translation, cfg.huber_scale)
        return huber_blocks(blocks.flat, 3, cfg.huber_scale)

    out = levenberg_marquardt(residual, problem.r_init, _retract_rotation, 3, cfg,
                              normalize=project_to_so3)
    logger.debug("pair {}: {} after {} iterations", problem.pair.key, out.message, out.iterations)
    return TwoViewResult(out.state, out.cost_trace, out.iterations, out.converged, out.message)


# ---------- baselines ----------
def initial_translation(pair: MatchedPair, r_ij) -> np.ndarray:
    """Analytic translation at r_ij, or the x axis when it is absent."""
    _, sol = solve_translation(pair, r_ij)
    return sol.direction if sol.present else np.array([1.0, 0.0, 0.0])


def _sphere_basis(t: np.ndarray) -> np.ndarray:
    e = np.zeros(3)
    e[int(np.argmin(np.abs(t)))] = 1.0
    b1 = unit(e - (e @ t) * t)
    return np.stack([b1, np.cross(t, b1)], axis=1)


def _retract_pose(state: Tuple[np.ndarray, np.ndarray], delta: np.ndarray):
    r, t = state
    return exp_so3(delta[:3]) @ r, _retract_direction(t, delta[3:])


def optimize_two_view_pa(problem: TwoViewProblem, t_init, cfg: Optional[LMConfig] = None,
                         form: str = "bearing") -> PAResult:
    """Joint rotation and translation-direction adjustment (5 DoF)."""
    cfg = cfg or LMConfig.two_view()
    _check_form(form)
    t0 = np.asarray(t_init, dtype=float).reshape(3)
    if np.linalg.norm(t0) == 0.0:
        raise DataError("initial translation must be nonzero")
    pair = problem.pair

    def residual(state, _ctx):
        r, t = state
        return huber_blocks(pa_residual(r, t, pair.x_i, pair.x_j, form).reshape(-1), 3,
                            cfg.huber_scale)

    def normalize(state):
        return project_to_so3(state[0]), state[1]

    out = levenberg_marquardt(residual, (problem.r_init, unit(t0)), _retract_pose, 5, cfg,
                              normalize=normalize)
    r, t = out.state
    jac = finite_difference_jacobian(residual, out.state, _retract_pose, 5, cfg.fd_step)
    rot_scale = np.linalg.norm(jac[:, :3])
    degenerate = bool(np.linalg.norm(jac[:, 3:]) <= 1e-6 * max(rot_scale, 1e-300))
    if degenerate:
        logger.warning("pair {}: translation direction not identifiable", pair.key)
    return PAResult(r, canonical_sign(t), out.cost_trace, out.iterations, out.converged,
                    degenerate, out.message)


def _min_direction(summary: ObservationSummary) -> np.ndarray:
    sol = min_eigenvector_xi(summary, lambda_min_cardano(summary))
    if sol.present:
        return sol.direction
    return np.linalg.eigh(summary.ps)[1][:, 0]


def optimize_two_view_eigen(problem: TwoViewProblem, cfg: Optional[LMConfig] = None) -> TwoViewResult:
    """
    Minimize the smallest eigenvalue of P^S(R). The residual is theta_k . v
    with v the current minimum eigenvector, so its squared norm is lambda_min.
    """
    cfg = cfg or LMConfig.two_view()
    pair = problem.pair
    if problem.scene_label is SceneLabel.ROTATION_SINGULAR:
        return TwoViewResult(problem.r_init.copy(), [], 0, False, "rotation-singular scene skipped")

    def prepare(r):
        return _min_direction(accumulate_ps(pair, r))

    def residual(r, v_ref):
        summary = accumulate_ps(pair, r)
        v = _min_direction(summary)
        if v_ref is not None and v @ v_ref < 0.0:
            v = -v
        th = np.cross(hom(pair.x_i) @ r.T, hom(pair.x_j))
        return th @ v

    out = levenberg_marquardt(residual, problem.r_init, _retract_rotation, 3, cfg,
                              prepare=prepare, normalize=project_to_so3)
    return TwoViewResult(out.state, out.cost_trace, out.iterations, out.converged, out.message)
