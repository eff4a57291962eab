"""
Levenberg-Marquardt driver and Jacobian helpers.

 Group 1 - convergence on small Euclidean problems, periodic normalization
 Group 2 - termination and error paths, linear-algebra failures
 Group 3 - Huber rescaling
 Group 4 - finite-difference Jacobians against analytic and Richardson references
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rotsfm.config import LMConfig
from rotsfm.errors import NumericalError
from rotsfm.geometry import exp_so3
from rotsfm.lm import (finite_difference_jacobian, huber_blocks, levenberg_marquardt,
                       richardson_jacobian)
from rotsfm.simulate import perturb_rotation
from rotsfm.twoview import TwoViewProblem, trrm_residual


def _add(state, delta):
    return state + delta


def _rosenbrock(s, _ctx):
    return np.array([10.0 * (s[1] - s[0] ** 2), 1.0 - s[0]])


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_rosenbrock_converges():
    out = levenberg_marquardt(_rosenbrock, np.array([-1.2, 1.0]), _add, 2, LMConfig(k_max=200, epsilon=1e-14))
    assert out.converged
    assert_allclose(out.state, [1.0, 1.0], atol=1e-6)
    assert all(b <= a for a, b in zip(out.cost_trace, out.cost_trace[1:]))
    assert out.cost_trace[0] == pytest.approx(24.2)


def test_linear_problem_with_analytic_jacobian(rng):
    a = rng.standard_normal((12, 4))
    b = rng.standard_normal(12)
    out = levenberg_marquardt(lambda s, _: a @ s - b, np.zeros(4), _add, 4, LMConfig(),
                              jacobian=lambda s, _: a)
    assert_allclose(out.state, np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-6)


def test_prepare_context_is_passed_through():
    seen = []

    def prepare(state):
        seen.append(float(state[0]))
        return 3.0

    out = levenberg_marquardt(lambda s, c: np.array([s[0] - c]), np.array([0.0]), _add, 1,
                              LMConfig(), prepare=prepare)
    assert out.state[0] == pytest.approx(3.0, abs=1e-6)
    assert seen[0] == 0.0


def test_normalize_runs_on_its_period():
    calls = []

    def normalize(state):
        calls.append(state.copy())
        return state

    cfg = LMConfig(k_max=200, epsilon=1e-14, reortho_every=3)
    out = levenberg_marquardt(_rosenbrock, np.array([-1.2, 1.0]), _add, 2, cfg, normalize=normalize)
    assert out.iterations >= 3
    assert len(calls) == out.iterations // 3


def test_default_period_fits_inside_the_iteration_caps():
    assert LMConfig.two_view().reortho_every < LMConfig.two_view().k_max
    assert LMConfig.multi_view().reortho_every < LMConfig.multi_view().k_max


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_zero_residual_returns_immediately():
    out = levenberg_marquardt(lambda s, _: s.copy(), np.zeros(3), _add, 3, LMConfig())
    assert out.converged and out.iterations == 0
    assert out.cost_trace == [0.0]


def test_non_finite_start_raises():
    with pytest.raises(NumericalError):
        levenberg_marquardt(lambda s, _: np.array([np.nan]), np.zeros(1), _add, 1, LMConfig())


def test_iteration_limit_reports_not_converged():
    out = levenberg_marquardt(_rosenbrock, np.array([-1.2, 1.0]), _add, 2, LMConfig(k_max=2))
    assert not out.converged
    assert out.message == "iteration limit"
    assert out.iterations == 2


@pytest.mark.parametrize("exc", [np.linalg.LinAlgError("singular"), FloatingPointError("overflow"),
                                 ZeroDivisionError("division")])
def test_linear_algebra_failures_become_numerical_errors(exc):
    calls = []

    def jacobian(s, _):
        calls.append(1)
        if len(calls) > 1:
            raise exc
        return np.eye(2)

    with pytest.raises(NumericalError) as info:
        levenberg_marquardt(lambda s, _: s - np.array([1.0, 2.0]), np.zeros(2), _add, 2,
                            LMConfig(epsilon=1e-30), jacobian=jacobian)
    assert info.value.__cause__ is exc
    assert info.value.exit_code == 3


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_huber_blocks():
    r = np.array([0.001, 0.0, 0.0, 3.0, 4.0, 0.0])
    out = huber_blocks(r, 3, 0.01)
    assert_allclose(out[:3], r[:3])
    big = np.linalg.norm(out[3:])
    assert big ** 2 == pytest.approx(2.0 * 0.01 * 5.0 - 0.01 ** 2)
    assert_allclose(out[3:] / big, r[3:] / 5.0)
    assert huber_blocks(r, 3, None) is r


# ── Group 4 ───────────────────────────────────────────────────────────────────

def test_fd_matches_analytic_jacobian():
    def residual(s, _):
        return np.array([np.sin(s[0]) * s[1], np.exp(0.5 * s[1]), s[0] ** 3])

    s = np.array([0.3, -0.7])
    analytic = np.array([
        [np.cos(0.3) * -0.7, np.sin(0.3)],
        [0.0, 0.5 * np.exp(-0.35)],
        [3 * 0.09, 0.0],
    ])
    assert_allclose(finite_difference_jacobian(residual, s, _add, 2, 1e-6), analytic, atol=1e-9)
    assert_allclose(richardson_jacobian(residual, s, _add, 2, 1e-3), analytic, atol=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_trrm_fd_jacobian_matches_richardson(standard_scene, seed):
    pair = standard_scene.first_edge
    r_gt, _ = standard_scene.relative_gt(0, 1)
    problem = TwoViewProblem.build(pair, perturb_rotation(r_gt, 0.02, seed))

    def residual(r, _):
        return trrm_residual(problem, r).flat

    def retract(r, d):
        return exp_so3(d) @ r

    fd = finite_difference_jacobian(residual, problem.r_init, retract, 3, 1e-6)
    ref = richardson_jacobian(residual, problem.r_init, retract, 3, 1e-4)
    scale = np.abs(ref).max()
    assert scale > 0.0
    big = np.abs(ref) > 1e-3 * scale
    assert_allclose(fd[big], ref[big], rtol=1e-5, atol=1e-7 * scale)
