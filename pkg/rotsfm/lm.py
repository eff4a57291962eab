#!/usr/bin/env python3
"""
Levenberg-Marquardt on a manifold, shared by the two-view and multi-view
optimizers.

The driver never sees coordinates of the state itself: it only calls
`retract(state, delta)` with a local update of dimension `dim`. Jacobians
default to central finite differences of the full residual along those local
coordinates, so anything the residual recomputes internally (the analytic
translation, for instance) is re-solved inside every difference.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from loguru import logger

from rotsfm.config import LMConfig
from rotsfm.errors import LINALG_FAILURES, NumericalError

Residual = Callable[[Any, Any], np.ndarray]
Retract = Callable[[Any, np.ndarray], Any]


@dataclass
class LMResult:
    state: Any
    cost: float
    cost_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""


# ---------- robust loss ----------
def huber_blocks(r: np.ndarray, block: int, scale: Optional[float]) -> np.ndarray:
    """Rescale each residual block so its squared norm equals the Huber loss."""
    if scale is None:
        return r
    b = r.reshape(-1, block)
    n = np.linalg.norm(b, axis=1)
    big = n > scale
    w = np.ones_like(n)
    w[big] = np.sqrt(2.0 * scale * n[big] - scale * scale) / n[big]
    return (b * w[:, None]).reshape(r.shape)


# ---------- Jacobians ----------
def finite_difference_jacobian(residual: Residual, state, retract: Retract, dim: int,
                               h: float, ctx=None) -> np.ndarray:
    cols = []
    for k in range(dim):
        d = np.zeros(dim)
        d[k] = h
        plus = residual(retract(state, d), ctx)
        minus = residual(retract(state, -d), ctx)
        cols.append((plus - minus) / (2.0 * h))
    return np.stack(cols, axis=1)


def richardson_jacobian(residual: Residual, state, retract: Retract, dim: int,
                        h: float, ctx=None) -> np.ndarray:
    coarse = finite_difference_jacobian(residual, state, retract, dim, h, ctx)
    fine = finite_difference_jacobian(residual, state, retract, dim, 0.5 * h, ctx)
    return (4.0 * fine - coarse) / 3.0


# ---------- linear step ----------
def _damped_step(jac, grad: np.ndarray, lam: float) -> np.ndarray:
    if scipy.sparse.issparse(jac):
        h = (jac.T @ jac).tocsc()
        diag = h.diagonal()
        floor = 1e-12 * max(float(diag.max(initial=0.0)), 1e-300)
        a = h + scipy.sparse.diags(lam * np.maximum(diag, floor))
        return -scipy.sparse.linalg.spsolve(a.tocsc(), grad)
    h = jac.T @ jac
    diag = np.diag(h)
    floor = 1e-12 * max(float(diag.max(initial=0.0)), 1e-300)
    a = h + np.diag(lam * np.maximum(diag, floor))
    try:
        return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(a), grad)
    except (np.linalg.LinAlgError, ValueError):
        return -np.linalg.lstsq(a, grad, rcond=None)[0]


def levenberg_marquardt(
    residual: Residual,
    state0,
    retract: Retract,
    dim: int,
    cfg: LMConfig,
    prepare: Optional[Callable[[Any], Any]] = None,
    jacobian: Optional[Callable[[Any, Any], Any]] = None,
    normalize: Optional[Callable[[Any], Any]] = None,
) -> LMResult:
    """
    Minimize ||residual(state, ctx)||^2.

    prepare(state) -> ctx is called once per outer iteration; the residual
    treats ctx as frozen, so every cost compared inside one iteration is
    measured on the same terms. jacobian(state, ctx) overrides finite
    differences and may return a scipy.sparse matrix. normalize(state) runs
    after every `cfg.reortho_every` accepted steps.

    Linear-algebra failures raised anywhere inside come out as NumericalError.
    """
    try:
        return _minimize(residual, state0, retract, dim, cfg, prepare, jacobian, normalize)
    except LINALG_FAILURES as exc:
        raise NumericalError(f"{type(exc).__name__} during optimization: {exc}") from exc


def _minimize(residual: Residual, state0, retract: Retract, dim: int, cfg: LMConfig,
              prepare, jacobian, normalize) -> LMResult:
    state = state0
    ctx = prepare(state) if prepare else None
    r = residual(state, ctx)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NumericalError("non-finite cost at the initial estimate")

    trace = [cost]
    lam = cfg.damping_init
    accepted = 0
    k = 0
    while k < cfg.k_max:
        jac = (jacobian(state, ctx) if jacobian
               else finite_difference_jacobian(residual, state, retract, dim, cfg.fd_step, ctx))
        grad = jac.T @ r
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient at iteration {k}")
        if cost == 0.0 or not np.any(grad):
            return LMResult(state, cost, trace, k, True, "zero gradient")

        while True:
            delta = _damped_step(jac, grad, lam)
            if np.linalg.norm(delta) < cfg.step_tol:
                return LMResult(state, cost, trace, k, True, "step below tolerance")
            cand = retract(state, delta)
            rc = residual(cand, ctx)
            cand_cost = float(rc @ rc)
            if np.isfinite(cand_cost) and cand_cost < cost:
                break
            lam *= cfg.damping_up
            if lam > cfg.damping_max:
                logger.warning("LM damping overflow after {} iterations, cost {:.6e}", k, cost)
                return LMResult(state, cost, trace, k, False, "damping overflow")

        rel = (cost - cand_cost) / cost
        state = cand
        accepted += 1
        if normalize and accepted % cfg.reortho_every == 0:
            state = normalize(state)
        lam = max(lam * cfg.damping_down, 1e-15)
        k += 1
        trace.append(cand_cost)
        logger.debug("LM it {:3d}  cost {:.6e}  damping {:.1e}", k, cand_cost, lam)
        if rel < cfg.epsilon:
            return LMResult(state, cand_cost, trace, k, True, "relative cost change below epsilon")

        if prepare:
            ctx = prepare(state)
        r = residual(state, ctx)
        cost = float(r @ r)
        if not np.isfinite(cost):
            raise NumericalError(f"non-finite cost at iteration {k}")

    return LMResult(state, cost, trace, k, False, "iteration limit")
