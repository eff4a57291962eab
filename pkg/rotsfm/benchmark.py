#!/usr/bin/env python3
"""
Monte-Carlo driver: seeded scenes, perturbed initial rotations, every method
run on the same trial, one result row per (trial, method).

Trial n of a run gets the seed SeedSequence([master_seed, n]), so a trial's
outcome does not depend on how many workers run or in which order they
finish. Rows are sorted by (trial, method) before they are written.
"""

import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, fields
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import tqdm
from loguru import logger
from scipy.stats import binomtest

from rotsfm.averaging import aligned_errors, init_rotations
from rotsfm.config import (BENCH_PERTURB, BENCH_TRIALS, CSV_DIGITS, DEFAULT_DEPTH, FOCAL_PX, IMAGE_PX,
                           MAX_ANGLE, ORACLE_CHECK_RATE, THRESHOLD_PR, THRESHOLD_RS, LMConfig,
                           read_config)
from rotsfm.detect import detection_matrices
from rotsfm.errors import LINALG_FAILURES, DataError, NumericalError, RotsfmError
from rotsfm.geometry import rotation_error
from rotsfm.multiview import optimize_global
from rotsfm.oracles import jacobi_eigen
from rotsfm.simulate import (SceneKind, SceneSpec, derived_seed, generate, make_rng,
                             perturb_relative, perturb_rotation)
from rotsfm.translation import accumulate_ps, eigenvalues_cardano
from rotsfm.twoview import (TRANSLATIONS, TwoViewProblem, initial_translation, optimize_two_view,
                            optimize_two_view_eigen, optimize_two_view_pa)

TWO_VIEW_METHODS = ("init", "trrm", "pa", "eigen")
MULTI_VIEW_METHODS = ("init", "grrm")
RESULT_COLUMNS = ["trial", "method", "scene_kind", "noise_max_px", "n_points", "rotation_amplitude",
                  "depth_param", "error_rad", "converged", "iterations", "wall_ms"]
SUMMARY_KEYS = ["method", "noise_max_px", "n_points", "rotation_amplitude", "depth_param"]
STREAM_ORACLE = 3


class Case(NamedTuple):
    noise_max_px: float
    n_points: int
    rotation_amplitude: Optional[float]   # None: Euler angles drawn in [-max_angle, max_angle]
    depth_param: Optional[float]          # None: the scene kind's default depth


class Job(NamedTuple):
    trial: int
    noise_max_px: float
    n_points: int
    rotation_amplitude: Optional[float]
    depth_param: Optional[float]


def _floats(values, what: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise DataError(f"{what} must be numbers, got {values!r}") from None


@dataclass(frozen=True)
class RunSpec:
    """
    One Monte-Carlo run. The swept axes are noise_levels, point_counts,
    rotation_amplitudes and depth_params; an empty sweep means a single case
    at the default (uniform Euler draw up to max_angle, depth_param).
    """
    scene_kind: SceneKind = SceneKind.STANDARD
    trials: int = BENCH_TRIALS
    noise_levels: Tuple[float, ...] = (0.0,)
    point_counts: Tuple[int, ...] = (1000,)
    methods: Tuple[str, ...] = ("init", "trrm")
    n_cameras: int = 2
    depth_param: Optional[float] = None
    max_angle: float = MAX_ANGLE
    perturb_rad: float = BENCH_PERTURB
    seed: int = 0
    form: Optional[str] = None
    noise_mode: str = "radial"
    huber_scale: Optional[float] = None
    focal_px: float = FOCAL_PX
    image_px: int = IMAGE_PX
    oracle_check_rate: float = ORACLE_CHECK_RATE
    record_timing: bool = False
    rotation_amplitudes: Tuple[float, ...] = ()
    depth_params: Tuple[float, ...] = ()
    translation: str = "refined"

    def __post_init__(self):
        try:
            object.__setattr__(self, "scene_kind", SceneKind(self.scene_kind))
        except ValueError:
            raise DataError(f"unknown scene kind {self.scene_kind!r}") from None
        object.__setattr__(self, "noise_levels", _floats(self.noise_levels, "noise_levels"))
        object.__setattr__(self, "point_counts", tuple(int(n) for n in self.point_counts))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "rotation_amplitudes",
                           _floats(self.rotation_amplitudes, "rotation_amplitudes"))
        object.__setattr__(self, "depth_params", _floats(self.depth_params, "depth_params"))
        allowed = TWO_VIEW_METHODS if self.scene_kind.two_view else MULTI_VIEW_METHODS
        unknown = [m for m in self.methods if m not in allowed]
        if unknown or not self.methods:
            raise DataError(f"methods {unknown or '[]'} not available for {self.scene_kind.value}; "
                            f"choose from {allowed}")
        if len(set(self.methods)) != len(self.methods):
            raise DataError("duplicate methods")
        if self.trials <= 0 or not self.noise_levels or not self.point_counts:
            raise DataError("trials, noise_levels and point_counts must be non-empty")
        if min(self.noise_levels) < 0 or min(self.point_counts) <= 0:
            raise DataError("noise levels must be >= 0 and point counts > 0")
        if self.perturb_rad < 0:
            raise DataError("perturb_rad must be non-negative")
        if not 0.0 <= self.oracle_check_rate <= 1.0:
            raise DataError("oracle_check_rate must lie in [0, 1]")
        if self.form not in (None, "bearing", "coordinate"):
            raise DataError(f"unknown residual form {self.form!r}")
        if self.translation not in TRANSLATIONS:
            raise DataError(f"unknown translation mode {self.translation!r}")
        if self.rotation_amplitudes and not self.scene_kind.two_view:
            raise DataError("rotation_amplitudes can only be swept for two-view scenes")
        if any(not 0.0 <= a <= np.pi / 2 for a in self.rotation_amplitudes):
            raise DataError("rotation amplitudes must lie in [0, pi/2]")
        if any(d <= 0 for d in self.depth_params):
            raise DataError("depth_params must be positive")

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        out = {f.name: f.default for f in fields(cls)}
        out["scene_kind"] = out["scene_kind"].value
        return out

    @classmethod
    def from_file(cls, path, **overrides) -> "RunSpec":
        values = read_config(path, cls.defaults())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def residual_form(self) -> str:
        if self.form:
            return self.form
        return "bearing" if self.scene_kind.two_view else "coordinate"

    def cases(self) -> List[Case]:
        amplitudes = self.rotation_amplitudes or (None,)
        depths = self.depth_params or (self.depth_param,)
        return [Case(noise, n, a, d) for noise in self.noise_levels for n in self.point_counts
                for a in amplitudes for d in depths]

    def jobs(self) -> List[Job]:
        """Every (case, trial) in run order, with a global trial index."""
        out = []
        for c, case in enumerate(self.cases()):
            out.extend(Job(c * self.trials + t, *case) for t in range(self.trials))
        return out

    def scene_spec(self, job: Job, seed: int) -> SceneSpec:
        return SceneSpec(self.scene_kind, self.n_cameras, job.n_points, job.noise_max_px,
                         self.focal_px, self.image_px, job.depth_param, seed, self.max_angle,
                         noise_mode=self.noise_mode, rotation_amplitude=job.rotation_amplitude)


# ---------- oracle cross-check ----------
def _check_lambda_min(sym: np.ndarray, where: str):
    sym = 0.5 * (sym + sym.T)
    fast = float(eigenvalues_cardano(sym)[0])
    ref = float(jacobi_eigen(sym)[0][0])
    if abs(fast - ref) > 1e-9 * max(1.0, float(np.trace(sym))):
        raise NumericalError(f"{where}: lambda_min {fast:.12e} disagrees with Jacobi {ref:.12e}")


def oracle_check(pair, rotations) -> None:
    g_i, g_j = detection_matrices(pair)
    _check_lambda_min(g_i, f"pair {pair.key} G_i")
    _check_lambda_min(g_j, f"pair {pair.key} G_j")
    for r in rotations:
        _check_lambda_min(accumulate_ps(pair, r).ps, f"pair {pair.key} P^S")


# ---------- one trial ----------
def _row(spec: RunSpec, job: Job, method: str, error: float, converged: bool, iterations: int,
         wall_ms: float) -> Dict[str, Any]:
    depth = job.depth_param if job.depth_param is not None else DEFAULT_DEPTH[spec.scene_kind.value]
    amplitude = job.rotation_amplitude if job.rotation_amplitude is not None else np.nan
    return {
        "trial": job.trial, "method": method, "scene_kind": spec.scene_kind.value,
        "noise_max_px": job.noise_max_px, "n_points": job.n_points,
        "rotation_amplitude": float(amplitude), "depth_param": float(depth),
        "error_rad": float(error), "converged": bool(converged), "iterations": int(iterations),
        "wall_ms": float(wall_ms) if spec.record_timing else 0.0,
    }


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, 1000.0 * (time.perf_counter() - start)


def _two_view_trial(spec: RunSpec, scene, seed: int, cfg: LMConfig):
    pair = scene.first_edge
    r_gt, _ = scene.relative_gt(*pair.key)
    r0 = perturb_rotation(r_gt, spec.perturb_rad, seed)
    problem = TwoViewProblem.build(pair, r0, THRESHOLD_RS, THRESHOLD_PR)
    form = spec.residual_form
    runners = {
        "init": lambda: (r0, True, 0),
        "trrm": lambda: _unpack(optimize_two_view(problem, cfg, form, spec.translation)),
        "pa": lambda: _unpack(optimize_two_view_pa(problem, initial_translation(pair, r0), cfg, form)),
        "eigen": lambda: _unpack(optimize_two_view_eigen(problem, cfg)),
    }
    out = {}
    for method in spec.methods:
        (r, conv, its), ms = _timed(runners[method])
        out[method] = (rotation_error(r_gt, r), conv, its, ms)
    return out, [pair], [r0]


def _unpack(result):
    return result.rotation, result.converged, result.iterations


def _mean_error(est, gt) -> float:
    return float(np.mean(list(aligned_errors(est, gt).values())))


def _multi_view_trial(spec: RunSpec, scene, seed: int, cfg: LMConfig):
    graph = scene.graph
    gt = {v: p.rotation for v, p in scene.poses.items()}
    relative = perturb_relative(gt, graph.edges, spec.perturb_rad, seed)
    (init, ms_init) = _timed(lambda: init_rotations(graph, relative))
    out = {}
    if "init" in spec.methods:
        out["init"] = (_mean_error(init.rotations, gt), True, 0, ms_init)
    if "grrm" in spec.methods:
        res, ms = _timed(lambda: optimize_global(graph, init, cfg, spec.residual_form))
        out["grrm"] = (_mean_error(res.rotations.rotations, gt), res.converged, res.iterations,
                       ms + ms_init)
    keys = sorted(relative)
    return out, [graph.edges[k] for k in keys], [relative[k] for k in keys]


def run_trial(spec: RunSpec, job: Job) -> List[Dict[str, Any]]:
    job = Job(*job)
    seed = derived_seed(spec.seed, job.trial)
    base = LMConfig.two_view() if spec.scene_kind.two_view else LMConfig.multi_view()
    cfg = base.with_settings({"huber_scale": spec.huber_scale})
    try:
        scene = generate(spec.scene_spec(job, seed))
        if spec.scene_kind.two_view:
            results, pairs, rots = _two_view_trial(spec, scene, seed, cfg)
        else:
            results, pairs, rots = _multi_view_trial(spec, scene, seed, cfg)
        if make_rng(seed, STREAM_ORACLE).uniform() < spec.oracle_check_rate:
            for pair, r in zip(pairs, rots):
                oracle_check(pair, [r])
    except (RotsfmError, *LINALG_FAILURES) as exc:
        logger.warning("trial {} failed: {}: {}", job.trial, type(exc).__name__, exc)
        return [_row(spec, job, m, np.nan, False, 0, 0.0) for m in sorted(spec.methods)]
    return [_row(spec, job, m, *results[m]) for m in sorted(spec.methods)]


# ---------- whole runs ----------
def monte_carlo(spec: RunSpec, workers: int = 1, progress: bool = False) -> pd.DataFrame:
    jobs = spec.jobs()
    func = partial(run_trial, spec)
    rows: List[Dict[str, Any]] = []
    logger.info("benchmark: {} trials of {} ({} methods), {} worker(s)", len(jobs),
                spec.scene_kind.value, len(spec.methods), workers)
    with tqdm.tqdm(total=len(jobs), disable=not progress) as pbar:
        if workers > 1:
            with mp.Pool(processes=workers) as pool:
                for chunk in pool.imap(func, jobs, chunksize=max(1, len(jobs) // (8 * workers))):
                    rows.extend(chunk)
                    pbar.update()
        else:
            for job in jobs:
                rows.extend(func(job))
                pbar.update()
    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    return table.sort_values(["trial", "method"], kind="stable").reset_index(drop=True)


def summarize(table: pd.DataFrame) -> pd.DataFrame:
    """
    Per method and swept case: mean and median error over successful trials.
    Case columns that are absent or never set (no amplitude sweep) are not keys.
    """
    keys = [k for k in SUMMARY_KEYS if k in table and table[k].notna().any()]
    ok = table[np.isfinite(table["error_rad"])]
    agg = ok.groupby(keys)["error_rad"].agg(["mean", "median", "count"])
    failures = table.groupby(keys)["error_rad"].apply(lambda s: int(s.isna().sum())).rename("failures")
    out = agg.join(failures, how="outer").reset_index()
    out["count"] = out["count"].fillna(0).astype(int)
    return out.sort_values(keys, kind="stable").reset_index(drop=True)


def sign_test(table: pd.DataFrame, better: str, worse: str) -> float:
    """
    One-sided paired sign-test p-value for `better` having the smaller error.
    Ties and failed trials are dropped.
    """
    wide = table.pivot_table(index="trial", columns="method", values="error_rad", aggfunc="first")
    if better not in wide or worse not in wide:
        raise DataError(f"methods {better!r} and {worse!r} must both be in the table")
    pairs = wide[[better, worse]].dropna()
    wins = int((pairs[better] < pairs[worse]).sum())
    losses = int((pairs[better] > pairs[worse]).sum())
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)


def write_table(table: pd.DataFrame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=f"%.{CSV_DIGITS}g", lineterminator="\n")


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.summary.csv")


def spec_record(spec: RunSpec) -> Dict[str, Any]:
    rec = asdict(spec)
    rec["scene_kind"] = spec.scene_kind.value
    return rec
