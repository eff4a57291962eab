#!/usr/bin/env python3
"""
Command-line front end.

    rotsfm simulate             scene spec flags -> scene file
    rotsfm detect               scene file -> one JSON line per edge
    rotsfm optimize-two-view    scene file -> refined relative rotation
    rotsfm optimize-multi-view  scene file -> refined global rotations
    rotsfm benchmark            run-spec file -> result CSV (+ summary CSV)
    rotsfm eval                 two rotation files -> per-view and mean error
                                (plain per-view angle; --align removes the gauge first)

Results go to stdout (JSON) or to files; logs go to stderr.
Exit codes: 0 ok, 1 usage, 2 bad data, 3 degenerate or numerical failure.
"""

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from rotsfm.averaging import GlobalRotations, aligned_errors, init_rotations
from rotsfm.benchmark import (RunSpec, monte_carlo, spec_record, summarize, summary_path,
                              write_table)
from rotsfm.config import (BENCH_PERTURB, HUBER_SCALE, THRESHOLD_PR, THRESHOLD_RS, LMConfig,
                           merge_settings, read_config)
from rotsfm.detect import classify
from rotsfm.errors import LINALG_FAILURES, DataError, NumericalError, RotsfmError, UsageError
from rotsfm.geometry import quaternion_from_rotation, rotation_error
from rotsfm.multiview import f_grrm, optimize_global
from rotsfm.scene_io import parse_scene, read_rotations, scene_file_from_generated, write_rotations, write_scene
from rotsfm.simulate import SceneKind, SceneSpec, generate, perturb_relative, perturb_rotation
from rotsfm.twoview import (TRANSLATIONS, TwoViewProblem, initial_translation, optimize_two_view,
                            optimize_two_view_eigen, optimize_two_view_pa)

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> <level>{level: <7}</level> {message}"
LOG_LEVELS = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ----------------------------- helpers -----------------------------
def _setup_logging(level: str):
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    logger.enable("rotsfm")


def _emit(record: Mapping[str, Any]):
    print(json.dumps(record, sort_keys=False))


def _settings(args, defaults: Dict[str, Any]) -> Dict[str, Any]:
    """defaults < --config file < explicit flags."""
    file_values = read_config(args.config, defaults) if args.config else {}
    flags = {k: getattr(args, k, None) for k in defaults}
    return merge_settings(defaults, file_values, flags)


def _quat(r) -> List[float]:
    return [float(v) for v in quaternion_from_rotation(r)]


def _lm_config(base: LMConfig, huber) -> LMConfig:
    if huber is None:
        return base
    return base.with_settings({"huber_scale": HUBER_SCALE if huber is True else float(huber)})


def _parse_init(spec: str) -> Tuple[str, Any]:
    scheme, _, value = spec.partition(":")
    if scheme == "gt-perturb":
        try:
            rad = float(value) if value else BENCH_PERTURB
        except ValueError:
            raise UsageError(f"--init gt-perturb needs an angle in radians, got {value!r}") from None
        if rad < 0:
            raise UsageError("--init gt-perturb angle must be non-negative")
        return scheme, rad
    if scheme == "file" and value:
        return scheme, Path(value)
    raise UsageError(f"unsupported --init {spec!r}; use gt-perturb:<rad> or file:<path>")


def _need_gt(graph, what: str):
    if graph.poses_gt is None:
        raise DataError(f"{what} needs ground-truth cameras in the scene file")
    return {v: p.rotation for v, p in graph.poses_gt.items()}


# ----------------------------- commands -----------------------------
SIMULATE_DEFAULTS = {f.name: f.default for f in fields(SceneSpec)}
SIMULATE_DEFAULTS["kind"] = SceneKind.STANDARD.value


def cmd_simulate(args):
    s = _settings(args, SIMULATE_DEFAULTS)
    spec = SceneSpec(**s)
    scene = generate(spec)
    out = scene_file_from_generated(scene, noisy=not args.clean)
    write_scene(args.out, out)
    logger.info("wrote {} ({} cameras, {} tracks)", args.out, len(out.cameras), len(out.tracks))
    _emit({"out": str(args.out), "kind": spec.kind.value, "n_cameras": len(out.cameras),
           "n_edges": len(out.edges or []), "n_tracks": len(out.tracks), "seed": spec.seed})


def cmd_detect(args):
    s = _settings(args, {"threshold_rs": THRESHOLD_RS, "threshold_pr": THRESHOLD_PR})
    scene = parse_scene(args.scene)
    graph = scene.to_graph()
    rots = read_rotations(args.rotations) if args.rotations else scene.rotations()
    for key in sorted(graph.edges):
        i, j = key
        if i not in rots or j not in rots:
            raise DataError(f"no rotation for edge {key}")
        report = classify(graph.edges[key], rots[j] @ rots[i].T, s["threshold_rs"], s["threshold_pr"])
        _emit(report.to_record(key))


def cmd_optimize_two_view(args):
    s = _settings(args, {"init": f"gt-perturb:{BENCH_PERTURB}", "seed": 0, "form": "bearing",
                         "method": "trrm", "translation": "refined",
                         "threshold_rs": THRESHOLD_RS, "threshold_pr": THRESHOLD_PR})
    graph = parse_scene(args.scene).to_graph()
    if not graph.edges:
        raise DataError("scene has no edges")
    key = tuple(args.pair) if args.pair else min(graph.edges)
    i, j = min(key), max(key)
    if (i, j) not in graph.edges:
        raise DataError(f"scene has no edge {i}-{j}")
    pair = graph.edges[(i, j)]

    scheme, value = _parse_init(s["init"])
    gt_rel = None
    if graph.poses_gt is not None:
        gt_rel = graph.poses_gt[j].rotation @ graph.poses_gt[i].rotation.T
    if scheme == "gt-perturb":
        if gt_rel is None:
            raise DataError("--init gt-perturb needs ground-truth cameras in the scene file")
        r0 = perturb_rotation(gt_rel, value, int(s["seed"]))
    else:
        rots = read_rotations(value)
        if i not in rots or j not in rots:
            raise DataError(f"{value} has no rotation for views {i} and {j}")
        r0 = rots[j] @ rots[i].T

    cfg = _lm_config(LMConfig.two_view(), args.huber)
    problem = TwoViewProblem.build(pair, r0, s["threshold_rs"], s["threshold_pr"])
    method = s["method"]
    if method == "pa":
        res = optimize_two_view_pa(problem, initial_translation(pair, r0), cfg, s["form"])
    elif method == "eigen":
        res = optimize_two_view_eigen(problem, cfg)
    elif method == "trrm":
        res = optimize_two_view(problem, cfg, s["form"], s["translation"])
    else:
        raise UsageError(f"unknown method {method!r}")

    record = {
        "pair": f"{i}-{j}", "method": method, "scene_label": problem.scene_label.value,
        "quaternion_wxyz": _quat(res.rotation), "cost_trace": [float(c) for c in res.cost_trace],
        "iterations": res.iterations, "converged": res.converged, "message": res.message,
    }
    if gt_rel is not None:
        record["init_error_rad"] = rotation_error(gt_rel, r0)
        record["error_rad"] = rotation_error(gt_rel, res.rotation)
    if args.out:
        write_rotations(args.out, {i: np.eye(3), j: res.rotation})
    _emit(record)


def cmd_optimize_multi_view(args):
    s = _settings(args, {"init": f"gt-perturb:{BENCH_PERTURB}", "seed": 0, "form": "coordinate"})
    graph = parse_scene(args.scene).to_graph()
    graph.require_connected()
    scheme, value = _parse_init(s["init"])
    if scheme == "gt-perturb":
        gt = _need_gt(graph, "--init gt-perturb")
        relative = perturb_relative(gt, graph.edges, value, int(s["seed"]))
        init = init_rotations(graph, relative)
    else:
        rots = read_rotations(value)
        missing = [v for v in graph.view_ids if v not in rots]
        if missing:
            raise DataError(f"{value} has no rotation for views {missing}")
        init = GlobalRotations({v: rots[v] for v in graph.view_ids}, graph.view_ids[0])

    cfg = _lm_config(LMConfig.multi_view(), args.huber)
    res = optimize_global(graph, init, cfg, s["form"])
    record = {
        "n_views": len(graph.view_ids), "n_edges": len(graph.edges),
        "cost_initial": f_grrm(graph, init, s["form"]),
        "cost_final": res.cost_trace[-1] if res.cost_trace else None,
        "iterations": res.iterations, "converged": res.converged, "message": res.message,
    }
    if graph.poses_gt is not None:
        gt = {v: p.rotation for v, p in graph.poses_gt.items()}
        before = aligned_errors(init.rotations, gt)
        after = aligned_errors(res.rotations.rotations, gt)
        record["init_mean_error_rad"] = float(np.mean(list(before.values())))
        record["mean_error_rad"] = float(np.mean(list(after.values())))
    if args.out:
        write_rotations(args.out, res.rotations.rotations)
    _emit(record)


def cmd_benchmark(args):
    spec = RunSpec.from_file(args.run_spec, seed=args.seed, trials=args.trials)
    table = monte_carlo(spec, workers=args.workers, progress=not args.quiet)
    write_table(table, args.out)
    summary = summarize(table)
    write_table(summary, summary_path(args.out))
    failures = int(table["error_rad"].isna().sum())
    logger.info("wrote {} rows to {} ({} failed)", len(table), args.out, failures)
    _emit({"out": str(args.out), "summary": str(summary_path(args.out)), "rows": len(table),
           "failures": failures, "spec": spec_record(spec)})


def cmd_eval(args):
    ref = read_rotations(args.reference)
    est = read_rotations(args.estimate)
    common = sorted(set(ref) & set(est))
    if not common:
        raise DataError("the rotation files share no view ids")
    if args.align:
        errors = aligned_errors(est, ref)
    else:
        errors = {v: rotation_error(ref[v], est[v]) for v in common}
    _emit({"per_view": {str(v): float(e) for v, e in errors.items()},
           "mean_error_rad": float(np.mean(list(errors.values()))), "n_views": len(errors)})


# ----------------------------- parser -----------------------------
def _common(p):
    p.add_argument("--config", type=Path, default=None, help="key = value settings file")
    p.add_argument("--log-level", type=str.upper, default="INFO", choices=LOG_LEVELS)
    p.add_argument("-v", "--verbose", action="store_true", help="same as --log-level DEBUG")


def build_parser():
    p = _Parser(prog="rotsfm", description="Rotation-only structure-from-motion toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    s1 = sub.add_parser("simulate", help="Generate a synthetic scene file")
    _common(s1)
    s1.add_argument("--kind", choices=[k.value for k in SceneKind], default=None)
    s1.add_argument("--n-cameras", dest="n_cameras", type=int, default=None)
    s1.add_argument("--n-points", dest="n_points", type=int, default=None)
    s1.add_argument("--noise", dest="noise_max_px", type=float, default=None, help="max pixel noise")
    s1.add_argument("--noise-mode", dest="noise_mode", choices=["radial", "per-axis"], default=None)
    s1.add_argument("--focal", dest="focal_px", type=float, default=None)
    s1.add_argument("--image", dest="image_px", type=int, default=None)
    s1.add_argument("--depth", dest="depth_param", type=float, default=None)
    s1.add_argument("--max-angle", dest="max_angle", type=float, default=None)
    s1.add_argument("--rotation-amplitude", dest="rotation_amplitude", type=float, default=None,
                    help="fixed |Euler angle| per axis instead of a uniform draw")
    s1.add_argument("--baseline", type=float, default=None)
    s1.add_argument("--seed", type=int, default=None)
    s1.add_argument("--clean", action="store_true", help="write noise-free observations")
    s1.add_argument("--out", type=Path, required=True)
    s1.set_defaults(func=cmd_simulate)

    s2 = sub.add_parser("detect", help="Label every edge of a scene")
    _common(s2)
    s2.add_argument("scene", type=Path)
    s2.add_argument("--rotations", type=Path, default=None, help="rotation file (default: scene cameras)")
    s2.add_argument("--threshold-rs", dest="threshold_rs", type=float, default=None)
    s2.add_argument("--threshold-pr", dest="threshold_pr", type=float, default=None)
    s2.set_defaults(func=cmd_detect)

    s3 = sub.add_parser("optimize-two-view", help="Refine one relative rotation")
    _common(s3)
    s3.add_argument("scene", type=Path)
    s3.add_argument("--pair", type=int, nargs=2, metavar=("I", "J"), default=None)
    s3.add_argument("--init", default=None, help="gt-perturb:<rad> or file:<path>")
    s3.add_argument("--method", choices=["trrm", "pa", "eigen"], default=None)
    s3.add_argument("--form", choices=["bearing", "coordinate"], default=None)
    s3.add_argument("--translation", choices=list(TRANSLATIONS), default=None,
                    help="trrm only: analytic null vector or refined on the residual")
    s3.add_argument("--huber", nargs="?", const=True, type=float, default=None)
    s3.add_argument("--threshold-rs", dest="threshold_rs", type=float, default=None)
    s3.add_argument("--threshold-pr", dest="threshold_pr", type=float, default=None)
    s3.add_argument("--seed", type=int, default=None)
    s3.add_argument("--out", type=Path, default=None, help="rotation file for views I and J")
    s3.set_defaults(func=cmd_optimize_two_view)

    s4 = sub.add_parser("optimize-multi-view", help="Refine all rotations of a scene")
    _common(s4)
    s4.add_argument("scene", type=Path)
    s4.add_argument("--init", default=None, help="gt-perturb:<rad> or file:<path>")
    s4.add_argument("--form", choices=["bearing", "coordinate"], default=None)
    s4.add_argument("--huber", nargs="?", const=True, type=float, default=None)
    s4.add_argument("--seed", type=int, default=None)
    s4.add_argument("--out", type=Path, default=None, help="rotation file")
    s4.set_defaults(func=cmd_optimize_multi_view)

    s5 = sub.add_parser("benchmark", help="Monte-Carlo run from a run-spec file")
    _common(s5)
    s5.add_argument("run_spec", type=Path)
    s5.add_argument("--workers", type=int, default=1)
    s5.add_argument("--seed", type=int, default=None, help="master seed (overrides the run spec)")
    s5.add_argument("--trials", type=int, default=None)
    s5.add_argument("--quiet", action="store_true", help="no progress bar")
    s5.add_argument("--out", type=Path, required=True)
    s5.set_defaults(func=cmd_benchmark)

    s6 = sub.add_parser("eval", help="Compare two rotation files")
    _common(s6)
    s6.add_argument("reference", type=Path)
    s6.add_argument("estimate", type=Path)
    s6.add_argument("--align", action="store_true",
                    help="rotate the estimate onto the reference first (removes the global gauge)")
    s6.set_defaults(func=cmd_eval)

    return p


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _setup_logging("DEBUG" if args.verbose else args.log_level)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        args.func(args)
    except RotsfmError as exc:
        logger.error("{}", exc)
        return exc.exit_code
    except LINALG_FAILURES as exc:
        logger.error("{}: {}", type(exc).__name__, exc)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
