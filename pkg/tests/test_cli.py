"""
Command-line front end, driven through main() with temporary files.

 Group 1 - simulate and detect
 Group 2 - two-view and multi-view optimization
 Group 3 - benchmark and eval
 Group 4 - exit codes
"""

import json

import numpy as np
import pytest
from loguru import logger

import rotsfm.cli as cli
from rotsfm.cli import main
from rotsfm.geometry import exp_so3, rotation_error
from rotsfm.scene_io import parse_scene, read_rotations, write_rotations
from rotsfm.simulate import perturb_rotation


@pytest.fixture(autouse=True)
def quiet_logger():
    yield
    logger.remove()
    logger.disable("rotsfm")


def _json_lines(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


def _simulate(tmp_path, name, *flags):
    path = tmp_path / name
    assert main(["simulate", "--out", str(path), "--log-level", "warning", *flags]) == 0
    return path


# ── Group 1 ───────────────────────────────────────────────────────────────────

def test_simulate_writes_a_scene(tmp_path, capsys):
    path = _simulate(tmp_path, "std.txt", "--kind", "Standard", "--n-points", "80", "--seed", "3")
    rec = _json_lines(capsys)[-1]
    assert rec["kind"] == "Standard" and rec["n_tracks"] == 80 and rec["seed"] == 3
    sf = parse_scene(path)
    assert len(sf.cameras) == 2 and len(sf.tracks) == 80


def test_simulate_is_reproducible_and_reads_config(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("kind = Holoplane\nn-points = 50\nnoise_max_px = 1.5\nseed = 8\n")
    a = _simulate(tmp_path, "a.txt", "--config", str(cfg))
    b = _simulate(tmp_path, "b.txt", "--config", str(cfg))
    assert a.read_bytes() == b.read_bytes()
    c = _simulate(tmp_path, "c.txt", "--config", str(cfg), "--seed", "9")
    assert c.read_bytes() != a.read_bytes()
    recs = _json_lines(capsys)
    assert recs[0]["kind"] == "Holoplane" and recs[2]["seed"] == 9


def test_detect_labels_holoplane(tmp_path, capsys):
    path = _simulate(tmp_path, "holo.txt", "--kind", "Holoplane", "--n-points", "100")
    capsys.readouterr()
    assert main(["detect", str(path)]) == 0
    (rec,) = _json_lines(capsys)
    assert rec["pair"] == "0-1"
    assert rec["label"] == "RotationSingular"


def test_detect_one_line_per_edge(tmp_path, capsys):
    path = _simulate(tmp_path, "circ.txt", "--kind", "Circular", "--n-cameras", "5",
                     "--n-points", "100")
    n_edges = _json_lines(capsys)[-1]["n_edges"]
    assert main(["detect", str(path)]) == 0
    recs = _json_lines(capsys)
    assert len(recs) == n_edges
    assert all(r["label"] == "Regular" for r in recs)
    assert [r["pair"] for r in recs] == sorted((r["pair"] for r in recs),
                                               key=lambda p: tuple(map(int, p.split("-"))))


# ── Group 2 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("method", ["trrm", "pa", "eigen"])
def test_optimize_two_view(tmp_path, capsys, method):
    scene = _simulate(tmp_path, "std.txt", "--n-points", "120", "--seed", "4")
    out = tmp_path / "rel.txt"
    capsys.readouterr()
    code = main(["optimize-two-view", str(scene), "--method", method, "--init", "gt-perturb:0.05",
                 "--out", str(out)])
    assert code == 0
    (rec,) = _json_lines(capsys)
    assert rec["scene_label"] == "Regular"
    assert rec["init_error_rad"] == pytest.approx(0.05, abs=1e-9)
    assert rec["error_rad"] < 1e-6
    assert len(rec["quaternion_wxyz"]) == 4
    rots = read_rotations(out)
    assert sorted(rots) == [0, 1]
    assert rotation_error(rots[0], np.eye(3)) < 1e-14


def test_optimize_two_view_from_file_init(tmp_path, capsys):
    scene = _simulate(tmp_path, "std.txt", "--n-points", "120", "--seed", "5", "--noise", "1")
    init = tmp_path / "init.txt"
    sf = parse_scene(scene)
    rots = sf.rotations()
    write_rotations(init, {0: rots[0], 1: perturb_rotation(rots[1], 0.03, 1)})
    capsys.readouterr()
    assert main(["optimize-two-view", str(scene), "--init", f"file:{init}", "--huber"]) == 0
    (rec,) = _json_lines(capsys)
    assert rec["error_rad"] < rec["init_error_rad"]


def test_optimize_multi_view(tmp_path, capsys):
    scene = _simulate(tmp_path, "circ.txt", "--kind", "Circular", "--n-cameras", "5",
                      "--n-points", "120", "--seed", "2")
    out = tmp_path / "global.txt"
    capsys.readouterr()
    assert main(["optimize-multi-view", str(scene), "--init", "gt-perturb:0.02", "--seed", "1",
                 "--out", str(out)]) == 0
    (rec,) = _json_lines(capsys)
    assert rec["n_views"] == 5
    assert rec["cost_final"] < rec["cost_initial"]
    assert rec["mean_error_rad"] < rec["init_mean_error_rad"]
    assert sorted(read_rotations(out)) == [0, 1, 2, 3, 4]


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_benchmark_writes_tables(tmp_path, capsys):
    run = tmp_path / "run.cfg"
    run.write_text("scene_kind = Standard\ntrials = 2\nnoise_levels = 0, 1\npoint_counts = 50\n"
                   "methods = init, trrm\n")
    out = tmp_path / "res" / "table.csv"
    assert main(["benchmark", str(run), "--out", str(out), "--quiet", "--seed", "3"]) == 0
    rec = _json_lines(capsys)[-1]
    assert rec["rows"] == 8 and rec["failures"] == 0
    assert rec["spec"]["seed"] == 3
    first = out.read_bytes()
    assert (tmp_path / "res" / "table.summary.csv").is_file()
    assert main(["benchmark", str(run), "--out", str(out), "--quiet", "--seed", "3"]) == 0
    assert out.read_bytes() == first


def test_eval_reports_plain_errors_unless_aligned(tmp_path, capsys):
    scene = _simulate(tmp_path, "circ.txt", "--kind", "Circular", "--n-cameras", "4",
                      "--n-points", "80")
    ref_rots = parse_scene(scene).rotations()
    q = exp_so3(np.array([0.0, 0.3, 0.0]))
    ref, est = tmp_path / "ref.txt", tmp_path / "est.txt"
    write_rotations(ref, ref_rots)
    write_rotations(est, {v: r @ q.T for v, r in ref_rots.items()})
    capsys.readouterr()
    assert main(["eval", str(ref), str(ref)]) == 0
    (rec,) = _json_lines(capsys)
    assert rec["n_views"] == 4 and rec["mean_error_rad"] < 1e-7
    assert main(["eval", str(ref), str(est)]) == 0
    (rec,) = _json_lines(capsys)
    assert all(e == pytest.approx(0.3, abs=1e-7) for e in rec["per_view"].values())
    assert main(["eval", str(ref), str(est), "--align"]) == 0
    (rec,) = _json_lines(capsys)
    assert rec["mean_error_rad"] < 1e-7


# ── Group 4 ───────────────────────────────────────────────────────────────────

def test_usage_errors_exit_1(tmp_path):
    scene = _simulate(tmp_path, "std.txt", "--n-points", "60")
    assert main(["no-such-command"]) == 1
    assert main(["optimize-two-view", str(scene), "--init", "magic"]) == 1
    assert main(["optimize-two-view", str(scene), "--init", "gt-perturb:abc"]) == 1
    assert main(["benchmark", str(scene), "--out", str(tmp_path / "x.csv"), "--workers", "0"]) == 1
    assert main(["simulate"]) == 1


def test_data_errors_exit_2(tmp_path):
    assert main(["detect", str(tmp_path / "missing.txt")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("ROTSFM-SCENE 1 2 0 0 500 1000\nC 0 1 0 0 0 0 0 0 1\n")
    assert main(["detect", str(bad)]) == 2
    scene = _simulate(tmp_path, "std.txt", "--n-points", "60")
    assert main(["optimize-two-view", str(scene), "--pair", "0", "5"]) == 2
    assert main(["simulate", "--kind", "Circular", "--n-cameras", "2", "--out",
                 str(tmp_path / "x.txt")]) == 2


def test_linear_algebra_failures_exit_3(tmp_path, monkeypatch):
    scene = _simulate(tmp_path, "circ.txt", "--kind", "Circular", "--n-cameras", "4",
                      "--n-points", "80")

    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("Matrix is singular")
    monkeypatch.setattr(cli, "optimize_global", broken)
    assert main(["optimize-multi-view", str(scene)]) == 3
