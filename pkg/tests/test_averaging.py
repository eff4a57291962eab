"""
Rotation initialization from relative rotations, and gauge alignment.

 Group 1 - noise-free exactness and input handling
 Group 2 - robustness to a corrupted edge
 Group 3 - alignment and gauge
"""

from itertools import combinations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_rotation
from rotsfm.averaging import (GlobalRotations, align_rotations, aligned_errors, as_mapping,
                              chordal_residuals, init_rotations, relative_from)
from rotsfm.errors import DataError
from rotsfm.geometry import exp_so3, rotation_error
from rotsfm.simulate import perturb_relative


def _gt(scene):
    return {v: p.rotation for v, p in scene.poses.items()}


# ── Group 1 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("irls", [False, True])
def test_exact_relatives_give_exact_rotations(circular_scene, irls):
    gt = _gt(circular_scene)
    rel = relative_from(gt, circular_scene.graph.edges)
    est = init_rotations(circular_scene.graph, rel, irls=irls)
    assert est.gauge == 0
    assert_allclose(est[0], np.eye(3))
    errs = aligned_errors(as_mapping(est), gt)
    assert max(errs.values()) < 1e-10
    for (i, j), r in rel.items():
        assert rotation_error(r, est.relative(i, j)) < 1e-10


def test_reversed_keys_are_transposed(circular_scene):
    gt = _gt(circular_scene)
    rel = {(j, i): gt[i] @ gt[j].T for i, j in circular_scene.graph.edges}
    est = init_rotations(circular_scene.graph, rel)
    assert max(aligned_errors(as_mapping(est), gt).values()) < 1e-10


def test_small_perturbations_stay_small(circular_scene):
    gt = _gt(circular_scene)
    rel = perturb_relative(gt, circular_scene.graph.edges, 0.01, seed=4)
    est = init_rotations(circular_scene.graph, rel)
    assert max(aligned_errors(as_mapping(est), gt).values()) < 0.03


def test_bad_inputs_rejected(circular_scene):
    gt = _gt(circular_scene)
    rel = relative_from(gt, circular_scene.graph.edges)
    with pytest.raises(DataError, match="itself"):
        init_rotations(circular_scene.graph, {**rel, (2, 2): np.eye(3)})
    with pytest.raises(DataError, match="unknown views"):
        init_rotations(circular_scene.graph, {**rel, (0, 99): np.eye(3)})
    with pytest.raises(DataError, match="disconnected"):
        init_rotations(circular_scene.graph, {k: rel[k] for k in list(rel)[:1]})


# ── Group 2 ───────────────────────────────────────────────────────────────────

def test_irls_suppresses_an_outlier_edge(circular_scene):
    gt = _gt(circular_scene)
    keys = list(combinations(sorted(gt), 2))
    rel = relative_from(gt, keys)
    rel[(1, 4)] = exp_so3(np.array([0.0, 1.0, 0.0])) @ rel[(1, 4)]
    plain = aligned_errors(as_mapping(init_rotations(circular_scene.graph, rel, irls=False)), gt)
    robust = aligned_errors(as_mapping(init_rotations(circular_scene.graph, rel, irls=True)), gt)
    assert np.mean(list(robust.values())) < 0.5 * np.mean(list(plain.values()))


def test_chordal_residuals_vanish_when_consistent(circular_scene):
    gt = _gt(circular_scene)
    rel = relative_from(gt, circular_scene.graph.edges)
    assert max(chordal_residuals(gt, rel).values()) < 1e-12


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_alignment_recovers_world_rotation(rng):
    gt = {v: random_rotation(rng) for v in range(5)}
    q = random_rotation(rng)
    est = GlobalRotations(gt, 0).regauged(q)
    w = align_rotations(est.rotations, gt)
    assert rotation_error(q, w) < 1e-12
    assert max(aligned_errors(est.rotations, gt).values()) < 1e-12


def test_alignment_uses_common_views_only(rng):
    gt = {v: random_rotation(rng) for v in range(4)}
    est = {v: r for v, r in gt.items() if v != 3}
    assert sorted(aligned_errors(est, gt)) == [0, 1, 2]
    with pytest.raises(DataError):
        align_rotations({9: np.eye(3)}, gt)


def test_regauged_keeps_relatives(rng):
    rots = GlobalRotations({v: random_rotation(rng) for v in range(3)}, 0)
    moved = rots.regauged(random_rotation(rng))
    assert_allclose(moved.relative(0, 2), rots.relative(0, 2), atol=1e-12)
    assert list(moved) == [0, 1, 2]
    with pytest.raises(DataError):
        GlobalRotations({1: np.eye(3)}, 0)
