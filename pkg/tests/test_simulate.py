"""
Synthetic scene generator.

 Group 1 - determinism
 Group 2 - scene geometry per kind
 Group 3 - noise and perturbations
 Group 4 - spec validation
"""

from itertools import product

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rotsfm.errors import DataError
from rotsfm.geometry import rotation_error, rotation_from_euler
from rotsfm.simulate import (TWO_VIEW_KINDS, SceneKind, SceneSpec, add_noise, derived_seed,
                             generate, make_rng, perturb_relative, perturb_rotation, pixel_noise)


def _obs(g):
    return np.array([g.tracks[k][v] for k in sorted(g.tracks) for v in sorted(g.tracks[k])])


# ── Group 1 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("kind", list(SceneKind))
def test_same_spec_same_scene(kind):
    n_cams = 2 if kind in TWO_VIEW_KINDS else 8
    spec = SceneSpec(kind, n_cameras=n_cams, n_points=60, noise_max_px=1.0, seed=17)
    a, b = generate(spec), generate(spec)
    assert_array_equal(_obs(a.graph), _obs(b.graph))
    assert list(a.graph.edges) == list(b.graph.edges)
    for v in a.poses:
        assert_array_equal(a.poses[v].rotation, b.poses[v].rotation)


def test_streams_are_independent():
    x = make_rng(5, 0).uniform(size=4)
    assert not np.allclose(x, make_rng(5, 1).uniform(size=4))
    assert not np.allclose(x, make_rng(6, 0).uniform(size=4))
    assert_array_equal(x, make_rng(5, 0).uniform(size=4))


def test_noise_does_not_move_the_scene():
    clean = generate(SceneSpec(SceneKind.STANDARD, n_points=50, seed=4))
    noisy = generate(SceneSpec(SceneKind.STANDARD, n_points=50, noise_max_px=3.0, seed=4))
    assert_array_equal(clean.poses[1].center, noisy.poses[1].center)
    assert_array_equal(_obs(clean.graph), _obs(noisy.graph_clean))
    assert not np.array_equal(_obs(clean.graph), _obs(noisy.graph))


def test_derived_seeds_differ():
    seeds = {derived_seed(1, n) for n in range(100)}
    assert len(seeds) == 100
    assert derived_seed(1, 3) == derived_seed(1, 3)


# ── Group 2 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("kind", list(SceneKind))
def test_points_in_front_and_inside_image(kind):
    n_cams = 2 if kind in TWO_VIEW_KINDS else 8
    scene = generate(SceneSpec(kind, n_cameras=n_cams, n_points=80, seed=2))
    half = 0.5 * scene.spec.image_px / scene.spec.focal_px
    assert len(scene.points_world) == 80
    for k, obs in scene.graph.tracks.items():
        assert len(obs) >= 2
        for v, x in obs.items():
            pc = scene.poses[v].to_camera(scene.points_world[k])
            assert pc[2] > 0
            assert_allclose(pc[:2] / pc[2], x, atol=1e-12)
            assert np.all(np.abs(x) <= half)


def test_two_view_first_camera_is_reference():
    scene = generate(SceneSpec(SceneKind.STANDARD, n_points=20, seed=1))
    assert_array_equal(scene.poses[0].rotation, np.eye(3))
    assert_array_equal(scene.poses[0].center, np.zeros(3))
    assert list(scene.graph.edges) == [(0, 1)]
    assert np.linalg.norm(scene.poses[1].center) <= 2.0
    assert rotation_error(np.eye(3), scene.poses[1].rotation) > 0


def test_pure_rotation_shares_center():
    scene = generate(SceneSpec(SceneKind.PURE_ROTATION, n_points=20, seed=1))
    assert_array_equal(scene.poses[1].center, scene.poses[0].center)


def test_holoplane_points_share_a_plane_with_both_centers():
    scene = generate(SceneSpec(SceneKind.HOLOPLANE, n_points=50, seed=6))
    c = scene.poses[1].center
    normal = np.cross(c, [0.0, 0.0, 1.0])
    normal /= np.linalg.norm(normal)
    pts = np.array(list(scene.points_world.values()))
    assert np.max(np.abs(pts @ normal)) < 1e-9


def test_planar_and_line_layouts():
    planar = generate(SceneSpec(SceneKind.PLANAR, n_points=30, seed=3))
    z = np.array([p[2] for p in planar.points_world.values()])
    assert_allclose(z, planar.spec.depth)
    line = generate(SceneSpec(SceneKind.LINE, n_points=30, seed=3))
    pts = np.array(list(line.points_world.values()))
    assert np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-8) == 1


def test_baseline_sets_camera_distance():
    scene = generate(SceneSpec(SceneKind.STANDARD, n_points=20, seed=2, baseline=0.5))
    assert np.linalg.norm(scene.poses[1].center) == pytest.approx(0.5)


@pytest.mark.parametrize("amplitude", [0.0, 0.2, 0.6])
def test_rotation_amplitude_fixes_every_euler_angle(amplitude):
    scene = generate(SceneSpec(SceneKind.STANDARD, n_points=20, seed=8, rotation_amplitude=amplitude))
    rot = scene.poses[1].rotation
    candidates = [rotation_from_euler(amplitude * np.array(s)) for s in product((-1.0, 1.0), repeat=3)]
    assert min(rotation_error(c, rot) for c in candidates) < 1e-12


def test_depth_param_moves_the_plane():
    scene = generate(SceneSpec(SceneKind.PLANAR, n_points=20, seed=8, depth_param=35.0))
    z = np.array([p[2] for p in scene.points_world.values()])
    assert_allclose(z, 35.0)


def test_multi_view_layout_spacing():
    scene = generate(SceneSpec(SceneKind.LINEAR, n_cameras=4, n_points=100, seed=3))
    centers = np.array([scene.poses[v].center for v in sorted(scene.poses)])
    assert_allclose(np.linalg.norm(np.diff(centers, axis=0), axis=1), 10.0)
    scene.graph.require_connected()


# ── Group 3 ───────────────────────────────────────────────────────────────────

def test_radial_noise_magnitudes():
    d = pixel_noise(make_rng(0, 1), 20000, 5.0)
    r = np.linalg.norm(d, axis=1)
    assert r.max() <= 5.0
    assert r.mean() == pytest.approx(2.5, abs=0.05)


def test_per_axis_noise_range():
    d = pixel_noise(make_rng(0, 1), 5000, 2.0, "per-axis")
    assert np.abs(d).max() <= 2.0
    assert np.abs(d).mean() == pytest.approx(1.0, abs=0.05)
    with pytest.raises(DataError):
        pixel_noise(make_rng(0, 1), 10, 1.0, "gaussian")


def test_observation_noise_is_bounded_in_pixels():
    scene = generate(SceneSpec(SceneKind.STANDARD, n_points=100, seed=9))
    noisy = add_noise(scene, 2.0, seed=9)
    diff = (_obs(noisy.graph) - _obs(scene.graph)) * scene.spec.focal_px
    assert np.linalg.norm(diff, axis=1).max() <= 2.0 + 1e-9
    assert np.abs(diff).max() > 0.1
    assert add_noise(scene, 0.0, seed=9).graph is scene.graph_clean


def test_perturbation_angle_is_exact(rng):
    r = perturb_rotation(np.eye(3), 0.0, 1)
    assert_array_equal(r, np.eye(3))
    for seed in range(10):
        base = perturb_rotation(np.eye(3), 1.0, seed + 100)
        assert rotation_error(base, perturb_rotation(base, 0.05, seed)) == pytest.approx(0.05, abs=1e-12)
    with pytest.raises(DataError):
        perturb_rotation(np.eye(3), -0.1, 0)


def test_perturb_relative_uses_one_axis_per_edge():
    rots = {0: np.eye(3), 1: np.eye(3), 2: np.eye(3)}
    rel = perturb_relative(rots, [(0, 1), (1, 2), (0, 2)], 0.1, seed=3)
    assert sorted(rel) == [(0, 1), (0, 2), (1, 2)]
    for r in rel.values():
        assert rotation_error(np.eye(3), r) == pytest.approx(0.1, abs=1e-12)
    assert rotation_error(rel[(0, 1)], rel[(1, 2)]) > 1e-3


# ── Group 4 ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("kwargs", [
    dict(kind="Nope"),
    dict(kind=SceneKind.STANDARD, n_cameras=3),
    dict(kind=SceneKind.CIRCULAR, n_cameras=2),
    dict(kind=SceneKind.PURE_ROTATION, baseline=1.0),
    dict(kind=SceneKind.STANDARD, baseline=0.0),
    dict(kind=SceneKind.STANDARD, noise_max_px=-1.0),
    dict(kind=SceneKind.STANDARD, n_points=0),
    dict(kind=SceneKind.STANDARD, depth_param=-2.0),
    dict(kind=SceneKind.STANDARD, noise_mode="gaussian"),
    dict(kind=SceneKind.STANDARD, seed=-1),
    dict(kind=SceneKind.STANDARD, rotation_amplitude=2.0),
    dict(kind=SceneKind.STANDARD, rotation_amplitude=-0.1),
    dict(kind=SceneKind.CIRCULAR, n_cameras=5, rotation_amplitude=0.1),
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(DataError):
        SceneSpec(**kwargs)


def test_kind_from_string():
    assert SceneSpec("Holoplane").kind is SceneKind.HOLOPLANE
    assert SceneKind.CIRCULAR.two_view is False
