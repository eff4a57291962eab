#!/usr/bin/env python3
"""
Synthetic scenes for two-view and multi-view experiments.

Random numbers come from numpy's Philox counter-based generator seeded through
SeedSequence([seed, stream]); the bit stream is fixed across platforms and
numpy versions, so a (spec, seed) pair always reproduces the same scene.
Streams: 0 scene geometry, 1 pixel noise, 2 rotation perturbation.

Two-view kinds (camera 0 at the origin with identity rotation; camera 1 rotated
by Euler angles drawn from [-max_angle, max_angle], or by exactly
+-rotation_amplitude about every axis when that is set):
  Standard         camera 1 uniform in a 2 m ball, points in a 20 m ball
  PlanarScene      points on the plane Z = depth (10 m)
  Holoplane        points on the plane through both centers and (0, 0, 1)
  RankRegularLine  points on a random line in the plane Z = depth (10 m)
  PureRotation     camera 1 shares the center of camera 0

Multi-view kinds (cameras 10 m apart, looking up at points 0..depth above):
  Circular, Square, Linear; OutwardLooking puts the cameras on a circle
  looking out at a cylindrical ring of points.
"""

from dataclasses import dataclass, replace
from enum import Enum
from itertools import combinations
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from rotsfm.config import (CAMERA_SPACING, DEFAULT_DEPTH, FOCAL_PX, IMAGE_PX, K_NEAREST,
                           MAX_ANGLE, MIN_DEPTH, MIN_EDGE_POINTS, MIN_SHARED_POINTS)
from rotsfm.errors import DataError
from rotsfm.geometry import CameraPose, exp_so3, relative_pose, rotation_from_euler, unit
from rotsfm.graph import ViewGraph

STREAM_SCENE = 0
STREAM_NOISE = 1
STREAM_PERTURB = 2

NOISE_MODES = ("radial", "per-axis")
MAX_SAMPLING_ROUNDS = 200


class SceneKind(str, Enum):
    STANDARD = "Standard"
    PLANAR = "PlanarScene"
    HOLOPLANE = "Holoplane"
    LINE = "RankRegularLine"
    PURE_ROTATION = "PureRotation"
    CIRCULAR = "Circular"
    SQUARE = "Square"
    LINEAR = "Linear"
    OUTWARD = "OutwardLooking"

    @property
    def two_view(self) -> bool:
        return self in TWO_VIEW_KINDS


TWO_VIEW_KINDS = frozenset({SceneKind.STANDARD, SceneKind.PLANAR, SceneKind.HOLOPLANE,
                            SceneKind.LINE, SceneKind.PURE_ROTATION})


def make_rng(seed: int, stream: int = STREAM_SCENE) -> np.random.Generator:
    if int(seed) < 0:
        raise DataError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class SceneSpec:
    kind: SceneKind = SceneKind.STANDARD
    n_cameras: int = 2
    n_points: int = 1000
    noise_max_px: float = 0.0
    focal_px: float = FOCAL_PX
    image_px: int = IMAGE_PX
    depth_param: Optional[float] = None
    seed: int = 0
    max_angle: float = MAX_ANGLE
    baseline: Optional[float] = None     # two-view only; None draws camera 1 in a 2 m ball
    rotation_amplitude: Optional[float] = None   # two-view only; fixes |Euler angle| on every axis
    noise_mode: str = "radial"
    k_nearest: int = K_NEAREST
    min_shared: int = MIN_SHARED_POINTS

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", SceneKind(self.kind))
        except ValueError:
            raise DataError(f"unknown scene kind {self.kind!r}") from None
        if self.n_cameras <= 0 or self.n_points <= 0:
            raise DataError("n_cameras and n_points must be positive")
        if self.noise_max_px < 0:
            raise DataError("noise_max_px must be non-negative")
        if self.focal_px <= 0 or self.image_px <= 0:
            raise DataError("focal_px and image_px must be positive")
        if self.seed < 0:
            raise DataError("seed must be non-negative")
        if self.depth_param is not None and self.depth_param <= 0:
            raise DataError("depth_param must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise DataError(f"noise_mode must be one of {NOISE_MODES}")
        if self.kind.two_view:
            if self.n_cameras != 2:
                raise DataError(f"{self.kind.value} scenes have exactly 2 cameras")
            if self.baseline is not None and self.baseline < 0:
                raise DataError("baseline must be non-negative")
            if self.kind is SceneKind.PURE_ROTATION and self.baseline:
                raise DataError("PureRotation scenes cannot have a nonzero baseline")
            if self.kind is not SceneKind.PURE_ROTATION and self.baseline == 0:
                raise DataError(f"{self.kind.value} scenes need a nonzero baseline")
            if self.rotation_amplitude is not None and not 0.0 <= self.rotation_amplitude <= np.pi / 2:
                raise DataError("rotation_amplitude must lie in [0, pi/2]")
        elif self.n_cameras < 3:
            raise DataError(f"{self.kind.value} scenes need at least 3 cameras")
        elif self.rotation_amplitude is not None:
            raise DataError("rotation_amplitude applies to two-view scenes only")

    @property
    def depth(self) -> float:
        return float(self.depth_param if self.depth_param is not None else DEFAULT_DEPTH[self.kind.value])


@dataclass(frozen=True, eq=False)
class GeneratedScene:
    spec: SceneSpec
    poses: Dict[int, CameraPose]
    points_world: Dict[int, np.ndarray]
    graph: ViewGraph          # noisy observations (equal to graph_clean at zero noise)
    graph_clean: ViewGraph

    @property
    def first_edge(self):
        return self.graph.edges[min(self.graph.edges)]

    def relative_gt(self, i: int, j: int):
        return relative_pose(self.poses[i], self.poses[j])


# ---------- point samplers ----------
Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _in_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0))[:, None]


def _two_view_layout(spec: SceneSpec, rng: np.random.Generator):
    """Camera 1 pose plus the point sampler for a two-view kind."""
    kind, depth = spec.kind, spec.depth
    if spec.rotation_amplitude is None:
        rot = rotation_from_euler(rng.uniform(-spec.max_angle, spec.max_angle, 3))
    else:
        signs = rng.choice([-1.0, 1.0], 3)
        rot = rotation_from_euler(spec.rotation_amplitude * signs)

    if kind is SceneKind.PURE_ROTATION:
        center = np.zeros(3)
    elif spec.baseline is not None:
        center = spec.baseline * unit(rng.standard_normal(3))
    else:
        center = _in_ball(rng, 1, 2.0)[0]

    if kind is SceneKind.HOLOPLANE:
        # c x e3 spans the plane normal; keep it well away from zero
        while np.linalg.norm(np.cross(center, [0.0, 0.0, 1.0])) < 0.1 * np.linalg.norm(center):
            center = _in_ball(rng, 1, 2.0)[0] if spec.baseline is None \
                else spec.baseline * unit(rng.standard_normal(3))
        normal = unit(np.cross(center, [0.0, 0.0, 1.0]))
        along = np.cross([0.0, 0.0, 1.0], normal)
        half = 0.5 * depth

        def sampler(g, n):
            s = g.uniform(-half, half, n)
            z = g.uniform(0.0, depth, n)
            return s[:, None] * along + z[:, None] * np.array([0.0, 0.0, 1.0])
    elif kind is SceneKind.PLANAR:
        def sampler(g, n):
            xy = g.uniform(-depth, depth, (n, 2))
            return np.column_stack([xy, np.full(n, depth)])
    elif kind is SceneKind.LINE:
        anchor = np.array([*rng.uniform(-2.0, 2.0, 2), depth])
        phi = rng.uniform(0.0, np.pi)
        direction = np.array([np.cos(phi), np.sin(phi), 0.0])

        def sampler(g, n):
            return anchor + g.uniform(-2.0 * depth, 2.0 * depth, n)[:, None] * direction
    else:
        def sampler(g, n):
            return _in_ball(g, n, depth)

    return CameraPose(rot, center), sampler


def _layout_centers(kind: SceneKind, n: int, spacing: float) -> np.ndarray:
    k = np.arange(n)
    if kind is SceneKind.LINEAR:
        xs = spacing * (k - 0.5 * (n - 1))
        return np.column_stack([xs, np.zeros(n), np.zeros(n)])
    if kind is SceneKind.SQUARE:
        side = n * spacing / 4.0
        d = k * spacing
        edge, off = np.divmod(d, side)
        h = 0.5 * side
        corners = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
        dirs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        edge = edge.astype(int) % 4
        xy = corners[edge] + off[:, None] * dirs[edge]
        return np.column_stack([xy, np.zeros(n)])
    radius = spacing / (2.0 * np.sin(np.pi / n))
    phi = 2.0 * np.pi * k / n
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n)])


def _multi_view_layout(spec: SceneSpec, rng: np.random.Generator):
    n, depth = spec.n_cameras, spec.depth
    centers = _layout_centers(spec.kind, n, CAMERA_SPACING)
    poses = {}

    if spec.kind is SceneKind.OUTWARD:
        for v, c in enumerate(centers):
            phi = np.arctan2(c[1], c[0])
            z_cam = np.array([np.cos(phi), np.sin(phi), 0.0])
            y_cam = np.array([0.0, 0.0, -1.0])
            base = np.stack([np.cross(y_cam, z_cam), y_cam, z_cam])
            jitter = rotation_from_euler(rng.uniform(-0.05, 0.05, 3))
            poses[v] = CameraPose(jitter @ base, c)
        inner = depth / 15.0

        def sampler(g, m):
            r = np.sqrt(g.uniform(inner ** 2, depth ** 2, m))
            phi = g.uniform(0.0, 2.0 * np.pi, m)
            z = g.uniform(-inner, inner, m)
            return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
        return poses, sampler

    for v, c in enumerate(centers):
        tilt = rng.uniform(-0.1, 0.1, 2)
        yaw = rng.uniform(-np.pi, np.pi)
        poses[v] = CameraPose(rotation_from_euler([tilt[0], tilt[1], yaw]), c)
    lo = centers[:, :2].min(axis=0)
    hi = centers[:, :2].max(axis=0)

    def sampler(g, m):
        z = g.uniform(0.0, depth, m)
        u = g.uniform(0.0, 1.0, (m, 2))
        pad = 0.5 * z[:, None]
        xy = (lo - pad) + u * ((hi - lo) + 2.0 * pad)
        return np.column_stack([xy, z])
    return poses, sampler


# ---------- visibility and sampling ----------
def _visible(pose: CameraPose, pts: np.ndarray, focal: float, image: int):
    pc = pose.to_camera(pts)
    z = pc[:, 2]
    front = z > MIN_DEPTH
    safe = np.where(front, z, 1.0)
    obs = pc[:, :2] / safe[:, None]
    half = 0.5 * image / focal
    inside = np.all(np.abs(obs) <= half, axis=1)
    return front & inside, obs


def _sample_points(spec: SceneSpec, poses: Dict[int, CameraPose], sampler: Sampler,
                   rng: np.random.Generator, min_views: int):
    views = sorted(poses)
    kept_pts: List[np.ndarray] = []
    kept_obs: List[Dict[int, np.ndarray]] = []
    need = spec.n_points
    for _ in range(MAX_SAMPLING_ROUNDS):
        if len(kept_pts) >= need:
            break
        batch = max(64, 4 * (need - len(kept_pts)))
        cand = sampler(rng, batch)
        seen = {v: _visible(poses[v], cand, spec.focal_px, spec.image_px) for v in views}
        counts = sum(seen[v][0].astype(int) for v in views)
        for n in np.flatnonzero(counts >= min_views):
            kept_pts.append(cand[n])
            kept_obs.append({v: seen[v][1][n] for v in views if seen[v][0][n]})
            if len(kept_pts) == need:
                break
    if len(kept_pts) < need:
        raise DataError(f"{spec.kind.value}: could only place {len(kept_pts)} of {need} visible points")
    points = {k: p for k, p in enumerate(kept_pts)}
    tracks = {k: obs for k, obs in enumerate(kept_obs)}
    return points, tracks


def _edge_keys(spec: SceneSpec, poses: Dict[int, CameraPose], tracks) -> List[tuple]:
    views = sorted(poses)
    shared: Dict[tuple, int] = {}
    for obs in tracks.values():
        for key in combinations(sorted(obs), 2):
            shared[key] = shared.get(key, 0) + 1
    keys = {key for key, c in shared.items() if c >= spec.min_shared}
    centers = np.array([poses[v].center for v in views])
    for n, v in enumerate(views):
        dist = np.linalg.norm(centers - centers[n], axis=1)
        for m in np.argsort(dist, kind="stable")[1:spec.k_nearest + 1]:
            u = views[m]
            key = (min(u, v), max(u, v))
            if shared.get(key, 0) >= MIN_EDGE_POINTS:
                keys.add(key)
    return sorted(keys)


def generate(spec: SceneSpec) -> GeneratedScene:
    rng = make_rng(spec.seed, STREAM_SCENE)
    if spec.kind.two_view:
        pose1, sampler = _two_view_layout(spec, rng)
        poses = {0: CameraPose(np.eye(3), np.zeros(3)), 1: pose1}
        points, tracks = _sample_points(spec, poses, sampler, rng, 2)
        keys = [(0, 1)]
    else:
        poses, sampler = _multi_view_layout(spec, rng)
        points, tracks = _sample_points(spec, poses, sampler, rng, 2)
        keys = _edge_keys(spec, poses, tracks)

    clean = ViewGraph.from_tracks(sorted(poses), tracks, keys, poses_gt=poses, points_gt=points)
    clean.require_connected()
    logger.debug("{} scene: {} cameras, {} points, {} edges", spec.kind.value, len(poses),
                 len(points), len(keys))
    scene = GeneratedScene(spec, poses, points, clean, clean)
    if spec.noise_max_px > 0:
        scene = add_noise(scene, spec.noise_max_px, spec.seed, spec.noise_mode)
    return scene


# ---------- noise and perturbation ----------
def pixel_noise(rng: np.random.Generator, n: int, noise_max_px: float,
                mode: str = "radial") -> np.ndarray:
    """(n, 2) pixel offsets: radial magnitude U(0, max) with uniform direction, or U(-max, max) per axis."""
    if mode == "radial":
        r = rng.uniform(0.0, noise_max_px, n)
        ang = rng.uniform(0.0, 2.0 * np.pi, n)
        return np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    if mode == "per-axis":
        return rng.uniform(-noise_max_px, noise_max_px, (n, 2))
    raise DataError(f"noise mode must be one of {NOISE_MODES}")


def add_noise(scene: GeneratedScene, noise_max_px: float, seed: int,
              mode: str = "radial") -> GeneratedScene:
    if noise_max_px < 0:
        raise DataError("noise_max_px must be non-negative")
    clean = scene.graph_clean
    if noise_max_px == 0:
        return replace(scene, graph=clean)
    rng = make_rng(seed, STREAM_NOISE)
    order = [(k, v) for k in sorted(clean.tracks) for v in sorted(clean.tracks[k])]
    offsets = pixel_noise(rng, len(order), noise_max_px, mode) / scene.spec.focal_px
    noisy: Dict[int, Dict[int, np.ndarray]] = {}
    for (k, v), d in zip(order, offsets):
        noisy.setdefault(k, {})[v] = clean.tracks[k][v] + d
    return replace(scene, graph=clean.with_tracks(noisy))


def perturb_rotation(r, angle: float, seed: int) -> np.ndarray:
    if angle < 0:
        raise DataError("perturbation angle must be non-negative")
    r = np.asarray(r, dtype=float)
    if angle == 0:
        return r.copy()
    axis = unit(make_rng(seed, STREAM_PERTURB).standard_normal(3))
    return exp_so3(angle * axis) @ r


def derived_seed(seed: int, index: int) -> int:
    """Independent child seed number `index` of `seed`."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def perturb_relative(rotations, keys, angle: float, seed: int) -> Dict[tuple, np.ndarray]:
    """R_j R_i^T for every edge (i, j), each perturbed by `angle` about its own random axis."""
    out = {}
    for n, (i, j) in enumerate(sorted(keys)):
        r_ij = np.asarray(rotations[j]) @ np.asarray(rotations[i]).T
        out[(i, j)] = perturb_rotation(r_ij, angle, derived_seed(seed, n))
    return out
