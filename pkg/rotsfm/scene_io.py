#!/usr/bin/env python3
"""
Text scene files and rotation files.

Scene file, one record per line, '#' starts a comment:

    ROTSFM-SCENE <version> <n_cameras> <n_edges> <n_tracks> <focal_px> <image_px>
    C <id> <qw> <qx> <qy> <qz> <tx> <ty> <tz> <gt 0|1>
    E <i> <j>                                   (optional block)
    T <point_id> <has_xyz 0|1> [X Y Z] <n_obs> (<view> <x_px> <y_px>)*

(tx, ty, tz) is the camera center; pixels are measured from the image corner
with the principal point at image_px / 2. Without E records the edges are all
pairs sharing at least MIN_SHARED_POINTS tracks.

Rotation file: `<id> <qw> <qx> <qy> <qz>` per line.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from rotsfm.config import MIN_SHARED_POINTS, SCENE_DIGITS
from rotsfm.errors import DataError
from rotsfm.geometry import CameraPose, quaternion_from_rotation, rotation_from_quaternion
from rotsfm.graph import EdgeKey, ViewGraph

SCENE_MAGIC = "ROTSFM-SCENE"
SCENE_VERSION = 1
QUAT_WARN_TOL = 1e-9
QUAT_FAIL_TOL = 1e-6


def _fmt(v: float) -> str:
    return f"{float(v):.{SCENE_DIGITS}g}"


def checked_quaternion(q, where: str) -> np.ndarray:
    """Unit quaternion; small drift is renormalized with a warning."""
    q = np.asarray(q, dtype=float)
    dev = abs(float(np.linalg.norm(q)) - 1.0)
    if dev > QUAT_FAIL_TOL:
        raise DataError(f"{where}: quaternion norm off by {dev:.3e}")
    if dev > QUAT_WARN_TOL:
        logger.warning("{}: quaternion renormalized (norm off by {:.3e})", where, dev)
    return q / np.linalg.norm(q)


@dataclass
class CameraRecord:
    view: int
    quaternion: np.ndarray     # wxyz, as read
    center: np.ndarray
    gt: bool = True
    lineno: int = 0

    def pose(self) -> CameraPose:
        q = checked_quaternion(self.quaternion, f"camera {self.view}")
        return CameraPose(rotation_from_quaternion(q), self.center)


@dataclass
class TrackRecord:
    point_id: int
    xyz: Optional[np.ndarray]
    observations: List[Tuple[int, float, float]] = field(default_factory=list)


@dataclass
class SceneFile:
    focal_px: float
    image_px: int
    cameras: List[CameraRecord]
    tracks: List[TrackRecord]
    edges: Optional[List[EdgeKey]] = None
    version: int = SCENE_VERSION

    # ---------- conversions ----------
    def to_normalized(self, x_px: float, y_px: float) -> np.ndarray:
        c = 0.5 * self.image_px
        return np.array([(x_px - c) / self.focal_px, (y_px - c) / self.focal_px])

    def rotations(self) -> Dict[int, np.ndarray]:
        return {cam.view: cam.pose().rotation for cam in self.cameras}

    def poses_gt(self) -> Optional[Dict[int, CameraPose]]:
        if not self.cameras or not all(cam.gt for cam in self.cameras):
            return None
        return {cam.view: cam.pose() for cam in self.cameras}

    def to_graph(self, min_shared: int = MIN_SHARED_POINTS) -> ViewGraph:
        tracks = {t.point_id: {v: self.to_normalized(x, y) for v, x, y in t.observations}
                  for t in self.tracks}
        points = {t.point_id: t.xyz for t in self.tracks if t.xyz is not None} or None
        views = [cam.view for cam in self.cameras]
        return ViewGraph.from_tracks(views, tracks, self.edges, min_shared,
                                     poses_gt=self.poses_gt(), points_gt=points)

    # ---------- serialization ----------
    def to_text(self) -> str:
        n_edges = len(self.edges) if self.edges else 0
        lines = [f"{SCENE_MAGIC} {self.version} {len(self.cameras)} {n_edges} {len(self.tracks)} "
                 f"{_fmt(self.focal_px)} {self.image_px}"]
        for cam in self.cameras:
            vals = " ".join(_fmt(v) for v in (*cam.quaternion, *cam.center))
            lines.append(f"C {cam.view} {vals} {int(cam.gt)}")
        for i, j in self.edges or []:
            lines.append(f"E {i} {j}")
        for t in self.tracks:
            head = f"T {t.point_id} {0 if t.xyz is None else 1}"
            if t.xyz is not None:
                head += " " + " ".join(_fmt(v) for v in t.xyz)
            obs = " ".join(f"{v} {_fmt(x)} {_fmt(y)}" for v, x, y in t.observations)
            lines.append(f"{head} {len(t.observations)}" + (f" {obs}" if obs else ""))
        return "\n".join(lines) + "\n"


# ---------- parsing ----------
def _ints(tokens, where):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise DataError(f"{where}: expected integers, got {' '.join(tokens)!r}") from None


def _floats(tokens, where):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise DataError(f"{where}: expected numbers, got {' '.join(tokens)!r}") from None
    if not all(np.isfinite(vals)):
        raise DataError(f"{where}: non-finite value")
    return vals


def _parse_track(tok: List[str], where: str) -> TrackRecord:
    if len(tok) < 4:
        raise DataError(f"{where}: truncated track record")
    pid, has_xyz = _ints(tok[1:3], where)
    pos = 3
    xyz = None
    if has_xyz not in (0, 1):
        raise DataError(f"{where}: has_xyz must be 0 or 1")
    if has_xyz:
        xyz = np.array(_floats(tok[3:6], where))
        if len(xyz) != 3:
            raise DataError(f"{where}: truncated track record")
        pos = 6
    if pos >= len(tok):
        raise DataError(f"{where}: missing observation count")
    (n_obs,) = _ints(tok[pos:pos + 1], where)
    rest = tok[pos + 1:]
    if n_obs < 0 or len(rest) != 3 * n_obs:
        raise DataError(f"{where}: expected {n_obs} observations, found {len(rest) / 3:g}")
    obs = []
    for n in range(n_obs):
        (view,) = _ints(rest[3 * n:3 * n + 1], where)
        x, y = _floats(rest[3 * n + 1:3 * n + 3], where)
        obs.append((view, x, y))
    if len({v for v, _, _ in obs}) != len(obs):
        raise DataError(f"{where}: a view observes the point twice")
    return TrackRecord(pid, xyz, obs)


def parse_scene_text(text: str, name: str = "<scene>") -> SceneFile:
    header = None
    cameras: List[CameraRecord] = []
    edges: List[EdgeKey] = []
    tracks: List[TrackRecord] = []
    header_line = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tok = s.split()
        where = f"{name}:{lineno}"
        if header is None:
            if tok[0] != SCENE_MAGIC or len(tok) != 7:
                raise DataError(f"{where}: expected '{SCENE_MAGIC} <version> <n_cameras> <n_edges> "
                                f"<n_tracks> <focal_px> <image_px>'")
            version, n_cam, n_edge, n_track = _ints(tok[1:5], where)
            if version != SCENE_VERSION:
                raise DataError(f"{where}: unsupported scene version {version}")
            (focal,) = _floats(tok[5:6], where)
            (image,) = _ints(tok[6:7], where)
            if focal <= 0 or image <= 0:
                raise DataError(f"{where}: focal_px and image_px must be positive")
            header = (version, n_cam, n_edge, n_track, focal, image)
            header_line = lineno
            continue
        kind = tok[0]
        if kind == "C":
            if len(tok) != 10:
                raise DataError(f"{where}: camera record needs 9 fields")
            (view,) = _ints(tok[1:2], where)
            vals = _floats(tok[2:9], where)
            (gt,) = _ints(tok[9:10], where)
            if gt not in (0, 1):
                raise DataError(f"{where}: gt flag must be 0 or 1")
            checked_quaternion(vals[:4], where)
            cameras.append(CameraRecord(view, np.array(vals[:4]), np.array(vals[4:]), bool(gt), lineno))
        elif kind == "E":
            if len(tok) != 3:
                raise DataError(f"{where}: edge record needs 2 fields")
            i, j = _ints(tok[1:3], where)
            if i == j:
                raise DataError(f"{where}: edge joins view {i} to itself")
            edges.append((i, j))
        elif kind == "T":
            tracks.append(_parse_track(tok, where))
        else:
            raise DataError(f"{where}: unknown record type {kind!r}")

    if header is None:
        raise DataError(f"{name}: missing {SCENE_MAGIC} header")
    version, n_cam, n_edge, n_track, focal, image = header
    where = f"{name}:{header_line}"
    for label, declared, found in (("cameras", n_cam, len(cameras)), ("edges", n_edge, len(edges)),
                                   ("tracks", n_track, len(tracks))):
        if declared != found:
            raise DataError(f"{where}: header declares {declared} {label}, file has {found}")
    views = [c.view for c in cameras]
    if len(set(views)) != len(views):
        raise DataError(f"{name}: duplicate camera ids")
    known = set(views)
    for t in tracks:
        unknown = [v for v, _, _ in t.observations if v not in known]
        if unknown:
            raise DataError(f"{name}: track {t.point_id} observed by unknown views {unknown}")
    if len({t.point_id for t in tracks}) != len(tracks):
        raise DataError(f"{name}: duplicate track ids")
    return SceneFile(focal, image, cameras, tracks, edges or None, version)


def parse_scene(path) -> SceneFile:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"scene file not found: {path}")
    scene = parse_scene_text(path.read_text(), path.name)
    logger.info("read {}: {} cameras, {} tracks", path.name, len(scene.cameras), len(scene.tracks))
    return scene


def load_scene(path, min_shared: int = MIN_SHARED_POINTS) -> ViewGraph:
    return parse_scene(path).to_graph(min_shared)


def write_scene(path, scene: SceneFile):
    Path(path).write_text(scene.to_text())


def scene_file_from_generated(scene, noisy: bool = True) -> SceneFile:
    """SceneFile of a simulate.GeneratedScene, with ground-truth cameras and points."""
    spec = scene.spec
    graph = scene.graph if noisy else scene.graph_clean
    c = 0.5 * spec.image_px
    cameras = [CameraRecord(v, quaternion_from_rotation(p.rotation), p.center, True)
               for v, p in sorted(scene.poses.items())]
    tracks = []
    for k in sorted(graph.tracks):
        obs = [(v, float(x[0] * spec.focal_px + c), float(x[1] * spec.focal_px + c))
               for v, x in sorted(graph.tracks[k].items())]
        tracks.append(TrackRecord(k, scene.points_world.get(k), obs))
    return SceneFile(float(spec.focal_px), int(spec.image_px), cameras, tracks, sorted(graph.edges))


# ---------- rotation files ----------
def read_rotations(path) -> Dict[int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"rotation file not found: {path}")
    rots: Dict[int, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        where = f"{path.name}:{lineno}"
        if len(tok) != 5:
            raise DataError(f"{where}: expected '<id> <qw> <qx> <qy> <qz>'")
        (view,) = _ints(tok[:1], where)
        if view in rots:
            raise DataError(f"{where}: duplicate view {view}")
        rots[view] = rotation_from_quaternion(checked_quaternion(_floats(tok[1:], where), where))
    if not rots:
        raise DataError(f"{path.name}: no rotations")
    return rots


def format_rotations(rotations: Mapping[int, np.ndarray]) -> str:
    lines = []
    for v in sorted(rotations):
        q = quaternion_from_rotation(rotations[v])
        lines.append(f"{v} " + " ".join(_fmt(c) for c in q))
    return "\n".join(lines) + "\n"


def write_rotations(path, rotations: Mapping[int, np.ndarray]):
    Path(path).write_text(format_rotations(rotations))
