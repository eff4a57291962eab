#!/usr/bin/env python3
"""
View graph: cameras, point tracks and the matched edges between cameras.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from rotsfm.config import MIN_SHARED_POINTS
from rotsfm.errors import DataError
from rotsfm.geometry import CameraPose, MatchedPair

EdgeKey = Tuple[int, int]
Tracks = Dict[int, Dict[int, np.ndarray]]   # point id -> {view id: (2,) observation}


def edge_key(i: int, j: int) -> EdgeKey:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True, eq=False)
class ViewGraph:
    view_ids: Tuple[int, ...]
    edges: Dict[EdgeKey, MatchedPair]
    tracks: Tracks
    poses_gt: Optional[Dict[int, CameraPose]] = None
    points_gt: Optional[Dict[int, np.ndarray]] = None
    _index: Dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        ids = tuple(sorted(int(v) for v in self.view_ids))
        if len(set(ids)) != len(ids):
            raise DataError("duplicate view ids")
        object.__setattr__(self, "view_ids", ids)
        object.__setattr__(self, "_index", {v: n for n, v in enumerate(ids)})
        for (i, j), pair in self.edges.items():
            if i >= j or i not in self._index or j not in self._index:
                raise DataError(f"edge {(i, j)} does not join two known views in order")
            for k in pair.track_ids:
                obs = self.tracks.get(int(k), {})
                if i not in obs or j not in obs:
                    raise DataError(f"edge {(i, j)} uses point {k} missing from its tracks")

    # ---------- construction ----------
    @classmethod
    def from_tracks(
        cls,
        view_ids: Iterable[int],
        tracks: Mapping[int, Mapping[int, np.ndarray]],
        edge_keys: Optional[Iterable[EdgeKey]] = None,
        min_shared: int = MIN_SHARED_POINTS,
        poses_gt: Optional[Dict[int, CameraPose]] = None,
        points_gt: Optional[Dict[int, np.ndarray]] = None,
    ) -> "ViewGraph":
        clean: Tracks = {
            int(k): {int(v): np.asarray(x, dtype=float).reshape(2) for v, x in obs.items()}
            for k, obs in tracks.items()
        }
        shared: Dict[EdgeKey, List[int]] = {}
        for k in sorted(clean):
            for i, j in combinations(sorted(clean[k]), 2):
                shared.setdefault((i, j), []).append(k)

        if edge_keys is None:
            keys = sorted(key for key, pts in shared.items() if len(pts) >= min_shared)
        else:
            keys = sorted({edge_key(*key) for key in edge_keys})

        edges = {}
        for i, j in keys:
            pts = shared.get((i, j), [])
            if not pts:
                raise DataError(f"edge {(i, j)} has no shared points")
            edges[(i, j)] = MatchedPair(
                i, j,
                np.array([clean[k][i] for k in pts]),
                np.array([clean[k][j] for k in pts]),
                np.array(pts),
            )
        return cls(tuple(view_ids), edges, clean, poses_gt, points_gt)

    def with_tracks(self, tracks: Mapping[int, Mapping[int, np.ndarray]]) -> "ViewGraph":
        """Same cameras and edge topology, new observations."""
        return ViewGraph.from_tracks(self.view_ids, tracks, list(self.edges),
                                     poses_gt=self.poses_gt, points_gt=self.points_gt)

    # ---------- queries ----------
    def index_of(self, view: int) -> int:
        return self._index[view]

    def incident(self, view: int) -> List[EdgeKey]:
        return [key for key in self.edges if view in key]

    def components(self, keys: Optional[Sequence[EdgeKey]] = None) -> List[List[int]]:
        keys = list(self.edges) if keys is None else list(keys)
        n = len(self.view_ids)
        rows = [self._index[i] for i, _ in keys]
        cols = [self._index[j] for _, j in keys]
        adj = scipy.sparse.coo_matrix((np.ones(len(keys)), (rows, cols)), shape=(n, n))
        count, labels = connected_components(adj, directed=False)
        return [[v for v in self.view_ids if labels[self._index[v]] == c] for c in range(count)]

    def require_connected(self, keys: Optional[Sequence[EdgeKey]] = None):
        comps = self.components(keys)
        if len(comps) > 1:
            raise DataError(f"view graph is disconnected; components: {comps}")

    @property
    def n_observations(self) -> int:
        return sum(len(obs) for obs in self.tracks.values())
