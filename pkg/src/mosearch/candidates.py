"""Candidate points from the decayed value map and the discrete belief over them."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_pts: int = 4
    value_threshold: float = 0.6

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if not 0 < self.value_threshold <= 1:
            raise ValueError("value_threshold must be in (0, 1]")


@dataclass
class CandidateSet:
    points: list[tuple[float, float]] = field(default_factory=list)
    cells: list[tuple[int, int]] = field(default_factory=list)
    source_step: int = 0

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class BeliefState:
    support: CandidateSet
    probs: list[float]

    def __post_init__(self):
        if len(self.probs) != len(self.support):
            raise ValueError("belief length does not match its support")

    def __len__(self) -> int:
        return len(self.probs)


def threshold_cells(v_decayed: np.ndarray, params: DbscanParams) -> list[tuple[int, int]]:
    """Cells at or above ``value_threshold`` times the map maximum, row-major."""
    peak = float(v_decayed.max()) if v_decayed.size else 0.0
    if peak <= 0:
        return []
    rows, cols = np.nonzero(v_decayed >= params.value_threshold * peak)
    return list(zip(rows.tolist(), cols.tolist()))


def dbscan(points, eps: float, min_pts: int) -> list[list[int]]:
    """Density-based clustering; returns clusters as lists of point indices.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are the connected components of core points,
    numbered by their lowest core index. A border point joins the cluster of
    its lowest-index core neighbour; everything else is noise.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2) if len(points) else np.zeros((0, 2))
    n = len(pts)
    if n == 0:
        return []
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    adj = d2 <= eps * eps
    core = adj.sum(axis=1) >= min_pts
    label = np.full(n, -1)
    k = 0
    for i in range(n):
        if not core[i] or label[i] >= 0:
            continue
        label[i] = k
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for m in np.nonzero(adj[j] & core & (label < 0))[0]:
                label[m] = k
                queue.append(m)
        k += 1
    for i in np.nonzero(~core)[0]:
        nbrs = np.nonzero(adj[i] & core)[0]
        if nbrs.size:
            label[i] = label[nbrs[0]]
    return [np.nonzero(label == c)[0].tolist() for c in range(k)]


def candidate_points(
    clusters: list[list[int]],
    cells: list[tuple[int, int]],
    v_decayed: np.ndarray,
    resolution: float,
    source_step: int = 0,
) -> CandidateSet:
    """One representative per cluster: its highest-value cell (row-major least on ties)."""
    out = CandidateSet(source_step=source_step)
    for members in clusters:
        best = min((cells[i] for i in members), key=lambda rc: (-v_decayed[rc], rc))
        out.cells.append(best)
        out.points.append(((best[1] + 0.5) * resolution, (best[0] + 0.5) * resolution))
    return out


def build_belief(cands: CandidateSet, v_decayed: np.ndarray) -> BeliefState:
    """Normalise decayed values at the candidates; uniform if they are all zero."""
    if len(cands) == 0:
        return BeliefState(cands, [])
    vals = np.array([max(0.0, float(v_decayed[c])) for c in cands.cells])
    total = vals.sum()
    if total <= 0:
        probs = np.full(len(vals), 1.0 / len(vals))
    else:
        probs = vals / total
    return BeliefState(cands, probs.tolist())


def extract_candidates(
    v_decayed: np.ndarray, params: DbscanParams, resolution: float, source_step: int = 0
) -> CandidateSet:
    cells = threshold_cells(v_decayed, params)
    if not cells:
        return CandidateSet(source_step=source_step)
    pts = [((c + 0.5) * resolution, (r + 0.5) * resolution) for r, c in cells]
    clusters = dbscan(pts, params.eps, params.min_pts)
    return candidate_points(clusters, cells, v_decayed, resolution, source_step)
