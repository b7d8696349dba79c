"""Robot-side geometry: obstacle map, frontiers, grid shortest paths and the
discrete navigation controller."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .world import (
    FORWARD,
    TURN_LEFT,
    TURN_RIGHT,
    GridScene,
    MotionConfig,
    RobotPose,
    Visibility,
    step_robot,
)

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

_SQRT2 = math.sqrt(2.0)
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class ObstacleMap:
    state: np.ndarray  # int8 raster of UNKNOWN / FREE / OCCUPIED
    resolution: float

    @classmethod
    def unknown(cls, shape: tuple[int, int], resolution: float) -> "ObstacleMap":
        return cls(np.full(shape, UNKNOWN, dtype=np.int8), resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.state.shape

    def copy(self) -> "ObstacleMap":
        return ObstacleMap(self.state.copy(), self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        col, row = math.floor(x / self.resolution), math.floor(y / self.resolution)
        h, w = self.shape
        if 0 <= row < h and 0 <= col < w:
            return row, col
        return None

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (col + 0.5) * self.resolution, (row + 0.5) * self.resolution

    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.state == UNKNOWN))

    def to_ascii(self, marks: dict[tuple[int, int], str] | None = None) -> str:
        chars = np.array(["?", ".", "#"])[self.state]
        for (r, c), ch in (marks or {}).items():
            chars[r, c] = ch
        return "\n".join("".join(row) for row in chars) + "\n"


@dataclass(frozen=True)
class Frontier:
    midpoint: tuple[float, float]
    boundary_cells: tuple[tuple[int, int], ...]
    score: float = 0.0
    midpoint_cell: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class NavConfig:
    min_frontier_cells: int = 3
    frontier_radius: float = 0.75
    unknown_cost: float | None = 2.0  # None: never plan through unknown cells
    arrival_radius: float = 0.3
    max_leg_commands: int = 200
    blocked_retries: int = 6
    clearance_cost: float = 0.5  # extra cost factor for cells touching a known wall (controller only)


def update_obstacle_map(omap: ObstacleMap, pose: RobotPose, visible: Visibility, scene: GridScene) -> ObstacleMap:
    """Mark seen free cells free and ray-terminating walls occupied; never forget."""
    out = omap.copy()
    rows, cols = visible.rows, visible.cols
    occ = scene.occupancy[rows, cols]
    unknown = out.state[rows, cols] == UNKNOWN
    out.state[rows[unknown & ~occ], cols[unknown & ~occ]] = FREE
    out.state[rows[unknown & occ], cols[unknown & occ]] = OCCUPIED
    return out


def frontier_cells(omap: ObstacleMap) -> np.ndarray:
    """Free cells 4-adjacent to at least one unknown cell."""
    unk = omap.state == UNKNOWN
    near = np.zeros_like(unk)
    near[1:, :] |= unk[:-1, :]
    near[:-1, :] |= unk[1:, :]
    near[:, 1:] |= unk[:, :-1]
    near[:, :-1] |= unk[:, 1:]
    return (omap.state == FREE) & near


def reachable_free(omap: ObstacleMap, start: tuple[int, int]) -> np.ndarray:
    """Cells connected to ``start`` through known-free cells (8-connected, no corner cutting)."""
    free = omap.state == FREE
    seen = np.zeros_like(free)
    if not free[start]:
        return seen
    h, w = free.shape
    stack = [start]
    seen[start] = True
    while stack:
        r, c = stack.pop()
        for dr, dc in _MOVES:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and not seen[nr, nc]:
                if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                    continue
                seen[nr, nc] = True
                stack.append((nr, nc))
    return seen


def extract_frontiers(
    omap: ObstacleMap,
    min_frontier_cells: int = 3,
    robot_cell: tuple[int, int] | None = None,
) -> list[Frontier]:
    """Group boundary cells into 8-connected components and take the cell
    nearest each component's centroid as its midpoint.

    With ``robot_cell`` given, frontiers whose midpoint cannot be reached over
    known-free cells are dropped.
    """
    boundary = frontier_cells(omap)
    labels, n = ndimage.label(boundary, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    reach = reachable_free(omap, robot_cell) if robot_cell is not None else None
    out = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        if rows.size < min_frontier_cells:
            continue
        cr, cc = rows.mean(), cols.mean()
        d2 = (rows - cr) ** 2 + (cols - cc) ** 2
        # nonzero() is row-major, argmin takes the first minimum
        i = int(np.argmin(d2))
        mid = (int(rows[i]), int(cols[i]))
        if reach is not None and not reach[mid]:
            continue
        cells = tuple(zip(rows.tolist(), cols.tolist()))
        out.append(Frontier(omap.cell_center(*mid), cells, 0.0, mid))
    out.sort(key=lambda f: f.midpoint_cell)
    return out


def disc_mean(raster: np.ndarray, center: tuple[float, float], radius: float, resolution: float) -> float:
    h, w = raster.shape
    x, y = center
    r = int(math.ceil(radius / resolution))
    cr, cc = math.floor(y / resolution), math.floor(x / resolution)
    r0, r1 = max(0, cr - r), min(h, cr + r + 1)
    c0, c1 = max(0, cc - r), min(w, cc + r + 1)
    rr, ccs = np.mgrid[r0:r1, c0:c1]
    d = np.hypot((ccs + 0.5) * resolution - x, (rr + 0.5) * resolution - y)
    m = d <= radius + 1e-9
    if not m.any():
        return 0.0
    return float(raster[r0:r1, c0:c1][m].mean())


def best_frontier(
    frontiers: list[Frontier], agg: np.ndarray, radius: float = 0.75, resolution: float = 0.25
) -> Frontier | None:
    """Frontier with the highest mean value in a disc around its midpoint.

    Ties keep the earlier frontier. The returned copy carries its score.
    """
    best, best_score = None, -math.inf
    for f in frontiers:
        s = disc_mean(agg, f.midpoint, radius, resolution)
        if s > best_score:
            best, best_score = f, s
    if best is None:
        return None
    return Frontier(best.midpoint, best.boundary_cells, best_score, best.midpoint_cell)


# --- shortest paths ----------------------------------------------------------


@dataclass
class PathResult:
    waypoints: list[tuple[float, float]]
    length: float
    cost: float
    cells: list[tuple[int, int]] = field(default_factory=list)


def cell_costs(omap: ObstacleMap, unknown_cost: float | None) -> np.ndarray:
    """Per-cell traversal multiplier; inf = impassable."""
    cost = np.full(omap.shape, np.inf)
    cost[omap.state == FREE] = 1.0
    if unknown_cost is not None:
        cost[omap.state == UNKNOWN] = unknown_cost
    return cost


def grid_graph(cost: np.ndarray, resolution: float):
    """Sparse 8-connected graph; diagonal steps may not cut occupied corners."""
    h, w = cost.shape
    ok = np.isfinite(cost)
    idx = np.arange(h * w).reshape(h, w)
    src, dst, wts = [], [], []
    for dr, dc in _MOVES:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = ok[r0:r1, c0:c1]
        b = ok[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        m = a & b
        step = resolution
        if dr and dc:
            m &= ok[r0 + dr : r1 + dr, c0:c1] & ok[r0:r1, c0 + dc : c1 + dc]
            step = resolution * _SQRT2
        ca = cost[r0:r1, c0:c1][m]
        cb = cost[r0 + dr : r1 + dr, c0 + dc : c1 + dc][m]
        src.append(idx[r0:r1, c0:c1][m])
        dst.append(idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc][m])
        wts.append(step * 0.5 * (ca + cb))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    wts = np.concatenate(wts)
    return coo_matrix((wts, (src, dst)), shape=(h * w, h * w)).tocsr()


def _walk_back(pred: np.ndarray, src: int, dst: int) -> list[int] | None:
    if src == dst:
        return [src]
    if pred[dst] < 0:
        return None
    out = [dst]
    while out[-1] != src:
        out.append(int(pred[out[-1]]))
    out.reverse()
    return out


class PathOracle:
    """Shortest paths from a set of sources over one cost raster."""

    def __init__(self, cost: np.ndarray, resolution: float):
        self.cost = cost
        self.resolution = resolution
        self.shape = cost.shape
        self.graph = grid_graph(cost, resolution)

    @classmethod
    def for_map(cls, omap: ObstacleMap, unknown_cost: float | None = 2.0) -> "PathOracle":
        return cls(cell_costs(omap, unknown_cost), omap.resolution)

    @classmethod
    def for_scene(cls, scene: GridScene) -> "PathOracle":
        cost = np.where(scene.occupancy, np.inf, 1.0)
        return cls(cost, scene.resolution)

    def flat(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.shape[1] + cell[1]

    def from_sources(self, cells: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
        """(dist, pred) arrays of shape (len(cells), h*w)."""
        idx = [self.flat(c) for c in cells]
        dist, pred = dijkstra(self.graph, directed=True, indices=idx, return_predecessors=True)
        return np.atleast_2d(dist), np.atleast_2d(pred)

    def cost_matrix(self, cells: list[tuple[int, int]]) -> np.ndarray:
        """Pairwise path costs (meters, unknown cells weighted) between cells."""
        dist, _ = self.from_sources(cells)
        cols = [self.flat(c) for c in cells]
        out = dist[:, cols].copy()
        for i, c in enumerate(cells):
            if not np.isfinite(self.cost[c]):
                out[i, :] = np.inf
                out[:, i] = np.inf
            out[i, i] = 0.0
        return out

    def path(self, start: tuple[int, int], goal: tuple[int, int]) -> PathResult | None:
        if not np.isfinite(self.cost[goal]) and start != goal:
            return None
        dist, pred = self.from_sources([start])
        flat = _walk_back(pred[0], self.flat(start), self.flat(goal))
        if flat is None:
            return None
        cells = [divmod(f, self.shape[1]) for f in flat]
        res = self.resolution
        pts = [((c + 0.5) * res, (r + 0.5) * res) for r, c in cells]
        length = sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))
        return PathResult(pts[1:], length, float(dist[0, self.flat(goal)]) if start != goal else 0.0, cells)


def shortest_path(
    omap: ObstacleMap,
    start: tuple[float, float],
    goal: tuple[float, float],
    unknown_cost: float | None = 2.0,
) -> PathResult | None:
    """8-connected grid path between the cells holding ``start`` and ``goal``.

    Unknown cells are traversable at ``unknown_cost`` times the distance unless
    ``unknown_cost`` is None. Returns None when no path exists.
    """
    s = omap.cell_of(*start)
    g = omap.cell_of(*goal)
    if s is None or g is None:
        return None
    if s == g:
        return PathResult([], 0.0, 0.0, [s])
    return PathOracle.for_map(omap, unknown_cost).path(s, g)


# --- navigation controller ---------------------------------------------------


@dataclass
class DriveResult:
    pose: RobotPose
    commands: list[str]
    distance: float
    arrived: bool
    reason: str = ""
    interrupted: bool = False


def _clearance_costs(omap: ObstacleMap, nav: NavConfig) -> np.ndarray:
    cost = cell_costs(omap, nav.unknown_cost)
    if nav.clearance_cost > 0:
        occ = omap.state == OCCUPIED
        near = ndimage.binary_dilation(occ, structure=np.ones((3, 3), dtype=bool)) & ~occ
        cost = np.where(near, cost * (1.0 + nav.clearance_cost), cost)
    return cost


class _CostToGo:
    """Distance field to one goal cell, rebuilt only when the map changes."""

    def __init__(self, goal_cell: tuple[int, int], nav: NavConfig):
        self.goal_cell = goal_cell
        self.nav = nav
        self._key = None
        self.field = None

    def update(self, omap: ObstacleMap) -> np.ndarray:
        key = omap.state.tobytes()
        if key != self._key:
            cost = _clearance_costs(omap, self.nav)
            cost[self.goal_cell] = min(cost[self.goal_cell], 1.0) if np.isfinite(cost[self.goal_cell]) else np.inf
            graph = grid_graph(cost, omap.resolution)
            h, w = omap.shape
            dist = dijkstra(graph, directed=True, indices=self.goal_cell[0] * w + self.goal_cell[1])
            self.field = dist.reshape(h, w)
            self._key = key
        return self.field

    def at(self, omap: ObstacleMap, x: float, y: float, goal: tuple[float, float]) -> float:
        cell = omap.cell_of(x, y)
        if cell is None:
            return math.inf
        if cell == self.goal_cell:
            return math.dist((x, y), goal)
        h, w = omap.shape
        r, c = cell
        best = math.inf
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w:
                    f = self.field[nr, nc]
                    if np.isfinite(f):
                        cx, cy = omap.cell_center(nr, nc)
                        best = min(best, f + math.hypot(x - cx, y - cy))
        return best


def _segment_clear(omap: ObstacleMap, x0, y0, x1, y1, bumped: set) -> bool:
    n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / (omap.resolution / 4))) + 1)
    for i in range(n):
        t = i / (n - 1)
        cell = omap.cell_of(x0 + t * (x1 - x0), y0 + t * (y1 - y0))
        if cell is None or omap.state[cell] == OCCUPIED or cell in bumped:
            return False
    return True


def _choose_command(
    omap: ObstacleMap, pose: RobotPose, goal, ctg: _CostToGo, motion: MotionConfig, bumped: set
) -> str | None:
    """Forward if stepping along the current heading lowers the cost-to-go the
    most; otherwise turn toward the heading that does. None when no heading helps."""
    here = ctg.at(omap, pose.x, pose.y, goal)
    n_turns = int(math.ceil(math.pi / motion.turn_angle))
    best_j, best_val = None, math.inf
    for k in range(2 * n_turns + 1):
        j = (k + 1) // 2 * (1 if k % 2 else -1)  # 0, 1, -1, 2, -2, ...
        h = pose.phi + j * motion.turn_angle
        nx = pose.x + motion.step_length * math.cos(h)
        ny = pose.y + motion.step_length * math.sin(h)
        if not _segment_clear(omap, pose.x, pose.y, nx, ny, bumped):
            continue
        val = ctg.at(omap, nx, ny, goal) + 1e-3 * abs(j)
        if val < best_val - 1e-9:
            best_j, best_val = j, val
    if best_j is None or best_val >= here - 1e-6:
        return None
    if best_j == 0:
        return FORWARD
    return TURN_LEFT if best_j > 0 else TURN_RIGHT


def drive_to(
    scene: GridScene,
    pose: RobotPose,
    omap: ObstacleMap,
    goal: tuple[float, float],
    nav: NavConfig | None = None,
    motion: MotionConfig | None = None,
    on_step: Callable[[RobotPose, str, bool], tuple[ObstacleMap, bool]] | None = None,
    max_commands: int | None = None,
) -> DriveResult:
    """Emit forward/turn commands until the robot is within ``arrival_radius``
    of ``goal``, replanning the shortest-path field whenever the map changes.

    ``on_step(pose, command, blocked)`` runs after every command; it returns
    the refreshed obstacle map and whether to interrupt the leg.
    """
    nav = nav or NavConfig()
    motion = motion or MotionConfig()
    cap = nav.max_leg_commands if max_commands is None else min(max_commands, nav.max_leg_commands)
    commands: list[str] = []
    distance = 0.0
    blocked_count = 0
    bumped: set = set()
    gcell = omap.cell_of(*goal)
    if gcell is None:
        return DriveResult(pose, commands, distance, False, "no_path")
    ctg = _CostToGo(gcell, nav)
    while True:
        if math.dist(pose.position, goal) <= nav.arrival_radius:
            return DriveResult(pose, commands, distance, True)
        if len(commands) >= cap:
            return DriveResult(pose, commands, distance, False, "step_cap")
        field = ctg.update(omap)
        start = omap.cell_of(*pose.position)
        if not np.isfinite(field[start]):
            return DriveResult(pose, commands, distance, False, "no_path")
        cmd = _choose_command(omap, pose, goal, ctg, motion, bumped)
        if cmd is None:
            return DriveResult(pose, commands, distance, False, "stuck")
        new_pose, blocked = step_robot(scene, pose, cmd, motion)
        commands.append(cmd)
        if blocked:
            blocked_count += 1
            # remember where the bumper fired so the next choice avoids it
            nx = pose.x + motion.step_length * math.cos(pose.phi)
            ny = pose.y + motion.step_length * math.sin(pose.phi)
            bumped.add(omap.cell_of(nx, ny))
        else:
            distance += math.dist(pose.position, new_pose.position)
        pose = new_pose
        interrupt = False
        if on_step is not None:
            omap, interrupt = on_step(pose, cmd, blocked)
        if blocked_count > nav.blocked_retries:
            return DriveResult(pose, commands, distance, False, "blocked")
        if interrupt:
            arrived = math.dist(pose.position, goal) <= nav.arrival_radius
            return DriveResult(pose, commands, distance, arrived, "interrupted", True)
