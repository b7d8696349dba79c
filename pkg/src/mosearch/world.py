"""Simulated grid world: scenes, robot motion, FOV raycasting, detection and the
synthetic semantic oracle that stands in for an image-text similarity model.

Coordinates: cell ``(row, col)`` covers ``x in [col*res, (col+1)*res)`` and
``y in [row*res, (row+1)*res)``. Row 0 is the first grid line of a scene file.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

FORWARD = "forward"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"
COMMANDS = (FORWARD, TURN_LEFT, TURN_RIGHT)


class InvalidPoseError(ValueError):
    pass


class SceneFormatError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    position: tuple[float, float]
    footprint_radius: float = 0.0

    def __post_init__(self):
        if not self.category:
            raise ValueError(f"object {self.id}: empty category")
        if self.footprint_radius < 0:
            raise ValueError(f"object {self.id}: negative footprint radius")


@dataclass(frozen=True, eq=False)
class GridScene:
    occupancy: np.ndarray  # bool (height, width), True = occupied
    resolution: float
    objects: tuple[SceneObject, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "objects", tuple(self.objects))
        occ.setflags(write=False)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValueError("occupancy must be a non-empty 2-D raster")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if occ.all():
            raise ValueError("scene has no free cell")
        for obj in self.objects:
            cell = self.cell_of(*obj.position)
            if cell is None or occ[cell]:
                raise ValueError(f"object {obj.id} is not on a free in-bounds cell")

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        col = math.floor(x / self.resolution)
        row = math.floor(y / self.resolution)
        if 0 <= row < self.height and 0 <= col < self.width:
            return row, col
        return None

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (col + 0.5) * self.resolution, (row + 0.5) * self.resolution

    def is_free(self, x: float, y: float) -> bool:
        cell = self.cell_of(x, y)
        return cell is not None and not self.occupancy[cell]

    def object_by_id(self, obj_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise KeyError(obj_id)

    def categories(self) -> set[str]:
        return {o.category for o in self.objects}

    def free_components(self) -> np.ndarray:
        """Label 4-connected free components (0 = occupied)."""
        if "components" not in self._cache:
            from scipy import ndimage

            labels, _ = ndimage.label(~self.occupancy)
            self._cache["components"] = labels
        return self._cache["components"]

    def main_component(self) -> np.ndarray:
        """Mask of the free component that holds the objects (largest if none)."""
        if "main" not in self._cache:
            labels = self.free_components()
            if self.objects:
                label = labels[self.cell_of(*self.objects[0].position)]
            else:
                counts = np.bincount(labels.ravel())
                counts[0] = 0
                label = int(np.argmax(counts))
            self._cache["main"] = labels == label
        return self._cache["main"]

    def object_region(self, obj: SceneObject, radius: float) -> np.ndarray:
        """Free cells within ``radius`` of the object, flood-filled through free space."""
        key = ("region", obj.id, radius)
        if key not in self._cache:
            mask = np.zeros(self.shape, dtype=bool)
            start = self.cell_of(*obj.position)
            ox, oy = obj.position
            queue = deque([start])
            mask[start] = True
            while queue:
                r, c = queue.popleft()
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < self.height and 0 <= nc < self.width):
                        continue
                    if mask[nr, nc] or self.occupancy[nr, nc]:
                        continue
                    cx, cy = self.cell_center(nr, nc)
                    if math.hypot(cx - ox, cy - oy) <= radius:
                        mask[nr, nc] = True
                        queue.append((nr, nc))
            self._cache[key] = mask
        return self._cache[key]


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    phi: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y


@dataclass(frozen=True)
class SensorSpec:
    fov: float = math.radians(79.0)
    max_range: float = 5.0
    ray_count: int = 64

    def __post_init__(self):
        if not 0 < self.fov <= 2 * math.pi + 1e-12:
            raise ValueError("fov must be in (0, 2*pi]")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.ray_count < 2:
            raise ValueError("ray_count must be >= 2")


@dataclass(frozen=True)
class DetectionConfig:
    """Environment-side true-detection curve: 1 inside ``delta``, exp falloff beyond."""

    delta: float = 1.0
    beta: float = 2.0


@dataclass(frozen=True)
class OracleConfig:
    base: float = 0.2
    proximity_gain: float = 0.7
    falloff: float = 3.0  # meters; g(d) = exp(-d / falloff)
    noise_std: float = 0.05
    region_radius: float = 1.5
    # target category -> {other category: affinity in [0, 1]}; exact match is 1
    affinity: Mapping[str, Mapping[str, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class MotionConfig:
    step_length: float = 0.25
    turn_angle: float = math.radians(30.0)


@dataclass(frozen=True)
class Observation:
    visible_cells: frozenset
    detections: tuple[tuple[str, bool], ...]
    oracle_scores: Mapping[str, float]


class Visibility:
    """Cells seen from one pose.

    ``rows``/``cols`` list each visible cell once; ``occupied`` flags the
    occluding cells that terminated a ray.
    """

    __slots__ = ("rows", "cols", "occupied", "shape", "_set")

    def __init__(self, rows: np.ndarray, cols: np.ndarray, occupied: np.ndarray, shape):
        self.rows = rows
        self.cols = cols
        self.occupied = occupied
        self.shape = shape
        self._set = None

    def cells(self) -> frozenset[tuple[int, int]]:
        if self._set is None:
            self._set = frozenset(zip(self.rows.tolist(), self.cols.tolist()))
        return self._set

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.rows, self.cols] = True
        return m

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self.cells()

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.cells())


def check_pose(scene: GridScene, pose: RobotPose) -> tuple[int, int]:
    cell = scene.cell_of(pose.x, pose.y)
    if cell is None:
        raise InvalidPoseError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is out of bounds")
    if scene.occupancy[cell]:
        raise InvalidPoseError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is inside an obstacle")
    return cell


def raycast_visibility(scene: GridScene, pose: RobotPose, sensor: SensorSpec) -> Visibility:
    """Cells hit by ``ray_count`` rays spread over the FOV, each ray stopping at
    (and including) its first occupied cell."""
    r0, c0 = check_pose(scene, pose)
    res = scene.resolution
    full_circle = sensor.fov >= 2 * math.pi - 1e-9
    offsets = np.linspace(-sensor.fov / 2, sensor.fov / 2, sensor.ray_count, endpoint=not full_circle)
    angles = pose.phi + offsets
    ds = res / 4.0
    ts = np.arange(0.0, sensor.max_range + 1e-9, ds)
    xs = pose.x + np.cos(angles)[:, None] * ts[None, :]
    ys = pose.y + np.sin(angles)[:, None] * ts[None, :]
    cols = np.floor(xs / res).astype(np.int64)
    rows = np.floor(ys / res).astype(np.int64)
    h, w = scene.shape
    inb = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rc = np.clip(rows, 0, h - 1)
    cc = np.clip(cols, 0, w - 1)
    occ = scene.occupancy[rc, cc] & inb
    # a ray ends at the first occupied sample (kept) or the first out-of-bounds one (dropped)
    stop = occ | ~inb
    n = ts.size
    first = np.where(stop.any(axis=1), stop.argmax(axis=1), n)
    idx = np.arange(n)[None, :]
    keep = (idx < first[:, None]) | ((idx == first[:, None]) & occ)
    flat = np.unique(rows[keep] * w + cols[keep])
    flat = np.union1d(flat, [r0 * w + c0])
    vr, vc = np.divmod(flat, w)
    return Visibility(vr, vc, scene.occupancy[vr, vc], scene.shape)


def true_detection_prob(d: float, cfg: DetectionConfig) -> float:
    if d <= cfg.delta:
        return 1.0
    return math.exp(-cfg.beta * (d - cfg.delta))


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def simulate_detection(
    scene: GridScene,
    pose: RobotPose,
    sensor: SensorSpec,
    visible: Visibility,
    det_cfg: DetectionConfig,
    rng_seed=None,
) -> list[tuple[str, bool]]:
    """Ground-truth detector: visible objects fire with the true-detection curve.

    One uniform draw per object, in scene order, whether or not it is visible,
    so the stream does not depend on what happens to be in view.
    """
    rng = _rng(rng_seed)
    draws = rng.random(len(scene.objects))
    seen = visible.cells()
    out = []
    for obj, u in zip(scene.objects, draws):
        cell = scene.cell_of(*obj.position)
        if cell not in seen:
            out.append((obj.id, False))
            continue
        d = math.hypot(obj.position[0] - pose.x, obj.position[1] - pose.y)
        out.append((obj.id, bool(u < true_detection_prob(d, det_cfg))))
    return out


class SemanticOracle(Protocol):
    def scores(
        self, scene: GridScene, pose: RobotPose, visible: Visibility, targets: Sequence[str], rng
    ) -> dict[str, float]: ...


class SyntheticOracle:
    """Scores a view by how close the robot is to a visible part of each
    target's surrounding region (or of a confusable object's region)."""

    def __init__(self, cfg: OracleConfig | None = None):
        self.cfg = cfg or OracleConfig()

    def proximity(self, d_vis: float) -> float:
        return math.exp(-d_vis / self.cfg.falloff)

    def affinity(self, target: str, category: str) -> float:
        if category == target:
            return 1.0
        return float(self.cfg.affinity.get(target, {}).get(category, 0.0))

    def visible_distance(self, scene: GridScene, pose: RobotPose, visible: Visibility, obj: SceneObject) -> float:
        """Distance from the robot to the nearest visible cell of the object's region (inf if none)."""
        region = scene.object_region(obj, self.cfg.region_radius)
        hit = region[visible.rows, visible.cols]
        if not hit.any():
            return math.inf
        res = scene.resolution
        xs = (visible.cols[hit] + 0.5) * res
        ys = (visible.rows[hit] + 0.5) * res
        d = float(np.min(np.hypot(xs - pose.x, ys - pose.y)))
        own = scene.cell_of(pose.x, pose.y)
        if region[own]:
            d = 0.0
        return d

    def scores(self, scene, pose, visible, targets, rng=None) -> dict[str, float]:
        if not targets:
            raise ValueError("targets must be non-empty")
        rng = _rng(rng)
        noise = rng.normal(0.0, 1.0, len(targets)) if self.cfg.noise_std > 0 else np.zeros(len(targets))
        present = scene.categories()
        out = {}
        for target, z in zip(targets, noise):
            if target not in self.cfg.affinity and not any(self.affinity(target, c) > 0 for c in present):
                out[target] = float(self.cfg.base)
                continue
            signal = 0.0
            for obj in scene.objects:
                a = self.affinity(target, obj.category)
                if a <= 0:
                    continue
                d = self.visible_distance(scene, pose, visible, obj)
                if math.isfinite(d):
                    signal = max(signal, a * self.proximity(d))
            s = self.cfg.base + self.cfg.proximity_gain * signal + self.cfg.noise_std * z
            out[target] = float(min(1.0, max(0.0, s)))
        return out


def oracle_scores(
    scene: GridScene,
    pose: RobotPose,
    sensor: SensorSpec,
    targets: Sequence[str],
    oracle_cfg: OracleConfig | None = None,
    rng_seed=None,
    visible: Visibility | None = None,
) -> dict[str, float]:
    if visible is None:
        visible = raycast_visibility(scene, pose, sensor)
    return SyntheticOracle(oracle_cfg).scores(scene, pose, visible, targets, rng_seed)


def observe(
    scene: GridScene,
    pose: RobotPose,
    sensor: SensorSpec,
    targets: Sequence[str],
    det_cfg: DetectionConfig,
    oracle: SemanticOracle,
    rng: np.random.Generator,
) -> tuple[Observation, Visibility]:
    visible = raycast_visibility(scene, pose, sensor)
    dets = simulate_detection(scene, pose, sensor, visible, det_cfg, rng)
    scores = oracle.scores(scene, pose, visible, targets, rng) if targets else {}
    return Observation(visible.cells(), tuple(dets), scores), visible


def _segment_free(scene: GridScene, x0: float, y0: float, x1: float, y1: float) -> bool:
    n = max(2, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / (scene.resolution / 4))) + 1)
    for t in np.linspace(0.0, 1.0, n):
        if not scene.is_free(x0 + t * (x1 - x0), y0 + t * (y1 - y0)):
            return False
    return True


def step_robot(
    scene: GridScene, pose: RobotPose, command: str, motion_cfg: MotionConfig | None = None
) -> tuple[RobotPose, bool]:
    """Apply one discrete command. Returns ``(new_pose, blocked)``."""
    cfg = motion_cfg or MotionConfig()
    if command == TURN_LEFT:
        return RobotPose(pose.x, pose.y, wrap_angle(pose.phi + cfg.turn_angle)), False
    if command == TURN_RIGHT:
        return RobotPose(pose.x, pose.y, wrap_angle(pose.phi - cfg.turn_angle)), False
    if command != FORWARD:
        raise ValueError(f"unknown command {command!r}")
    nx = pose.x + cfg.step_length * math.cos(pose.phi)
    ny = pose.y + cfg.step_length * math.sin(pose.phi)
    if not _segment_free(scene, pose.x, pose.y, nx, ny):
        return pose, True
    return RobotPose(nx, ny, pose.phi), False


# --- scene files -------------------------------------------------------------


def parse_scene(text: str) -> GridScene:
    lines = text.splitlines()
    it = iter(enumerate(lines, start=1))
    header = None
    for lineno, line in it:
        if line.strip() and not line.lstrip().startswith("//"):
            header = (lineno, line.split())
            break
    if header is None:
        raise SceneFormatError(1, "empty scene file")
    lineno, parts = header
    if len(parts) != 4 or parts[0] != "scene":
        raise SceneFormatError(lineno, "expected 'scene <width> <height> <resolution>'")
    try:
        width, height, res = int(parts[1]), int(parts[2]), float(parts[3])
    except ValueError:
        raise SceneFormatError(lineno, "bad scene header numbers") from None
    if width < 1 or height < 1 or not res > 0:
        raise SceneFormatError(lineno, "width/height must be >= 1 and resolution > 0")
    grid = np.zeros((height, width), dtype=bool)
    for r in range(height):
        try:
            lineno, row = next(it)
        except StopIteration:
            raise SceneFormatError(len(lines) + 1, f"expected {height} grid rows, got {r}") from None
        row = row.rstrip("\n")
        if len(row) != width or set(row) - {"#", "."}:
            raise SceneFormatError(lineno, f"grid row must be {width} chars of '#'/'.'")
        grid[r] = [ch == "#" for ch in row]
    objects = []
    for lineno, line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] != "object" or len(parts) != 6:
            raise SceneFormatError(lineno, "expected 'object <id> <category> <x> <y> <radius>'")
        try:
            x, y, rad = float(parts[3]), float(parts[4]), float(parts[5])
        except ValueError:
            raise SceneFormatError(lineno, "bad object coordinates") from None
        try:
            objects.append(SceneObject(parts[1], parts[2], (x, y), rad))
        except ValueError as e:
            raise SceneFormatError(lineno, str(e)) from None
    ids = [o.id for o in objects]
    if len(set(ids)) != len(ids):
        raise SceneFormatError(len(lines), "duplicate object ids")
    try:
        scene = GridScene(grid, res, tuple(objects))
    except ValueError as e:
        raise SceneFormatError(len(lines), str(e)) from None
    main = scene.main_component()
    for obj in objects:
        if not main[scene.cell_of(*obj.position)]:
            raise SceneFormatError(len(lines), f"object {obj.id} is not reachable from the other objects")
    return scene


def format_scene(scene: GridScene) -> str:
    out = [f"scene {scene.width} {scene.height} {scene.resolution:g}"]
    for row in scene.occupancy:
        out.append("".join("#" if v else "." for v in row))
    for o in scene.objects:
        out.append(
            f"object {o.id} {o.category} {o.position[0]:.3f} {o.position[1]:.3f} {o.footprint_radius:.3f}"
        )
    return "\n".join(out) + "\n"


def load_scene(path: str | Path) -> GridScene:
    return parse_scene(Path(path).read_text())


def save_scene(scene: GridScene, path: str | Path) -> None:
    Path(path).write_text(format_scene(scene))


def scene_from_rows(rows: Iterable[str], resolution: float = 0.25, objects: Iterable[SceneObject] = ()) -> GridScene:
    grid = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
    return GridScene(grid, resolution, tuple(objects))
