"""Procedural multi-room scenes with nooks and confusable decoy objects."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import GridScene, SceneObject

TARGET_CATEGORIES = ("bed", "toilet", "tv", "plant", "fridge", "chair")
# each target has one visually confusable object class
DECOYS = {
    "bed": "dresser",
    "toilet": "sink",
    "tv": "speaker",
    "plant": "vase",
    "fridge": "oven",
    "chair": "stool",
}


def default_affinity(strength: float = 0.85) -> dict[str, dict[str, float]]:
    return {t: {d: strength} for t, d in DECOYS.items()}


@dataclass(frozen=True)
class GeneratorSpec:
    width: int = 64
    height: int = 32
    resolution: float = 0.25
    rooms: int = 6
    targets: int = 4  # target-category objects placed
    decoys: int = 3
    nook_fraction: float = 0.0  # share of targets hidden in a wall nook
    min_room: int = 10
    door_width: int = 4
    seed: int = 0
    categories: tuple[str, ...] = field(default=TARGET_CATEGORIES)

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError("rooms must be >= 1")
        if self.width < 5 or self.height < 5:
            raise ValueError("scene must be at least 5x5")
        if self.targets < 0 or self.decoys < 0:
            raise ValueError("object counts must be non-negative")
        if self.targets > len(self.categories):
            raise ValueError("more targets than categories")
        if not 0 <= self.nook_fraction <= 1:
            raise ValueError("nook_fraction must be in [0, 1]")


Room = tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive interior bounds


def _split_rooms(grid: np.ndarray, rng: np.random.Generator, spec: GeneratorSpec) -> list[Room]:
    h, w = grid.shape
    rooms: list[Room] = [(1, 1, h - 2, w - 2)]
    while len(rooms) < spec.rooms:
        rooms.sort(key=lambda r: -((r[2] - r[0] + 1) * (r[3] - r[1] + 1)))
        for i, (r0, c0, r1, c1) in enumerate(rooms):
            rh, rw = r1 - r0 + 1, c1 - c0 + 1
            vertical = rw >= rh
            span = rw if vertical else rh
            if span < 2 * spec.min_room + 1:
                continue
            cut = int(rng.integers(spec.min_room, span - spec.min_room))
            door_len = min(spec.door_width, (rh if vertical else rw) - 2)
            if vertical:
                wc = c0 + cut
                grid[r0 : r1 + 1, wc] = True
                d0 = int(rng.integers(r0, r1 - door_len + 2))
                grid[d0 : d0 + door_len, wc] = False
                rooms[i : i + 1] = [(r0, c0, r1, wc - 1), (r0, wc + 1, r1, c1)]
            else:
                wr = r0 + cut
                grid[wr, c0 : c1 + 1] = True
                d0 = int(rng.integers(c0, c1 - door_len + 2))
                grid[wr, d0 : d0 + door_len] = False
                rooms[i : i + 1] = [(r0, c0, wr - 1, c1), (wr + 1, c0, r1, c1)]
            break
        else:
            raise ValueError(f"cannot fit {spec.rooms} rooms of size >= {spec.min_room}")
    return sorted(rooms)


def _is_wall_side_clear(grid: np.ndarray, cells) -> bool:
    return all(not grid[r, c] for r, c in cells)


def _carve_nook(grid: np.ndarray, room: Room, rng: np.random.Generator) -> tuple[int, int] | None:
    """Build a partition wall that closes off a 2-cell-deep slot along one room
    wall, open at one end. Returns the cell at the slot's closed end."""
    r0, c0, r1, c1 = room
    options = []
    depth, length = 2, 6
    if r1 - r0 + 1 < depth + 4 or c1 - c0 + 1 < length + 3:
        return None
    for side in ("top", "bottom"):
        for end in ("left", "right"):
            options.append((side, end))
    rng.shuffle(options)
    for side, end in options:
        wr = r0 + depth if side == "top" else r1 - depth
        slot_rows = range(r0, r0 + depth) if side == "top" else range(r1 - depth + 1, r1 + 1)
        cols = range(c0, c0 + length) if end == "left" else range(c1 - length + 1, c1 + 1)
        wall = [(wr, c) for c in cols]
        slot = [(r, c) for r in slot_rows for c in cols]
        # keep the slot clear of doors: the boundary walls along it must be solid
        outer_r = r0 - 1 if side == "top" else r1 + 1
        outer_c = c0 - 1 if end == "left" else c1 + 1
        if not all(grid[outer_r, c] for c in cols) or not all(grid[r, outer_c] for r in [*slot_rows, wr]):
            continue
        if not _is_wall_side_clear(grid, wall + slot):
            continue
        for cell in wall:
            grid[cell] = True
        deep_c = cols[0] if end == "left" else cols[-1]
        return (r0 if side == "top" else r1, deep_c)
    return None


def _random_cell(grid: np.ndarray, room: Room, rng: np.random.Generator, taken: set, margin: int = 1):
    r0, c0, r1, c1 = room
    for _ in range(200):
        r = int(rng.integers(r0 + margin, r1 - margin + 1))
        c = int(rng.integers(c0 + margin, c1 - margin + 1))
        if not grid[r, c] and all(abs(r - a) + abs(c - b) > 6 for a, b in taken):
            return r, c
    return None


def generate_scene(spec: GeneratorSpec) -> GridScene:
    """Deterministic per ``spec.seed``: BSP rooms joined by doors, target
    objects (some tucked into wall nooks) and decoys of confusable classes."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    grid = np.zeros((h, w), dtype=bool)
    grid[0, :] = grid[-1, :] = True
    grid[:, 0] = grid[:, -1] = True
    rooms = _split_rooms(grid, rng, spec)
    cats = [str(c) for c in rng.permutation(list(spec.categories))[: spec.targets]]
    objects: list[SceneObject] = []
    taken: set = set()
    n_nook = int(round(spec.nook_fraction * len(cats)))
    room_order = [rooms[i] for i in rng.permutation(len(rooms))]
    res = spec.resolution

    def add(obj_id: str, cat: str, cell):
        taken.add(cell)
        objects.append(SceneObject(obj_id, cat, ((cell[1] + 0.5) * res, (cell[0] + 0.5) * res), 0.2))

    used_nook_rooms: set = set()
    for i, cat in enumerate(cats):
        cell = None
        if i < n_nook:
            for room in room_order:
                if room in used_nook_rooms:
                    continue
                cell = _carve_nook(grid, room, rng)
                if cell is not None:
                    used_nook_rooms.add(room)
                    break
        if cell is None:
            cell = _random_cell(grid, room_order[i % len(room_order)], rng, taken)
        if cell is not None:
            add(f"t{i}", cat, cell)
    decoy_cats = [DECOYS.get(c, c + "_decoy") for c in cats][: spec.decoys]
    for j, cat in enumerate(decoy_cats):
        room = room_order[(j + 1) % len(room_order)]
        cell = _random_cell(grid, room, rng, taken)
        if cell is not None:
            add(f"d{j}", cat, cell)
    scene = GridScene(grid, res, tuple(objects))
    _check_connected(scene)
    return scene


def _check_connected(scene: GridScene) -> None:
    labels = scene.free_components()
    if len(np.unique(labels[labels > 0])) != 1:
        raise ValueError("generated scene has disconnected free space")
