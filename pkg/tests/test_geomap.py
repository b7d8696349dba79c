import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mosearch.geomap import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    Frontier,
    NavConfig,
    ObstacleMap,
    best_frontier,
    drive_to,
    extract_frontiers,
    frontier_cells,
    reachable_free,
    shortest_path,
    update_obstacle_map,
)
from mosearch.world import FORWARD, GridScene, MotionConfig, RobotPose, SensorSpec, raycast_visibility, scene_from_rows

RES = 0.25


def omap_from(rows):
    """'?' unknown, '.' free, '#' occupied."""
    lut = {"?": UNKNOWN, ".": FREE, "#": OCCUPIED}
    return ObstacleMap(np.array([[lut[ch] for ch in row] for row in rows], dtype=np.int8), RES)


def known_map(scene: GridScene) -> ObstacleMap:
    return ObstacleMap(np.where(scene.occupancy, OCCUPIED, FREE).astype(np.int8), scene.resolution)


# --- obstacle map -------------------------------------------------------------


def test_fresh_map_all_unknown():
    m = ObstacleMap.unknown((4, 6), RES)
    assert m.unknown_count() == 24


def test_full_scan_of_empty_room_marks_free():
    scene = scene_from_rows(["." * 9] * 9, RES)
    pose = RobotPose(4.5 * RES, 4.5 * RES)
    vis = raycast_visibility(scene, pose, SensorSpec(fov=2 * math.pi, max_range=1.0, ray_count=256))
    m = update_obstacle_map(ObstacleMap.unknown(scene.shape, RES), pose, vis, scene)
    for r in range(9):
        for c in range(9):
            d = math.hypot((c + 0.5) * RES - pose.x, (r + 0.5) * RES - pose.y)
            if d <= 1.0 - RES:
                assert m.state[r, c] == FREE
    assert not (m.state == OCCUPIED).any()


def test_wall_marked_and_cell_behind_stays_unknown():
    scene = scene_from_rows(["....#..."], RES)
    pose = RobotPose(0.5 * RES, 0.5 * RES, 0.0)
    vis = raycast_visibility(scene, pose, SensorSpec(fov=math.radians(10), max_range=5.0, ray_count=4))
    m = update_obstacle_map(ObstacleMap.unknown(scene.shape, RES), pose, vis, scene)
    assert m.state[0, 4] == OCCUPIED
    assert m.state[0, 5] == UNKNOWN
    assert (m.state[0, :4] == FREE).all()


_SCENE = scene_from_rows(
    [
        "............",
        ".....#......",
        ".....#..##..",
        ".....#......",
        "............",
        "..###.......",
        "............",
        ".......#....",
    ],
    RES,
)


@settings(max_examples=1000, deadline=None)
@given(seq=st.lists(st.tuples(st.floats(0, 0.999), st.floats(0, 0.999), st.floats(-math.pi, math.pi)),
                    min_size=1, max_size=6))
def test_monotone_exploration(seq):
    m = ObstacleMap.unknown(_SCENE.shape, RES)
    sensor = SensorSpec(fov=math.radians(79), max_range=1.5, ray_count=16)
    for fx, fy, phi in seq:
        pose = RobotPose(fx * _SCENE.width * RES, fy * _SCENE.height * RES, phi)
        if not _SCENE.is_free(pose.x, pose.y):
            continue
        before = m.copy()
        m = update_obstacle_map(m, pose, raycast_visibility(_SCENE, pose, sensor), _SCENE)
        assert m.unknown_count() <= before.unknown_count()
        known = before.state != UNKNOWN
        assert (m.state[known] == before.state[known]).all()
        # observations agree with ground truth
        assert (m.state[_SCENE.occupancy] != FREE).all()
        assert (m.state[~_SCENE.occupancy] != OCCUPIED).all()


# --- frontiers ----------------------------------------------------------------

ONE_DOOR = ["..............."] * 7 + ["######...######"] + ["???????????????"] * 7
TWO_DOORS = ["..............."] * 7 + ["#...#######...#"] + ["???????#???????"] * 7


def test_fully_explored_has_no_frontiers():
    assert extract_frontiers(omap_from(["....", ".##.", "...."])) == []


def test_single_doorway_gives_one_frontier():
    fr = extract_frontiers(omap_from(ONE_DOOR))
    assert len(fr) == 1
    assert fr[0].midpoint_cell == (7, 7)
    assert sorted(fr[0].boundary_cells) == [(7, 6), (7, 7), (7, 8)]
    assert fr[0].midpoint == pytest.approx((7.5 * RES, 7.5 * RES))


def test_two_doorways_give_two_frontiers():
    fr = extract_frontiers(omap_from(TWO_DOORS))
    assert [f.midpoint_cell for f in fr] == [(7, 2), (7, 12)]


def test_small_frontiers_dropped():
    rows = ["......."] * 3 + ["###.###"] + ["???????"] * 2
    assert extract_frontiers(omap_from(rows), min_frontier_cells=3) == []
    assert len(extract_frontiers(omap_from(rows), min_frontier_cells=1)) == 1


def test_unreachable_frontier_filtered():
    rows = ["....#....", "....#....", "....#....", "????#????"]
    m = omap_from(rows)
    assert len(extract_frontiers(m)) == 2
    fr = extract_frontiers(m, robot_cell=(0, 0))
    assert len(fr) == 1 and fr[0].midpoint_cell[1] < 4


maps = st.integers(3, 10).flatmap(
    lambda n: st.lists(st.lists(st.sampled_from([UNKNOWN, FREE, OCCUPIED]), min_size=n, max_size=n),
                       min_size=n, max_size=n)
)


@settings(max_examples=1000, deadline=None)
@given(grid=maps, pick=st.integers(0, 1000), k=st.integers(1, 4))
def test_frontier_invariants(grid, pick, k):
    m = ObstacleMap(np.array(grid, dtype=np.int8), RES)
    free = np.argwhere(m.state == FREE)
    robot = tuple(free[pick % len(free)]) if len(free) else None
    fr = extract_frontiers(m, k, robot)
    boundary = frontier_cells(m)
    reach = reachable_free(m, robot) if robot is not None else None
    for f in fr:
        assert len(f.boundary_cells) >= k
        assert f.midpoint_cell in f.boundary_cells
        for cell in f.boundary_cells:
            assert boundary[cell]
        if reach is not None:
            assert reach[f.midpoint_cell]
    assert [f.midpoint_cell for f in fr] == sorted(f.midpoint_cell for f in fr)


def _frontier(cell):
    return Frontier(((cell[1] + 0.5) * RES, (cell[0] + 0.5) * RES), (cell,), 0.0, cell)


def test_best_frontier_cases():
    agg = np.zeros((10, 10))
    a, b = _frontier((2, 2)), _frontier((7, 7))
    assert best_frontier([a], agg).midpoint_cell == (2, 2)
    assert best_frontier([], agg) is None
    assert best_frontier([a, b], agg).midpoint_cell == (2, 2)
    agg[:4, :4] = 0.2
    agg[4:, 4:] = 0.8
    best = best_frontier([a, b], agg)
    assert best.midpoint_cell == (7, 7)
    assert best.score == pytest.approx(0.8)


# --- shortest paths -----------------------------------------------------------


def test_path_to_self():
    m = omap_from([".."])
    p = shortest_path(m, (0.1, 0.1), (0.2, 0.1))
    assert p.waypoints == [] and p.length == 0.0


def test_straight_corridor_length():
    m = omap_from(["." * 10])
    p = shortest_path(m, (0.5 * RES, 0.5 * RES), (9.5 * RES, 0.5 * RES))
    assert p.length == pytest.approx(2.25)
    assert len(p.waypoints) == 9


def test_sealed_goal_has_no_path():
    m = omap_from(["....###", "....#.#", "....###"])
    assert shortest_path(m, (0.1, 0.1), (5.5 * RES, 1.5 * RES), unknown_cost=None) is None


def test_unknown_cells_cost_more():
    m = omap_from([".???."])
    start, goal = (0.5 * RES, 0.5 * RES), (4.5 * RES, 0.5 * RES)
    p = shortest_path(m, start, goal, unknown_cost=2.0)
    assert p.length == pytest.approx(1.0)
    # edges average their end-cell multipliers: 1.5 + 2 + 2 + 1.5 cells
    assert p.cost == pytest.approx(7.0 * RES)
    assert shortest_path(m, start, goal, unknown_cost=None) is None


def test_detour_longer_than_euclid():
    m = omap_from([".....", "####.", "....."])
    start, goal = (0.5 * RES, 0.5 * RES), (0.5 * RES, 2.5 * RES)
    p = shortest_path(m, start, goal)
    assert p.length > math.dist(start, goal)


@settings(max_examples=1000, deadline=None)
@given(grid=maps, a=st.integers(0, 1000), b=st.integers(0, 1000))
def test_path_at_least_euclid(grid, a, b):
    m = ObstacleMap(np.array(grid, dtype=np.int8), RES)
    free = np.argwhere(m.state == FREE)
    if len(free) == 0:
        return
    s, g = free[a % len(free)], free[b % len(free)]
    sp, gp = m.cell_center(*s), m.cell_center(*g)
    p = shortest_path(m, sp, gp, unknown_cost=None)
    if p is None:
        assert not reachable_free(m, tuple(s))[tuple(g)]
        return
    assert p.length >= math.dist(sp, gp) - 1e-9
    for r, c in p.cells:
        assert m.state[r, c] == FREE
    if s[0] == g[0] and (m.state[s[0], min(s[1], g[1]) : max(s[1], g[1]) + 1] == FREE).all():
        assert p.length == pytest.approx(math.dist(sp, gp))


# --- controller ---------------------------------------------------------------


def test_drive_goal_already_reached():
    scene = scene_from_rows(["." * 5] * 5, RES)
    pose = RobotPose(0.6, 0.6)
    res = drive_to(scene, pose, known_map(scene), (0.65, 0.6))
    assert res.arrived and res.commands == [] and res.distance == 0.0


def test_drive_straight_one_meter():
    scene = scene_from_rows(["." * 12] * 3, RES)
    pose = RobotPose(0.5 * RES, 1.5 * RES, 0.0)
    goal = (pose.x + 1.0, pose.y)
    res = drive_to(scene, pose, known_map(scene), goal, NavConfig(arrival_radius=0.1), MotionConfig(step_length=0.25))
    assert res.arrived
    assert res.commands == [FORWARD] * 4
    assert res.distance == pytest.approx(1.0)


def test_drive_around_wall():
    scene = scene_from_rows(["........", "######..", "........"], RES)
    pose = RobotPose(0.5 * RES, 0.5 * RES, 0.0)
    goal = (0.5 * RES, 2.5 * RES)
    res = drive_to(scene, pose, known_map(scene), goal, NavConfig(arrival_radius=0.15))
    assert res.arrived
    assert res.distance > math.dist(pose.position, goal)


def test_drive_sealed_goal_reports_no_path():
    scene = scene_from_rows(["....###", "....#.#", "....###"], RES)
    pose = RobotPose(0.5 * RES, 0.5 * RES, 0.0)
    res = drive_to(scene, pose, known_map(scene), (5.5 * RES, 1.5 * RES), NavConfig(unknown_cost=None))
    assert not res.arrived and res.reason == "no_path"


def test_drive_step_cap():
    scene = scene_from_rows(["." * 40], RES)
    pose = RobotPose(0.5 * RES, 0.5 * RES, 0.0)
    res = drive_to(scene, pose, known_map(scene), (39.5 * RES, 0.5 * RES), max_commands=5)
    assert not res.arrived and res.reason == "step_cap" and len(res.commands) == 5


@settings(max_examples=1000, deadline=None)
@given(grid=st.lists(st.lists(st.booleans(), min_size=8, max_size=8), min_size=6, max_size=6),
       a=st.integers(0, 1000), b=st.integers(0, 1000), phi=st.floats(-math.pi, math.pi),
       explored=st.booleans())
def test_drive_never_enters_occupied(grid, a, b, phi, explored):
    occ = np.array(grid, dtype=bool)
    occ[0, 0] = False
    scene = GridScene(occ, RES)
    free = np.argwhere(~occ)
    s, g = free[a % len(free)], free[b % len(free)]
    pose = RobotPose((s[1] + 0.5) * RES, (s[0] + 0.5) * RES, phi)
    goal = ((g[1] + 0.5) * RES, (g[0] + 0.5) * RES)
    omap = known_map(scene) if explored else ObstacleMap.unknown(scene.shape, RES)
    sensor = SensorSpec(fov=math.radians(79), max_range=1.5, ray_count=12)
    poses = []

    def on_step(p, cmd, blocked):
        nonlocal omap
        assert scene.is_free(p.x, p.y)
        poses.append(p)
        omap = update_obstacle_map(omap, p, raycast_visibility(scene, p, sensor), scene)
        return omap, False

    res = drive_to(scene, pose, omap, goal, NavConfig(max_leg_commands=60), on_step=on_step)
    assert scene.is_free(res.pose.x, res.pose.y)
    assert len(res.commands) == len(poses) <= 60
    travelled = sum(math.dist(p.position, q.position) for p, q in zip([pose] + poses, poses))
    assert res.distance == pytest.approx(travelled)
