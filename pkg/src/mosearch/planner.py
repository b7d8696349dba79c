"""Single-target search POMDP over candidate / frontier MoveTo goals and a
POUCT (Monte-Carlo tree search over action-observation histories) solver."""
from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .candidates import BeliefState, CandidateSet, DbscanParams, build_belief, extract_candidates
from .geomap import (
    OCCUPIED,
    Frontier,
    NavConfig,
    ObstacleMap,
    PathOracle,
    best_frontier,
    extract_frontiers,
)
from .valuemap import SUM_NORM, DecayParams, ValueLayer, aggregate_layers

CANDIDATE = "candidate"
FRONTIER = "frontier"

Point = tuple[float, float]
DistanceFn = Callable[[Point, Point], float]


@dataclass(frozen=True)
class PomdpParams:
    delta: float = 1.0
    beta: float = 0.5
    gamma: float = 0.95
    lambda_move: float = 1.0
    lambda_frontier: float = 5.0
    lambda_target: float = 100.0
    sims: int = 500
    depth: int = 3
    ucb_c: float | None = None  # None: 1.5 * lambda_target
    unreachable_cost: float = 100.0  # meters charged for an unreachable goal
    rollout: str = "random"  # or "greedy"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if not self.beta > 0 or not self.delta > 0:
            raise ValueError("beta and delta must be positive")
        if min(self.lambda_move, self.lambda_frontier, self.lambda_target) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.sims < 1 or self.depth < 1:
            raise ValueError("sims and depth must be >= 1")
        if self.rollout not in ("random", "greedy"):
            raise ValueError(f"unknown rollout policy {self.rollout!r}")

    @property
    def exploration(self) -> float:
        return 1.5 * self.lambda_target if self.ucb_c is None else self.ucb_c


@dataclass(frozen=True)
class PomdpState:
    robot: Point
    target: Point


@dataclass(frozen=True)
class PomdpAction:
    kind: str
    goal: Point

    def to_json(self) -> dict:
        return {"kind": self.kind, "goal": [round(self.goal[0], 4), round(self.goal[1], 4)]}


@dataclass(frozen=True)
class GenerativeOutcome:
    next_state: PomdpState
    observation: int
    reward: float


def euclidean(p: Point, q: Point) -> float:
    return math.dist(p, q)


def transition(s: PomdpState, a: PomdpAction) -> PomdpState:
    return PomdpState(a.goal, s.target)


def observation_prob(s_next: PomdpState, params: PomdpParams) -> float:
    """Probability of a positive detection with the robot at ``s_next.robot``."""
    d = math.dist(s_next.robot, s_next.target)
    return detection_prob(d, params)


def detection_prob(d: float, params: PomdpParams) -> float:
    if d <= params.delta:
        return 1.0
    return math.exp(-params.beta * (d - params.delta))


def _move_cost(d: float, params: PomdpParams) -> float:
    return d if math.isfinite(d) else params.unreachable_cost


def reward(
    s: PomdpState,
    a: PomdpAction,
    s_next: PomdpState,
    params: PomdpParams,
    path_oracle: DistanceFn = euclidean,
) -> float:
    r = -params.lambda_move * _move_cost(path_oracle(s.robot, s_next.robot), params)
    if a.kind == FRONTIER:
        r += params.lambda_frontier
    if math.dist(s_next.robot, s_next.target) <= params.delta:
        r += params.lambda_target
    return r


def generative_step(
    s: PomdpState,
    a: PomdpAction,
    params: PomdpParams,
    path_oracle: DistanceFn = euclidean,
    rng: random.Random | int | None = None,
) -> GenerativeOutcome:
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    s2 = transition(s, a)
    o = 1 if rng.random() < observation_prob(s2, params) else 0
    return GenerativeOutcome(s2, o, reward(s, a, s2, params, path_oracle))


def simulated_belief_update(b: BeliefState, a: PomdpAction, o: int, params: PomdpParams) -> BeliefState:
    """Bayes rule over static candidate targets after executing ``a`` and observing ``o``."""
    if len(b) == 0:
        raise ValueError("belief is empty")
    like = []
    for pt in b.support.points:
        p1 = detection_prob(math.dist(a.goal, pt), params)
        like.append(p1 if o == 1 else 1.0 - p1)
    post = np.asarray(like) * np.asarray(b.probs)
    total = post.sum()
    if total <= 0:
        post = np.full(len(b), 1.0 / len(b))
    else:
        post = post / total
    return BeliefState(b.support, post.tolist())


class SearchPomdp:
    """The POMDP for one planning call, with every distance precomputed.

    Robot positions are indexed: 0 is the current pose, ``k + 1`` is the goal
    of action ``k``. Targets live on candidate points.
    """

    def __init__(
        self,
        robot: Point,
        candidates: CandidateSet,
        frontier: Frontier | None,
        params: PomdpParams,
        path_oracle: DistanceFn | np.ndarray = euclidean,
    ):
        self.robot = tuple(robot)
        self.params = params
        self.candidates = candidates
        self.actions: list[PomdpAction] = [PomdpAction(CANDIDATE, tuple(p)) for p in candidates.points]
        if frontier is not None:
            self.actions.append(PomdpAction(FRONTIER, tuple(frontier.midpoint)))
        positions = [self.robot] + [a.goal for a in self.actions]
        if isinstance(path_oracle, np.ndarray):
            move = np.asarray(path_oracle, dtype=float)
        else:
            move = np.array([[path_oracle(p, q) for q in positions] for p in positions], dtype=float)
        move = np.where(np.isfinite(move), move, params.unreachable_cost)
        self.move_cost = move
        nt = len(candidates.points)
        na = len(self.actions)
        # step reward without the target term, per (from position, action)
        self._base = [
            [-params.lambda_move * move[i, k + 1] + (params.lambda_frontier if self.actions[k].kind == FRONTIER else 0.0)
             for k in range(na)]
            for i in range(na + 1)
        ]
        self._p_obs = [[detection_prob(math.dist(self.actions[k].goal, candidates.points[t]), params)
                        for t in range(nt)] for k in range(na)]
        self._hit = [[math.dist(self.actions[k].goal, candidates.points[t]) <= params.delta
                      for t in range(nt)] for k in range(na)]

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def step(self, pos: int, target: int, a: int, rng: random.Random) -> tuple[int, int, float]:
        r = self._base[pos][a]
        if self._hit[a][target]:
            r += self.params.lambda_target
        o = 1 if rng.random() < self._p_obs[a][target] else 0
        return a + 1, o, r

    def generative(self, s: PomdpState, a: PomdpAction, rng) -> GenerativeOutcome:
        def oracle(p, q):
            return self.move_cost[self._pos_index(p), self._pos_index(q)]

        return generative_step(s, a, self.params, oracle, rng)

    def _pos_index(self, p: Point) -> int:
        if tuple(p) == self.robot:
            return 0
        for k, a in enumerate(self.actions):
            if a.goal == tuple(p):
                return k + 1
        raise KeyError(p)


class _Node:
    __slots__ = ("n", "na", "q", "children")

    def __init__(self, n_actions: int):
        self.n = 0
        self.na = [0] * n_actions
        self.q = [0.0] * n_actions
        self.children: dict[tuple[int, int], _Node] = {}


@dataclass
class PlanResult:
    action: PomdpAction
    index: int
    q: list[float] = field(default_factory=list)
    visits: list[int] = field(default_factory=list)


class EmptyActionSpace(RuntimeError):
    pass


def pouct_plan(
    pomdp: SearchPomdp,
    belief: BeliefState,
    rng: random.Random | int | None = None,
) -> PlanResult:
    """Run ``params.sims`` simulations from root states sampled from ``belief``
    and return the action with the highest root Q (lowest index on ties)."""
    na = pomdp.n_actions
    if na == 0:
        raise EmptyActionSpace("no candidate or frontier action available")
    if na == 1 or len(belief) == 0:
        # without a belief there is nothing to simulate; only the frontier can be offered
        return PlanResult(pomdp.actions[0], 0, [0.0] * na, [0] * na)
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    params = pomdp.params
    gamma = params.gamma
    depth_max = params.depth
    c = params.exploration
    cum = list(np.cumsum(belief.probs))
    cum[-1] = float("inf")
    step = pomdp.step
    log = math.log
    sqrt = math.sqrt

    if params.rollout == "greedy":
        def pick_rollout(pos: int, tgt: int) -> int:
            return max(range(na), key=lambda a: pomdp._base[pos][a])
    else:
        def pick_rollout(pos: int, tgt: int) -> int:
            return int(rng.random() * na)

    def rollout(pos: int, tgt: int, depth: int) -> float:
        total, disc = 0.0, 1.0
        while depth < depth_max:
            a = pick_rollout(pos, tgt)
            pos, _, r = step(pos, tgt, a, rng)
            total += disc * r
            disc *= gamma
            depth += 1
        return total

    def simulate(pos: int, tgt: int, node: _Node, depth: int) -> float:
        if depth >= depth_max:
            return 0.0
        a = -1
        for k in range(na):
            if node.na[k] == 0:
                a = k
                break
        if a < 0:
            logn = log(node.n)
            best = -math.inf
            for k in range(na):
                u = node.q[k] + c * sqrt(logn / node.na[k])
                if u > best:
                    best, a = u, k
        pos2, o, r = step(pos, tgt, a, rng)
        key = (a, o)
        child = node.children.get(key)
        if child is None:
            node.children[key] = _Node(na)
            future = rollout(pos2, tgt, depth + 1)
        else:
            future = simulate(pos2, tgt, child, depth + 1)
        ret = r + gamma * future
        node.n += 1
        node.na[a] += 1
        node.q[a] += (ret - node.q[a]) / node.na[a]
        return ret

    root = _Node(na)
    for _ in range(params.sims):
        tgt = bisect.bisect_right(cum, rng.random())
        simulate(0, min(tgt, len(cum) - 1), root, 0)
    best = max(range(na), key=lambda k: (root.q[k] if root.na[k] else -math.inf, -k))
    return PlanResult(pomdp.actions[best], best, list(root.q), list(root.na))


# --- real-execution refresh ---------------------------------------------------


@dataclass
class Refresh:
    candidates: CandidateSet
    belief: BeliefState
    frontier: Frontier | None
    frontiers: list[Frontier]
    decayed: np.ndarray
    raw: np.ndarray

    @property
    def exhausted(self) -> bool:
        return len(self.candidates) == 0 and self.frontier is None


def real_belief_refresh(
    layers: Sequence[ValueLayer],
    decay: DecayParams | None,
    dbscan_params: DbscanParams,
    omap: ObstacleMap,
    robot_cell: tuple[int, int],
    nav: NavConfig | None = None,
    mode: str = SUM_NORM,
    step: int = 0,
    frontiers: list[Frontier] | None = None,
) -> Refresh:
    """Rebuild candidates, belief and the best frontier from the current maps.

    ``decay=None`` disables value decay. Candidates never sit on known walls.
    """
    nav = nav or NavConfig()
    active = [l for l in layers if not l.frozen]
    shape = omap.shape
    if active:
        raw = aggregate_layers(active, mode).value
        decayed = aggregate_layers(active, mode, decay).value if decay is not None else raw.copy()
    else:
        raw = np.zeros(shape)
        decayed = np.zeros(shape)
    decayed = np.where(omap.state == OCCUPIED, 0.0, decayed)
    cands = extract_candidates(decayed, dbscan_params, omap.resolution, step)
    belief = build_belief(cands, decayed)
    if frontiers is None:
        frontiers = extract_frontiers(omap, nav.min_frontier_cells, robot_cell)
    frontier = best_frontier(frontiers, raw, nav.frontier_radius, omap.resolution)
    return Refresh(cands, belief, frontier, frontiers, decayed, raw)


def plan_distances(omap: ObstacleMap, robot: Point, goals: Sequence[Point], unknown_cost: float | None) -> np.ndarray:
    """Obstacle-aware pairwise path costs among the robot and goal points."""
    oracle = PathOracle.for_map(omap, unknown_cost)
    cells = [omap.cell_of(*p) for p in [robot, *goals]]
    return oracle.cost_matrix(cells)
