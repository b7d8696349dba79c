"""Episode orchestration, baseline/ablation policies, SR / MSPL metrics and
seeded batch benchmarking."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .candidates import CandidateSet, DbscanParams, build_belief
from .geomap import (
    DriveResult,
    NavConfig,
    ObstacleMap,
    PathOracle,
    best_frontier,
    drive_to,
    extract_frontiers,
    reachable_free,
    update_obstacle_map,
)
from .planner import (
    EmptyActionSpace,
    FRONTIER,
    PomdpParams,
    SearchPomdp,
    plan_distances,
    pouct_plan,
    real_belief_refresh,
)
from .valuemap import SUM_NORM, DecayParams, ValueLayer, ingest_observation
from .world import (
    TURN_LEFT,
    DetectionConfig,
    GridScene,
    MotionConfig,
    OracleConfig,
    RobotPose,
    SensorSpec,
    SyntheticOracle,
    format_scene,
    raycast_visibility,
    simulate_detection,
    step_robot,
)

log = logging.getLogger(__name__)

OPENGUIDE = "openguide"
NO_POMDP = "no_pomdp"
NO_DECAY = "no_decay"
VLFM_LIKE = "vlfm_like"
FINDER_LIKE = "finder_like"
RANDOM_WALK = "random_walk"
POLICIES = (OPENGUIDE, NO_POMDP, NO_DECAY, VLFM_LIKE, FINDER_LIKE, RANDOM_WALK)

TraceSink = Callable[[dict], None]
MapSink = Callable[[int, int, ObstacleMap, dict], None]


@dataclass(frozen=True)
class AgentConfig:
    sensor: SensorSpec = field(default_factory=SensorSpec)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    decay: DecayParams = field(default_factory=DecayParams)
    aggregation: str = SUM_NORM
    nav: NavConfig = field(default_factory=NavConfig)
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    pomdp: PomdpParams = field(default_factory=PomdpParams)
    replan_interval: int | None = None  # max commands per decision; None drives each leg to the end
    stop_radius: float = 0.5  # approach distance before calling stop on a detected target
    random_walk_radius: float = 1.5
    initial_spin: bool = True


@dataclass(frozen=True)
class EpisodeConfig:
    scene: GridScene
    targets: tuple[str, ...]
    policy: str = OPENGUIDE
    seed: int = 0
    start: RobotPose | None = None
    max_steps: int = 500
    success_radius: float = 1.0
    agent: AgentConfig = field(default_factory=AgentConfig)
    episode_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {', '.join(POLICIES)}")
        if not self.targets:
            raise ValueError("at least one target is required")
        missing = [t for t in self.targets if t not in self.scene.categories()]
        if missing:
            raise ValueError(f"targets not in scene: {', '.join(missing)}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate targets")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class TargetOutcome:
    category: str
    found: bool = False
    step_found: int | None = None


@dataclass
class EpisodeResult:
    episode_id: str
    policy: str
    seed: int
    per_target: list[TargetOutcome]
    success: bool
    path_length: float
    optimal_length: float
    steps: int
    decisions: int = 0
    reason: str = ""

    @property
    def spl_term(self) -> float:
        if not self.success:
            return 0.0
        denom = max(self.path_length, self.optimal_length)
        return 1.0 if denom <= 0 else self.optimal_length / denom

    def row(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "policy": self.policy,
            "seed": self.seed,
            "success": int(self.success),
            "found": ";".join(t.category for t in self.per_target if t.found),
            "targets": ";".join(t.category for t in self.per_target),
            "path_length": f"{self.path_length:.4f}",
            "optimal_length": f"{self.optimal_length:.4f}",
            "spl": f"{self.spl_term:.6f}",
            "steps": self.steps,
            "decisions": self.decisions,
            "reason": self.reason,
        }

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["path_length"] = round(self.path_length, 6)
        d["optimal_length"] = round(self.optimal_length, 6)
        return d


# --- config digest -------------------------------------------------------------


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def scene_digest(scene: GridScene) -> str:
    return hashlib.sha256(format_scene(scene).encode()).hexdigest()[:16]


def config_digest(cfg: EpisodeConfig | AgentConfig, extra: dict | None = None) -> str:
    if isinstance(cfg, EpisodeConfig):
        payload = {k: _plain(getattr(cfg, k)) for k in ("targets", "policy", "seed", "start", "max_steps", "success_radius", "agent")}
        payload["scene"] = scene_digest(cfg.scene)
    else:
        payload = _plain(cfg)
    if extra:
        payload["extra"] = _plain(extra)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- metrics -------------------------------------------------------------------


def success_rate(results: Sequence[EpisodeResult]) -> float:
    if not results:
        raise ValueError("no results")
    return sum(r.success for r in results) / len(results)


def mspl(results: Sequence[EpisodeResult]) -> float:
    """Mean over episodes of success * optimal / max(actual, optimal)."""
    if not results:
        raise ValueError("no results")
    return sum(r.spl_term for r in results) / len(results)


class UnreachableTarget(ValueError):
    pass


def optimal_length(scene: GridScene, start: tuple[float, float], targets: Sequence[str]) -> float:
    """Shortest tour from ``start`` visiting one object of every target category,
    by exhaustive enumeration of visit orders over the true free grid."""
    oracle = PathOracle.for_scene(scene)
    groups = [[o for o in scene.objects if o.category == t] for t in targets]
    if any(not g for g in groups):
        raise UnreachableTarget("target category missing from scene")
    objs = [o for g in groups for o in g]
    cells = [scene.cell_of(*start)] + [scene.cell_of(*o.position) for o in objs]
    dist = oracle.cost_matrix(cells)
    index = {o.id: i + 1 for i, o in enumerate(objs)}
    best = math.inf
    for choice in itertools.product(*groups):
        for order in itertools.permutations(choice):
            total, prev = 0.0, 0
            for o in order:
                total += dist[prev, index[o.id]]
                prev = index[o.id]
            best = min(best, total)
    if not math.isfinite(best):
        raise UnreachableTarget("a target is unreachable from the start")
    return float(best)


# --- episode -------------------------------------------------------------------


def _seed_streams(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(n)]


def spawn_pose(scene: GridScene, seed: int, min_target_dist: float = 2.0) -> RobotPose:
    """Seeded random start on the main free component, away from every object."""
    rng = np.random.default_rng(_seed_streams(seed, 5)[4])
    rows, cols = np.nonzero(scene.main_component())
    order = rng.permutation(len(rows))
    for i in order:
        x, y = scene.cell_center(int(rows[i]), int(cols[i]))
        if all(math.dist((x, y), o.position) >= min_target_dist for o in scene.objects):
            break
    phi = float(rng.uniform(-math.pi, math.pi))
    return RobotPose(x, y, phi)


class _Episode:
    def __init__(self, cfg: EpisodeConfig, trace: TraceSink | None, map_sink: MapSink | None = None):
        self.cfg = cfg
        self.map_sink = map_sink
        self.agent = cfg.agent
        self.scene = cfg.scene
        self.trace = trace
        s_det, s_orc, s_plan, s_pol, _ = _seed_streams(cfg.seed, 5)
        self.det_rng = np.random.default_rng(s_det)
        self.oracle_rng = np.random.default_rng(s_orc)
        self.plan_rng = random.Random(s_plan)
        self.policy_rng = random.Random(s_pol)
        self.oracle = SyntheticOracle(self.agent.oracle)
        self.pose = cfg.start if cfg.start is not None else spawn_pose(self.scene, cfg.seed)
        self.start = self.pose
        self.remaining = list(cfg.targets)
        self.outcomes = {t: TargetOutcome(t) for t in cfg.targets}
        self.steps = 0
        self.distance = 0.0
        self.decisions = 0
        self.failed_goals: set[tuple[int, int]] = set()
        self.object_goals: dict[str, tuple[float, float]] = {}
        self.object_fail: dict[str, int] = {}
        self.pursuit = 0  # index into remaining for the one-target-at-a-time baseline
        self._reset_maps()

    # -- maps --------------------------------------------------------------

    def _reset_maps(self):
        shape = self.scene.shape
        self.omap = ObstacleMap.unknown(shape, self.scene.resolution)
        self.layers = {t: ValueLayer.empty(t, shape) for t in self.cfg.targets}
        for t in self.cfg.targets:
            if self.outcomes[t].found:
                self.layers[t].frozen = True
        self.object_goals.clear()
        self.failed_goals.clear()

    def attended(self) -> list[str]:
        if self.cfg.policy == VLFM_LIKE:
            return self.remaining[:1]
        return list(self.remaining)

    def observe(self):
        a = self.agent
        vis = raycast_visibility(self.scene, self.pose, a.sensor)
        dets = simulate_detection(self.scene, self.pose, a.sensor, vis, a.detection, self.det_rng)
        targets = [t for t in self.cfg.targets if not self.layers[t].frozen]
        if targets:
            scores = self.oracle.scores(self.scene, self.pose, vis, targets, self.oracle_rng)
            for t in targets:
                self.layers[t] = ingest_observation(
                    self.layers[t], self.pose, a.sensor, scores[t], vis, self.scene.resolution
                )
        self.omap = update_obstacle_map(self.omap, self.pose, vis, self.scene)
        attend = set(self.attended())
        new = False
        for obj_id, hit in dets:
            if not hit:
                continue
            obj = self.scene.object_by_id(obj_id)
            if obj.category in attend and obj.category not in self.object_goals:
                self.object_goals[obj.category] = obj.position
                new = True
                self._emit({"type": "detection", "step": self.steps, "object": obj_id, "category": obj.category})
        return new

    # -- motion ------------------------------------------------------------

    def _emit(self, rec: dict):
        if self.trace is not None:
            self.trace(rec)

    def _after_command(self, pose: RobotPose, cmd: str, blocked: bool):
        moved = math.dist(self.pose.position, pose.position)
        self.distance += moved
        self.pose = pose
        self.steps += 1
        self._emit(
            {
                "type": "command",
                "step": self.steps,
                "command": cmd,
                "blocked": blocked,
                "pose": [round(pose.x, 4), round(pose.y, 4), round(pose.phi, 4)],
            }
        )
        new = self.observe()
        return new

    def execute(self, cmd: str):
        pose, blocked = step_robot(self.scene, self.pose, cmd, self.agent.motion)
        self._after_command(pose, cmd, blocked)

    def drive(self, goal, max_commands: int, interrupt_on_detection: bool, nav: NavConfig | None = None) -> DriveResult:
        def on_step(pose, cmd, blocked):
            new = self._after_command(pose, cmd, blocked)
            stop = self.budget() <= 0 or (interrupt_on_detection and new)
            return self.omap, stop

        nav = nav or self.agent.nav
        return drive_to(
            self.scene, self.pose, self.omap, goal, nav, self.agent.motion, on_step, max_commands
        )

    def budget(self) -> int:
        return self.cfg.max_steps - self.steps

    # -- stop --------------------------------------------------------------

    def call_stop(self) -> bool:
        """Mark the nearest unfound target within the success radius as found."""
        best, best_d = None, math.inf
        for obj in self.scene.objects:
            if obj.category not in self.remaining:
                continue
            d = math.dist(self.pose.position, obj.position)
            if d < self.cfg.success_radius and d < best_d:
                best, best_d = obj, d
        self._emit(
            {
                "type": "stop",
                "step": self.steps,
                "found": best.category if best else None,
                "cell": list(self.scene.cell_of(*best.position)) if best else None,
            }
        )
        if best is None:
            return False
        cat = best.category
        self.remaining.remove(cat)
        self.outcomes[cat].found = True
        self.outcomes[cat].step_found = self.steps
        self.layers[cat].frozen = True
        self.object_goals.pop(cat, None)
        if self.cfg.policy == VLFM_LIKE and self.remaining:
            # the next single-object search starts from scratch
            self._reset_maps()
            self.spin()
        return True

    def spin(self):
        if not self.agent.initial_spin:
            return
        n = max(1, int(round(2 * math.pi / self.agent.motion.turn_angle)))
        for _ in range(n):
            if self.budget() <= 0:
                return
            self.execute(TURN_LEFT)

    # -- policies ----------------------------------------------------------

    def _robot_cell(self):
        return self.omap.cell_of(*self.pose.position)

    def _frontiers(self):
        fr = extract_frontiers(self.omap, self.agent.nav.min_frontier_cells, self._robot_cell())
        return [f for f in fr if f.midpoint_cell not in self.failed_goals]

    def _refresh(self, decay: bool):
        a = self.agent
        ref = real_belief_refresh(
            [self.layers[t] for t in self.remaining],
            a.decay if decay else None,
            a.dbscan,
            self.omap,
            self._robot_cell(),
            a.nav,
            a.aggregation,
            self.steps,
            frontiers=self._frontiers(),
        )
        keep = [i for i, c in enumerate(ref.candidates.cells) if c not in self.failed_goals]
        if len(keep) != len(ref.candidates):
            cands = CandidateSet(
                [ref.candidates.points[i] for i in keep], [ref.candidates.cells[i] for i in keep], self.steps
            )
            ref.candidates = cands
            ref.belief = build_belief(cands, ref.decayed)
        return ref

    def select_goal(self) -> tuple[tuple[float, float], str] | None:
        policy = self.cfg.policy
        if policy == RANDOM_WALK:
            return self._random_goal()
        if policy == FINDER_LIKE:
            ref = self._refresh(decay=True)
            self._record(ref, None, None)
            return (ref.frontier.midpoint, FRONTIER) if ref.frontier else None
        if policy == VLFM_LIKE:
            target = self.remaining[0]
            fr = self._frontiers()
            f = best_frontier(fr, self.layers[target].value, self.agent.nav.frontier_radius, self.scene.resolution)
            self._emit_decision([("frontier", f.midpoint, f.score)] if f else [], None, 0 if f else None, [target])
            return (f.midpoint, FRONTIER) if f else None
        ref = self._refresh(decay=policy != NO_DECAY)
        if ref.exhausted:
            self._record(ref, None, None)
            return None
        if policy == NO_POMDP:
            options = [(ref.decayed[c], p, "candidate") for c, p in zip(ref.candidates.cells, ref.candidates.points)]
            if ref.frontier is not None:
                options.append((ref.frontier.score, ref.frontier.midpoint, FRONTIER))
            i = max(range(len(options)), key=lambda k: (options[k][0], -k))
            self._record(ref, None, i)
            return options[i][1], options[i][2]
        goals = list(ref.candidates.points) + ([ref.frontier.midpoint] if ref.frontier else [])
        dist = plan_distances(self.omap, self.pose.position, goals, self.agent.nav.unknown_cost)
        pomdp = SearchPomdp(self.pose.position, ref.candidates, ref.frontier, self.agent.pomdp, dist)
        try:
            plan = pouct_plan(pomdp, ref.belief, self.plan_rng)
        except EmptyActionSpace:
            return None
        self._record(ref, plan, plan.index)
        return plan.action.goal, plan.action.kind

    def _random_goal(self):
        cell = self._robot_cell()
        reach = reachable_free(self.omap, cell)
        rows, cols = np.nonzero(reach)
        r = self.agent.random_walk_radius
        opts = []
        for rr, cc in zip(rows.tolist(), cols.tolist()):
            p = self.omap.cell_center(rr, cc)
            if (rr, cc) != cell and math.dist(p, self.pose.position) <= r:
                opts.append(p)
        if not opts:
            return None
        return self.policy_rng.choice(opts), "random"

    def _record(self, ref, plan, chosen):
        if self.trace is None:
            return
        acts = [("candidate", p, float(ref.decayed[c])) for c, p in zip(ref.candidates.cells, ref.candidates.points)]
        if ref.frontier is not None:
            acts.append(("frontier", ref.frontier.midpoint, ref.frontier.score))
        self._emit_decision(acts, plan, chosen, list(self.remaining), ref.belief.probs)

    def _emit_decision(self, acts, plan, chosen, remaining, belief=()):
        if self.trace is None:
            return
        marks = {}
        for kind, p, _ in acts:
            cell = self.omap.cell_of(*p)
            if cell is not None:
                marks[cell] = "F" if kind == "frontier" else "C"
        rc = self._robot_cell()
        marks[rc] = "R"
        self._emit(
            {
                "type": "decision",
                "step": self.steps,
                "decision": self.decisions,
                "policy": self.cfg.policy,
                "remaining": remaining,
                "actions": [{"kind": k, "goal": [round(p[0], 4), round(p[1], 4)], "value": round(v, 6)} for k, p, v in acts],
                "belief": [round(b, 6) for b in belief],
                "q": [round(q, 4) for q in plan.q] if plan else [],
                "visits": list(plan.visits) if plan else [],
                "chosen": chosen,
                "map": self.omap.to_ascii(marks),
            }
        )

    # -- main loop ---------------------------------------------------------

    def run(self) -> EpisodeResult:
        cfg = self.cfg
        reason = ""
        self.observe()
        self.spin()
        while self.remaining and self.budget() > 0:
            attend = self.attended()
            pending = [t for t in attend if t in self.object_goals]
            if pending:
                cat = pending[0]
                goal = self.object_goals[cat]
                if math.dist(self.pose.position, goal) <= self.agent.stop_radius:
                    if not self.call_stop():
                        self.object_goals.pop(cat, None)
                    continue
                nav = dataclasses.replace(self.agent.nav, arrival_radius=self.agent.stop_radius)
                res = self.drive(goal, self.budget(), interrupt_on_detection=False, nav=nav)
                if res.arrived:
                    if not self.call_stop():
                        self.object_goals.pop(cat, None)
                elif res.reason in ("no_path", "blocked"):
                    self.object_fail[cat] = self.object_fail.get(cat, 0) + 1
                    if self.object_fail[cat] >= 3:
                        self.object_goals.pop(cat, None)
                    if not res.commands and self.budget() > 0:
                        self.execute(TURN_LEFT)
                continue
            choice = self.select_goal()
            if self.map_sink is not None:
                self.map_sink(self.decisions, self.steps, self.omap, dict(self.layers))
            self.decisions += 1
            if choice is None:
                reason = "policy_failure"
                break
            goal, kind = choice
            leg = self.budget() if self.agent.replan_interval is None else min(self.agent.replan_interval, self.budget())
            res = self.drive(goal, leg, interrupt_on_detection=True)
            if not res.commands and self.budget() > 0:
                # already at the goal: look around instead of idling
                self.execute(TURN_LEFT)
            if not res.arrived and res.reason in ("no_path", "blocked"):
                cell = self.omap.cell_of(*goal)
                if cell is not None:
                    self.failed_goals.add(cell)
        if not reason:
            reason = "all_found" if not self.remaining else "step_cap"
        try:
            l_opt = optimal_length(self.scene, self.start.position, cfg.targets)
        except UnreachableTarget:
            log.warning("episode %s: target unreachable, optimal length undefined", cfg.episode_id)
            l_opt = math.nan
        per = [self.outcomes[t] for t in cfg.targets]
        result = EpisodeResult(
            cfg.episode_id,
            cfg.policy,
            cfg.seed,
            per,
            all(t.found for t in per),
            self.distance,
            l_opt,
            self.steps,
            self.decisions,
            reason,
        )
        self._emit({"type": "result", **result.to_json()})
        return result


def run_episode(cfg: EpisodeConfig, trace: TraceSink | None = None, map_sink: MapSink | None = None) -> EpisodeResult:
    """Run one episode. ``trace`` receives every trace record; ``map_sink``
    gets ``(decision, step, obstacle_map, layers)`` before each planning decision."""
    return _Episode(cfg, trace, map_sink).run()


# --- benchmark -----------------------------------------------------------------


def standard_agent() -> AgentConfig:
    """Agent defaults used by the benchmark suites: the synthetic oracle knows
    the generator's target/decoy confusions."""
    from .scenegen import default_affinity

    return AgentConfig(oracle=OracleConfig(affinity=default_affinity()))


@dataclass(frozen=True)
class SuiteEpisode:
    scene: str  # key into BenchmarkSuite.scenes
    targets: tuple[str, ...]
    seed: int


@dataclass
class BenchmarkSuite:
    name: str
    scenes: dict[str, GridScene]
    episodes: list[SuiteEpisode]
    agent: AgentConfig = field(default_factory=standard_agent)
    max_steps: int = 500
    success_radius: float = 1.0

    def __post_init__(self):
        for ep in self.episodes:
            if ep.scene not in self.scenes:
                raise ValueError(f"episode refers to unknown scene {ep.scene!r}")

    def episode_config(self, ep: SuiteEpisode, policy: str, index: int) -> EpisodeConfig:
        return EpisodeConfig(
            self.scenes[ep.scene],
            ep.targets,
            policy,
            ep.seed,
            None,
            self.max_steps,
            self.success_radius,
            self.agent,
            f"{self.name}/{ep.scene}/{index:03d}",
        )

    def digest(self) -> str:
        payload = {
            "name": self.name,
            "scenes": {k: scene_digest(v) for k, v in sorted(self.scenes.items())},
            "episodes": [_plain(dataclasses.asdict(e)) for e in self.episodes],
            "agent": _plain(self.agent),
            "max_steps": self.max_steps,
            "success_radius": self.success_radius,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# scene generator seeds and the episode seed base of the standard suite
STANDARD_SCENE_SEEDS = (101, 202, 303, 404, 505)
STANDARD_EPISODE_SEED = 7000


def standard_suite(episodes_per_scene: int = 20, scene_seeds: Sequence[int] = STANDARD_SCENE_SEEDS) -> BenchmarkSuite:
    """Generated multi-room scenes, each with ``episodes_per_scene`` episodes
    alternating between 2 and 3 targets drawn from the scene's target objects."""
    from .scenegen import GeneratorSpec, generate_scene

    scenes: dict[str, GridScene] = {}
    episodes: list[SuiteEpisode] = []
    for i, s in enumerate(scene_seeds):
        name = f"gen{s}"
        scene = generate_scene(GeneratorSpec(seed=s))
        scenes[name] = scene
        cats = sorted({o.category for o in scene.objects if o.id.startswith("t")})
        rng = random.Random(STANDARD_EPISODE_SEED + i)
        for e in range(episodes_per_scene):
            k = min(len(cats), 2 + e % 2)
            targets = tuple(rng.sample(cats, k))
            episodes.append(SuiteEpisode(name, targets, STANDARD_EPISODE_SEED + 100 * i + e))
    return BenchmarkSuite("standard", scenes, episodes)


@dataclass
class PolicySummary:
    policy: str
    episodes: int
    success_rate: float
    mspl: float
    mean_steps: float
    failures: int = 0
    invalid: int = 0

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "episodes": self.episodes,
            "success_rate": round(self.success_rate, 6),
            "mspl": round(self.mspl, 6),
            "mean_steps": round(self.mean_steps, 3),
            "failures": self.failures,
            "invalid": self.invalid,
        }


@dataclass
class BenchmarkReport:
    suite: str
    digest: str
    results: list[EpisodeResult]
    errors: list[dict] = field(default_factory=list)

    def policies(self) -> list[str]:
        return list(dict.fromkeys(r.policy for r in self.results))

    def by_policy(self, policy: str) -> list[EpisodeResult]:
        return [r for r in self.results if r.policy == policy]

    def summary(self) -> list[PolicySummary]:
        out = []
        for p in self.policies():
            everything = self.by_policy(p)
            # episodes whose optimal length is undefined (unreachable target) are invalid
            rs = [r for r in everything if math.isfinite(r.optimal_length)]
            errs = sum(1 for e in self.errors if e["policy"] == p)
            invalid = len(everything) - len(rs)
            if not rs:
                out.append(PolicySummary(p, 0, 0.0, 0.0, 0.0, errs, invalid))
                continue
            steps = sum(r.steps for r in rs) / len(rs)
            out.append(PolicySummary(p, len(rs), success_rate(rs), mspl(rs), steps, errs, invalid))
        return out

    def summary_json(self) -> dict:
        return {
            "suite": self.suite,
            "config_digest": self.digest,
            "policies": [s.to_json() for s in self.summary()],
            "errors": self.errors,
        }

    def csv_text(self) -> str:
        buf = io.StringIO()
        fields = ["config_digest", *self._row_fields()]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in self.results:
            w.writerow({"config_digest": self.digest, **r.row()})
        return buf.getvalue()

    @staticmethod
    def _row_fields() -> list[str]:
        return list(EpisodeResult("", OPENGUIDE, 0, [], False, 0.0, 0.0, 0).row())

    def write(self, outdir) -> tuple[str, str]:
        from pathlib import Path

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        csv_path = outdir / "episodes.csv"
        json_path = outdir / "summary.json"
        csv_path.write_text(self.csv_text())
        json_path.write_text(json.dumps(self.summary_json(), indent=2, sort_keys=True) + "\n")
        return str(csv_path), str(json_path)


def _run_task(cfg: EpisodeConfig):
    try:
        return run_episode(cfg), None
    except Exception as exc:  # one bad episode must not sink the batch
        return None, f"{type(exc).__name__}: {exc}"


def run_benchmark(suite: BenchmarkSuite, policies: Sequence[str] = POLICIES, jobs: int = 1) -> BenchmarkReport:
    """Run every suite episode under every policy. Results come back in
    (policy, episode) order whatever ``jobs`` is, so output is reproducible."""
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}")
    tasks = [suite.episode_config(ep, p, i) for p in policies for i, ep in enumerate(suite.episodes)]
    if jobs > 1 and len(tasks) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            outcomes = pool.map(_run_task, tasks, chunksize=1)
    else:
        outcomes = [_run_task(t) for t in tasks]
    results, errors = [], []
    for cfg, (res, err) in zip(tasks, outcomes):
        if err is not None:
            log.error("episode %s (%s) failed: %s", cfg.episode_id, cfg.policy, err)
            errors.append({"episode_id": cfg.episode_id, "policy": cfg.policy, "error": err})
        else:
            results.append(res)
    if not results:
        raise RuntimeError("every benchmark episode failed")
    return BenchmarkReport(suite.name, suite.digest(), results, errors)
