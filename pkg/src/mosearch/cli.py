"""Command-line entry points: gen-scenes, run, bench, replay, inspect-map."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    agent_from_dict,
    default_run_config,
    dump_yaml,
    load_run_config,
    load_yaml,
    scene_from_entry,
)
from .geomap import ObstacleMap
from .harness import (
    POLICIES,
    BenchmarkSuite,
    SuiteEpisode,
    config_digest,
    run_benchmark,
    run_episode,
    standard_suite,
)
from .scenegen import GeneratorSpec, generate_scene
from .valuemap import dump_layer, load_layer_dump
from .world import SceneFormatError, load_scene, save_scene

log = logging.getLogger("mosearch")

OUT_ENV = "MOSEARCH_OUT"
EXIT_OK, EXIT_TOOL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    config_path: str
    seed: int
    output_dir: str
    tool_version: str
    config_digest: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _out_dir(arg: str | None, fallback: str) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or fallback)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- gen-scenes ----------------------------------------------------------------


def cmd_gen_scenes(args) -> int:
    out = _out_dir(args.out, "scenes")
    out.mkdir(parents=True, exist_ok=True)
    seeds = args.seed or [0]
    for seed in seeds:
        try:
            spec = GeneratorSpec(
                width=args.width,
                height=args.height,
                rooms=args.rooms,
                targets=args.targets,
                decoys=args.decoys,
                nook_fraction=args.nook_fraction,
                seed=seed,
            )
            scene = generate_scene(spec)
        except ValueError as exc:
            raise UsageError(f"invalid generator spec: {exc}") from None
        path = out / f"scene_{seed}.txt"
        save_scene(scene, path)
        print(path)
    return EXIT_OK


# --- run -----------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    out = _out_dir(args.out, "run_out")
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)
    manifest = RunManifest(str(args.config), cfg.seed, str(out), __version__, digest)
    trace_path = out / "trace.jsonl"
    map_dir = out / "maps"
    map_sink = None
    if args.dump_maps:
        map_dir.mkdir(exist_ok=True)

        def map_sink(decision: int, step: int, omap: ObstacleMap, layers: dict):
            stem = f"decision_{decision:04d}"
            (map_dir / f"{stem}_obstacles.txt").write_text(omap.to_ascii())
            for target, layer in layers.items():
                dump_layer(layer, map_dir / f"{stem}_{target}", cfg.agent.decay, step)

    with trace_path.open("w") as fh:

        def trace(rec: dict):
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")

        trace({"type": "header", **manifest.to_json(), "policy": cfg.policy, "targets": list(cfg.targets)})
        result = run_episode(cfg, trace, map_sink)
    _write_json(out / "result.json", {"config_digest": digest, **result.to_json()})
    _write_json(out / "manifest.json", manifest.to_json())
    if args.dump_maps:
        _write_json(map_dir / "index.json", {"config_digest": digest, "decisions": result.decisions})
    print(
        f"{cfg.policy}: success={str(result.success).lower()} steps={result.steps} "
        f"path={result.path_length:.2f}m optimal={result.optimal_length:.2f}m ({result.reason})"
    )
    return EXIT_OK


# --- bench ---------------------------------------------------------------------


def load_suite(path: str, episodes_per_scene: int | None) -> BenchmarkSuite:
    """``standard`` or a YAML suite file with ``scenes`` and ``episodes``."""
    if path == "standard":
        return standard_suite(episodes_per_scene or 20)
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError("suite", "top level must be a mapping")
    allowed = {"name", "scenes", "episodes", "agent", "max_steps", "success_radius"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    base = Path(path).parent
    raw_scenes = data.get("scenes")
    if not isinstance(raw_scenes, dict) or not raw_scenes:
        raise ConfigError("scenes", "expected a mapping of scene name to scene entry")
    scenes = {str(k): scene_from_entry(v, base, f"scenes.{k}") for k, v in raw_scenes.items()}
    episodes = []
    for i, ep in enumerate(data.get("episodes") or []):
        where = f"episodes[{i}]"
        if not isinstance(ep, dict) or set(ep) - {"scene", "targets", "seed"} or "scene" not in ep or "targets" not in ep:
            raise ConfigError(where, "expected {scene, targets, seed}")
        episodes.append(SuiteEpisode(str(ep["scene"]), tuple(ep["targets"]), int(ep.get("seed", i))))
    if not episodes:
        raise ConfigError("episodes", "suite has no episodes")
    try:
        return BenchmarkSuite(
            str(data.get("name", Path(path).stem)),
            scenes,
            episodes,
            agent_from_dict(data.get("agent")),
            int(data.get("max_steps", 500)),
            float(data.get("success_radius", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError("episodes", str(exc)) from None


def cmd_bench(args) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()] if args.policies else list(POLICIES)
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise ConfigError("policies", f"unknown policy {bad[0]!r}; expected one of {', '.join(POLICIES)}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    suite = load_suite(args.suite, args.episodes_per_scene)
    report = run_benchmark(suite, policies, args.jobs)
    out = _out_dir(args.out, "bench_out")
    csv_path, json_path = report.write(out)
    print(f"{'policy':<12} {'SR':>6} {'MSPL':>7} {'steps':>7}")
    for s in report.summary():
        print(f"{s.policy:<12} {s.success_rate:6.3f} {s.mspl:7.3f} {s.mean_steps:7.1f}")
    if report.errors:
        print(f"{len(report.errors)} episode(s) failed; see {json_path}")
    print(csv_path)
    print(json_path)
    if report.errors and not report.results:
        print(f"error: every episode failed, first: {report.errors[0]['error']}", file=sys.stderr)
        return EXIT_TOOL
    return EXIT_OK


# --- replay --------------------------------------------------------------------


def read_trace(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError("trace", f"record {i}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "type" not in rec:
                raise ConfigError("trace", f"record {i}: missing record type")
            records.append(rec)
    return records


def render_record(rec: dict, last_map: str | None, found: dict) -> str:
    kind = rec["type"]
    if kind == "header":
        return f"episode policy={rec.get('policy')} targets={','.join(rec.get('targets', []))} digest={rec.get('config_digest')}"
    if kind == "command":
        x, y, phi = rec["pose"]
        flag = " (blocked)" if rec["blocked"] else ""
        return f"step {rec['step']:4d}  {rec['command']:<10} pose=({x:.2f}, {y:.2f}, {phi:+.2f}){flag}"
    if kind == "detection":
        return f"step {rec['step']:4d}  detected {rec['category']} ({rec['object']})"
    if kind == "stop":
        return f"step {rec['step']:4d}  stop -> {rec['found'] or 'nothing'}"
    if kind == "decision":
        lines = [f"decision {rec['decision']} at step {rec['step']}  remaining={','.join(rec['remaining'])}"]
        lines.append(rec["map"].rstrip("\n"))
        q, visits, belief = rec.get("q") or [], rec.get("visits") or [], rec.get("belief") or []
        lines.append(f"  {'#':>2} {'kind':<9} {'goal':>16} {'value':>7} {'belief':>7} {'Q':>9} {'N':>5}")
        for i, a in enumerate(rec["actions"]):
            b = f"{belief[i]:.3f}" if i < len(belief) else ""
            qq = f"{q[i]:.2f}" if i < len(q) else ""
            n = str(visits[i]) if i < len(visits) else ""
            mark = "*" if rec["chosen"] == i else " "
            goal = f"({a['goal'][0]:.2f}, {a['goal'][1]:.2f})"
            lines.append(f" {mark}{i:>2} {a['kind']:<9} {goal:>16} {a['value']:7.3f} {b:>7} {qq:>9} {n:>5}")
        return "\n".join(lines)
    if kind == "result":
        lines = []
        if last_map is not None:
            grid = [list(row) for row in last_map.rstrip("\n").split("\n")]
            for (r, c) in found.values():
                if 0 <= r < len(grid) and 0 <= c < len(grid[r]):
                    grid[r][c] = "T"
            lines.append("\n".join("".join(row) for row in grid))
        names = [t["category"] for t in rec["per_target"] if t["found"]]
        lines.append(
            f"result success={str(rec['success']).lower()} steps={rec['steps']} "
            f"path={rec['path_length']:.2f}m found={','.join(names) or 'none'} ({rec['reason']})"
        )
        return "\n".join(lines)
    return f"[{kind}] {json.dumps(rec, sort_keys=True)}"


def cmd_replay(args) -> int:
    records = read_trace(args.trace)
    header = records[0] if records and records[0]["type"] == "header" else None
    if args.config:
        want = config_digest(load_run_config(args.config))
        have = header.get("config_digest") if header else None
        if want != have:
            print(f"error: trace digest {have} does not match config digest {want}", file=sys.stderr)
            return EXIT_TOOL
    last_map, found = None, {}
    for i, rec in enumerate(records):
        if rec["type"] == "decision":
            last_map = rec["map"]
        if rec["type"] == "stop" and rec.get("found") and rec.get("cell") is not None:
            found[rec["found"]] = tuple(rec["cell"])
        print(f"--- frame {i} ---")
        print(render_record(rec, last_map, found))
    return EXIT_OK


# --- inspect-map ---------------------------------------------------------------

_SHADES = " .:-=+*%#@"


def heatmap(raster: np.ndarray) -> str:
    peak = float(raster.max()) if raster.size else 0.0
    idx = np.zeros(raster.shape, dtype=int) if peak <= 0 else np.minimum((raster / peak * (len(_SHADES) - 1)).round().astype(int), len(_SHADES) - 1)
    return "\n".join("".join(_SHADES[i] for i in row) for row in idx)


def cmd_inspect_map(args) -> int:
    path = Path(args.path)
    if path.suffix == ".json" or (path.suffix in ("", ".txt") and path.with_suffix(".json").exists()):
        raster, meta = load_layer_dump(path)
        nz = raster[raster > 0]
        print(f"layer {meta.get('target')} step={meta.get('step')} shape={tuple(raster.shape)} tau={meta.get('tau')} kappa={meta.get('kappa')}")
        print(f"max={raster.max():.4f} mean(nonzero)={nz.mean() if nz.size else 0.0:.4f} observed={nz.size}")
        r, c = np.unravel_index(int(np.argmax(raster)), raster.shape)
        print(f"argmax cell=({r}, {c})")
        print(heatmap(raster))
        return EXIT_OK
    try:
        scene = load_scene(path)
    except SceneFormatError as exc:
        raise ConfigError("path", f"{path}: {exc}") from None
    free = int((~scene.occupancy).sum())
    print(f"scene {scene.shape[0]}x{scene.shape[1]} resolution={scene.resolution} free={free} objects={len(scene.objects)}")
    for o in scene.objects:
        print(f"  {o.id:<6} {o.category:<10} ({o.position[0]:.2f}, {o.position[1]:.2f}) cell={scene.cell_of(*o.position)}")
    grid = np.where(scene.occupancy, "#", ".").astype("<U1")
    for o in scene.objects:
        grid[scene.cell_of(*o.position)] = o.category[0].upper()
    print("\n".join("".join(row) for row in grid))
    return EXIT_OK


# --- default-config ------------------------------------------------------------


def cmd_default_config(args) -> int:
    text = dump_yaml(default_run_config(args.scene, args.targets.split(",")))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mosearch", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="write procedurally generated scene files")
    g.add_argument("--seed", type=int, action="append", help="generator seed (repeatable)")
    g.add_argument("--width", type=int, default=GeneratorSpec.width)
    g.add_argument("--height", type=int, default=GeneratorSpec.height)
    g.add_argument("--rooms", type=int, default=GeneratorSpec.rooms)
    g.add_argument("--targets", type=int, default=GeneratorSpec.targets)
    g.add_argument("--decoys", type=int, default=GeneratorSpec.decoys)
    g.add_argument("--nook-fraction", type=float, default=0.0)
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./scenes)")
    g.set_defaults(func=cmd_gen_scenes)

    r = sub.add_parser("run", help="run one episode from a config file")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./run_out)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--dump-maps", action="store_true", help="write obstacle and value maps at every planning decision")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", nargs="?", default="standard", help="'standard' or a suite YAML file")
    b.add_argument("--policies", help=f"comma-separated subset of {','.join(POLICIES)}")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--episodes-per-scene", type=int, help="standard suite only")
    b.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./bench_out)")
    b.set_defaults(func=cmd_bench)

    rp = sub.add_parser("replay", help="step through an episode trace")
    rp.add_argument("trace")
    rp.add_argument("--config", help="refuse to replay unless the trace was produced by this config")
    rp.set_defaults(func=cmd_replay)

    im = sub.add_parser("inspect-map", help="summarise a value-layer dump or a scene file")
    im.add_argument("path")
    im.set_defaults(func=cmd_inspect_map)

    d = sub.add_parser("default-config", help="print a run config with every parameter at its default")
    d.add_argument("--scene", default="scene.txt")
    d.add_argument("--targets", default="bed,tv")
    d.add_argument("--out")
    d.set_defaults(func=cmd_default_config)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # tool error: report, don't dump a traceback at users
        log.debug("tool error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TOOL


if __name__ == "__main__":
    sys.exit(main())
