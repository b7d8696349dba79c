"""Run configuration files: YAML, every parameter optional, unknown keys rejected."""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

import yaml

from .harness import POLICIES, AgentConfig, EpisodeConfig, _plain, standard_agent
from .scenegen import GeneratorSpec, generate_scene
from .world import GridScene, RobotPose, SceneFormatError, load_scene


class ConfigError(ValueError):
    """Bad configuration; ``field`` is the dotted key at fault."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


def _build(cls_default, data: Any, where: str):
    """Overlay a mapping onto a dataclass instance, recursing into nested dataclasses."""
    if not isinstance(data, dict):
        raise ConfigError(where, f"expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls_default) if not f.name.startswith("_")}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    changes = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        current = getattr(cls_default, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _build(current, value, path)
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(path, "expected true/false")
            changes[key] = value
        elif isinstance(current, float) and isinstance(value, int):
            changes[key] = float(value)
        else:
            changes[key] = value
    try:
        return dataclasses.replace(cls_default, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where or "config", str(exc)) from None


def agent_from_dict(data: dict | None) -> AgentConfig:
    return _build(standard_agent(), data or {}, "agent")


def scene_from_entry(entry: Any, base: Path, where: str = "scene") -> GridScene:
    """A scene is either a path to a scene file or ``{generate: {...}}``."""
    if isinstance(entry, str):
        path = Path(entry)
        if not path.is_absolute():
            path = base / path
        try:
            return load_scene(path)
        except FileNotFoundError:
            raise ConfigError(where, f"scene file not found: {path}") from None
        except SceneFormatError as exc:
            raise ConfigError(where, f"{path}: {exc}") from None
    if isinstance(entry, dict) and set(entry) == {"generate"}:
        spec = _build(GeneratorSpec(), entry["generate"] or {}, f"{where}.generate")
        try:
            return generate_scene(spec)
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
    raise ConfigError(where, "expected a scene file path or a {generate: {...}} mapping")


_RUN_KEYS = {"scene", "targets", "policy", "seed", "start", "max_steps", "success_radius", "agent", "episode_id"}


def episode_from_dict(data: dict, base: Path = Path(".")) -> EpisodeConfig:
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    unknown = sorted(set(data) - _RUN_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in ("scene", "targets"):
        if key not in data:
            raise ConfigError(key, "missing")
    policy = data.get("policy", "openguide")
    if policy not in POLICIES:
        raise ConfigError("policy", f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}")
    targets = data["targets"]
    if isinstance(targets, str):
        targets = [targets]
    if not isinstance(targets, list) or not targets:
        raise ConfigError("targets", "expected a non-empty list of categories")
    scene = scene_from_entry(data["scene"], base)
    start = data.get("start")
    if start is not None:
        if not (isinstance(start, list) and len(start) in (2, 3)):
            raise ConfigError("start", "expected [x, y] or [x, y, phi]")
        start = RobotPose(*map(float, start))
    try:
        return EpisodeConfig(
            scene=scene,
            targets=tuple(str(t) for t in targets),
            policy=policy,
            seed=int(data.get("seed", 0)),
            start=start,
            max_steps=int(data.get("max_steps", 500)),
            success_radius=float(data.get("success_radius", 1.0)),
            agent=agent_from_dict(data.get("agent")),
            episode_id=str(data.get("episode_id", "")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        field = "targets" if "target" in str(exc) else "config"
        raise ConfigError(field, str(exc)) from None


def load_yaml(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"{path}: invalid YAML: {exc}") from None


def load_run_config(path: str | Path) -> EpisodeConfig:
    path = Path(path)
    return episode_from_dict(load_yaml(path) or {}, path.parent)


def default_run_config(scene: str = "scene.txt", targets=("bed", "tv")) -> dict:
    """Every tunable parameter with its default value, ready to dump as YAML."""
    agent = _plain(standard_agent())
    return {
        "scene": scene,
        "targets": list(targets),
        "policy": "openguide",
        "seed": 0,
        "start": None,
        "max_steps": 500,
        "success_radius": 1.0,
        "agent": agent,
    }


def dump_yaml(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)

