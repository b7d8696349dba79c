"""Per-target semantic value layers: cone-weighted fusion, decay by update
count, and aggregation into one shared map."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .world import RobotPose, SensorSpec, Visibility, wrap_angle

SUM_NORM = "sum_norm"
PRODUCT = "product"


@dataclass
class ValueLayer:
    target: str
    value: np.ndarray
    confidence: np.ndarray
    update_count: np.ndarray
    frozen: bool = False

    @classmethod
    def empty(cls, target: str, shape: tuple[int, int]) -> "ValueLayer":
        return cls(
            target,
            np.zeros(shape, dtype=float),
            np.zeros(shape, dtype=float),
            np.zeros(shape, dtype=np.int64),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def copy(self) -> "ValueLayer":
        return ValueLayer(
            self.target, self.value.copy(), self.confidence.copy(), self.update_count.copy(), self.frozen
        )


@dataclass(frozen=True)
class DecayParams:
    tau: float = 15.0
    kappa: float = 3.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")


@dataclass
class AggregateValueMap:
    value: np.ndarray
    contributing_targets: list[str] = field(default_factory=list)


def cone_confidence(theta: float | np.ndarray, fov: float):
    """cos^2 mask over the angle off the optical axis; zero outside the FOV."""
    theta = np.abs(theta)
    c = np.cos(theta / (fov / 2.0) * (math.pi / 2.0)) ** 2
    c = np.where(theta <= fov / 2.0, c, 0.0)
    return float(c) if np.ndim(c) == 0 else c


def cell_confidence(pose: RobotPose, sensor: SensorSpec, cell: tuple[int, int], resolution: float) -> float:
    """Cone confidence of one cell seen from ``pose``."""
    row, col = cell
    cx, cy = (col + 0.5) * resolution, (row + 0.5) * resolution
    if math.hypot(cx - pose.x, cy - pose.y) < 1e-12:
        return 1.0
    theta = wrap_angle(math.atan2(cy - pose.y, cx - pose.x) - pose.phi)
    return cone_confidence(theta, sensor.fov)


def _cone_for(pose: RobotPose, sensor: SensorSpec, rows, cols, resolution: float) -> np.ndarray:
    dx = (cols + 0.5) * resolution - pose.x
    dy = (rows + 0.5) * resolution - pose.y
    theta = np.arctan2(dy, dx) - pose.phi
    theta = (theta + np.pi) % (2 * np.pi) - np.pi
    theta = np.where(np.hypot(dx, dy) < 1e-12, 0.0, theta)
    return np.asarray(cone_confidence(theta, sensor.fov), dtype=float)


def fuse_cell(v_curr, c_curr, v_prev, c_prev):
    """Confidence-weighted value average and self-weighted confidence update.

    Works on scalars or arrays; cells where both confidences are zero keep
    their previous value and confidence.
    """
    v_curr, c_curr, v_prev, c_prev = (np.asarray(a, dtype=float) for a in (v_curr, c_curr, v_prev, c_prev))
    total = c_curr + c_prev
    ok = total > 0
    safe = np.where(ok, total, 1.0)
    # normalised weights avoid underflow when both confidences are tiny
    w = np.where(ok, c_curr / safe, 0.0)
    v_new = np.where(ok, w * v_curr + (1.0 - w) * v_prev, v_prev)
    c_new = np.where(ok, w * c_curr + (1.0 - w) * c_prev, c_prev)
    if v_new.ndim == 0:
        return float(v_new), float(c_new)
    return v_new, c_new


def ingest_observation(
    layer: ValueLayer,
    pose: RobotPose,
    sensor: SensorSpec,
    score: float,
    visible: Visibility,
    resolution: float,
) -> ValueLayer:
    """Fuse one scalar similarity score over the visible cone. Returns a new layer."""
    if not 0.0 <= score <= 1.0:
        raise ValueError("score must be in [0, 1]")
    out = layer.copy()
    if len(visible) == 0 or layer.frozen:
        return out
    rows, cols = visible.rows, visible.cols
    conf = _cone_for(pose, sensor, rows, cols, resolution)
    v_new, c_new = fuse_cell(score, conf, out.value[rows, cols], out.confidence[rows, cols])
    out.value[rows, cols] = np.clip(v_new, 0.0, 1.0)
    out.confidence[rows, cols] = np.clip(c_new, 0.0, 1.0)
    out.update_count[rows, cols] += 1
    return out


def decay_factor(u, params: DecayParams):
    """Logistic attenuation 1 / (1 + exp((u - tau) / kappa))."""
    z = (np.asarray(u, dtype=float) - params.tau) / params.kappa
    f = 0.5 * (1.0 - np.tanh(0.5 * z))  # overflow-free logistic
    return float(f) if f.ndim == 0 else f


def decay_layer(layer: ValueLayer, params: DecayParams) -> np.ndarray:
    return layer.value * decay_factor(layer.update_count, params)


def aggregate_layers(
    layers: Sequence[ValueLayer],
    mode: str = SUM_NORM,
    decay: DecayParams | None = None,
) -> AggregateValueMap:
    """Combine target layers into one map, optionally decaying each layer first.

    Callers drop the layers of targets already found.
    """
    if not layers:
        raise ValueError("need at least one layer")
    shape = layers[0].shape
    for lay in layers:
        if lay.shape != shape:
            raise ValueError(f"layer {lay.target!r} has shape {lay.shape}, expected {shape}")
    rasters = [decay_layer(l, decay) if decay is not None else l.value for l in layers]
    if mode == SUM_NORM:
        total = np.sum(rasters, axis=0)
        peak = total.max()
        agg = total / peak if peak > 0 else np.zeros(shape)
    elif mode == PRODUCT:
        agg = np.prod(rasters, axis=0)
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return AggregateValueMap(np.clip(agg, 0.0, 1.0), [l.target for l in layers])


def format_raster(raster: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.4f}" for v in row) for row in raster) + "\n"


def parse_raster(text: str) -> np.ndarray:
    return np.array([[float(v) for v in line.split()] for line in text.splitlines() if line.strip()])


def dump_layer(layer: ValueLayer, path: str | Path, params: DecayParams | None = None, step: int = 0) -> None:
    """Write ``<path>.txt`` (value raster) and ``<path>.json`` (sidecar)."""
    path = Path(path)
    path.with_suffix(".txt").write_text(format_raster(layer.value))
    meta = {
        "target": layer.target,
        "tau": params.tau if params else None,
        "kappa": params.kappa if params else None,
        "step": step,
        "shape": list(layer.shape),
        "max_update_count": int(layer.update_count.max()),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_layer_dump(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    return parse_raster(path.with_suffix(".txt").read_text()), json.loads(path.with_suffix(".json").read_text())
