"""Multi-object search in simulated grid worlds: per-target value maps with
decay, candidate clustering, POUCT goal selection and a benchmark harness."""

__version__ = "0.1.0"

from .harness import (
    POLICIES,
    AgentConfig,
    BenchmarkSuite,
    EpisodeConfig,
    EpisodeResult,
    mspl,
    run_benchmark,
    run_episode,
    standard_suite,
    success_rate,
)
from .world import GridScene, RobotPose, load_scene, save_scene

__all__ = [
    "POLICIES",
    "AgentConfig",
    "BenchmarkSuite",
    "EpisodeConfig",
    "EpisodeResult",
    "GridScene",
    "RobotPose",
    "load_scene",
    "mspl",
    "run_benchmark",
    "run_episode",
    "save_scene",
    "standard_suite",
    "success_rate",
]
