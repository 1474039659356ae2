"""Deterministic two-arm kinematic simulator and task suite."""
from .metrics import benchmark, evaluate, expert_policy, observe, prefix_length, score_substeps
from .tasks import TASK_NAMES, TASKS, TaskSpec, get_task, make_task, scene_for_demo
from .world import ExecutionTrace, ReplayConfig, Scene, replay

__all__ = [
    "TASKS", "TASK_NAMES", "TaskSpec", "get_task", "make_task", "scene_for_demo",
    "Scene", "ExecutionTrace", "ReplayConfig", "replay",
    "evaluate", "benchmark", "expert_policy", "observe", "prefix_length", "score_substeps",
]
