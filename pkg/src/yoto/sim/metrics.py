"""Substep scoring and policy benchmarking."""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from ..bidp.observation import Observation, observation_from
from ..proliferation import initial_proprioception
from ..keyframes import KeyframeAction
from .tasks import TaskSpec, get_task, make_task, substep_names
from .world import HOME, ExecutionTrace, ReplayConfig, Scene, replay

log = logging.getLogger(__name__)

Policy = Callable[[Observation, Scene], object]


def prefix_length(flags: Sequence[bool]) -> int:
    n = 0
    for f in flags:
        if not f:
            break
        n += 1
    return n


def score_substeps(flags: Sequence[bool]) -> tuple[list[bool], int]:
    """Sequenced scoring: substep ``i`` counts only if every earlier one passed."""
    n = prefix_length(flags)
    return [i < n for i in range(len(flags))], n


def evaluate(trace: ExecutionTrace, spec: TaskSpec, scene: Scene | None = None) -> tuple[list[bool], int]:
    """Substep outcomes of a replayed trace and the completed-prefix length.

    A substep fails if its check fails at its keyframe or if any reach or
    collision violation happened up to that keyframe.
    """
    scene = scene or trace.scene
    raw = []
    for sub in spec.substeps:
        ok = (
            len(trace.records) >= sub.check_k
            and not trace.violations_through(sub.check_k)
            and bool(sub.check(trace.snapshot_at(sub.check_k), scene))
        )
        raw.append(ok)
    flags, n = score_substeps(raw)
    trace.substeps, trace.length = flags, n
    return flags, n


def home_proprio() -> np.ndarray:
    g = HOME["L"]
    return initial_proprioception(KeyframeAction(0, 0.0, "L", g.translation, g.rotation, 1))


def observe(scene: Scene, n_points: int | None = None) -> Observation:
    """What the policy sees: every object cloud plus the left arm's start state."""
    clouds = scene.clouds()
    if n_points is None:
        pts = np.concatenate([clouds[k].points for k in sorted(clouds)], axis=0)
        return Observation(pts, home_proprio())
    return observation_from(clouds, home_proprio(), n_points)


def expert_policy(spec: TaskSpec) -> Policy:
    return lambda obs, scene: spec.expert(scene)


def trial_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(i)]).generate_state(1, dtype=np.uint32)[0])


def benchmark(policy: Policy, spec: TaskSpec | str, trials: int, seed: int,
              cfg: ReplayConfig | None = None, n_points: int = 1024) -> dict:
    """Run ``trials`` seeded scenes through ``policy`` and aggregate substep scores.

    Policy exceptions count as failed trials (length 0) with the cause kept in
    ``failures``.
    """
    spec = get_task(spec) if isinstance(spec, str) else spec
    if trials < 1:
        raise ValueError("trials must be at least 1")
    counts = np.zeros(spec.n_substeps, dtype=int)
    lengths, failures = [], []
    for i in range(trials):
        scene, _ = make_task(spec, trial_seed(seed, i), n_points)
        try:
            out = policy(observe(scene), scene)
            trace = replay(scene, out, cfg=cfg)
            flags, n = evaluate(trace, spec, scene)
        except Exception as exc:  # a broken prediction is a failed trial, not a crash
            log.warning("trial %d failed: %s", i, exc)
            failures.append({"trial": i, "cause": f"{type(exc).__name__}: {exc}"})
            flags, n = [False] * spec.n_substeps, 0
        counts += np.array(flags, dtype=int)
        lengths.append(n)
    return {
        "task": spec.name,
        "trials": trials,
        "seed": seed,
        "success_rate": float(counts[-1] / trials) if spec.n_substeps else 0.0,
        "avg_length": float(np.mean(lengths)),
        "per_substep": counts.tolist(),
        "substeps": substep_names(spec),
        "lengths": lengths,
        "failures": failures,
    }


SUMMARY_KEYS = ("task", "trials", "success_rate", "avg_length", "per_substep")


def validate_summary(d: dict) -> None:
    missing = [k for k in SUMMARY_KEYS if k not in d]
    if missing:
        raise ValueError(f"summary lacks {missing}")
    if not 0.0 <= d["success_rate"] <= 1.0:
        raise ValueError("success_rate outside [0, 1]")
    if len(d["per_substep"]) and max(d["per_substep"]) > d["trials"]:
        raise ValueError("per-substep count exceeds trials")
