"""Random valid keyframe programs with explicit carry-forward holds."""
import numpy as np

from yoto.keyframes import STRICTLY_ASYNC, KeyframeAction, KeyframeProgram, MotionMask
from yoto.hand_motion import MotionSample, MotionTrajectory

from .conftest import random_rotations


def _action(rng, k, arm):
    R = random_rotations(rng, 1)[0]
    return KeyframeAction(k, 0.1 * k, arm, rng.normal(size=3), R, int(rng.integers(2)))


def random_program(rng, K=None, sync=None) -> KeyframeProgram:
    K = int(rng.integers(1, 20)) if K is None else K
    sync = bool(rng.integers(2)) if sync is None else sync
    init = (_action(rng, 0, "L"), _action(rng, 0, "R"))
    if sync:
        L = [_action(rng, k, "L") for k in range(1, K + 1)]
        R = [_action(rng, k, "R") for k in range(1, K + 1)]
        return KeyframeProgram(L, R, MotionMask.sync(K), "random", init)
    movers = rng.integers(2, size=K)
    last = {"L": init[0], "R": init[1]}
    L, R = [], []
    for k, m in enumerate(movers, start=1):
        mover, holder = ("L", "R") if m == 0 else ("R", "L")
        a = _action(rng, k, mover)
        hold = last[holder].replace(k=k, timestamp_s=a.timestamp_s)
        last[mover], last[holder] = a, hold
        L.append(a if mover == "L" else hold)
        R.append(a if mover == "R" else hold)
    mask = MotionMask([(1, 0) if m == 0 else (0, 1) for m in movers], STRICTLY_ASYNC)
    return KeyframeProgram(L, R, mask, "random", init)


def trajectory(pos_L, pos_R, grip_L=None, grip_R=None, fps=30.0) -> MotionTrajectory:
    pos_L, pos_R = np.asarray(pos_L, float), np.asarray(pos_R, float)
    J = len(pos_L)
    grip_L = np.ones(J, int) if grip_L is None else grip_L
    grip_R = np.ones(J, int) if grip_R is None else grip_R
    pairs = []
    for j in range(J):
        pairs.append((
            MotionSample(pos_L[j], np.eye(3), int(grip_L[j]), "L", j / fps, j),
            MotionSample(pos_R[j], np.eye(3), int(grip_R[j]), "R", j / fps, j),
        ))
    return MotionTrajectory(pairs, frame="robot")
