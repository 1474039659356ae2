"""Synthetic human teaching: hand-frame streams that replay an expert program.

The streams stand in for the output of a hand-mesh regressor. Each keyframe is
a smoothstep reach followed by a short rest; gripper changes land on the first
rest frame so stop and contact events coincide.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from ..geometry import RigidTransform, StereoCamera, blend_rotation
from ..hand_motion import (FINGERTIPS, N_JOINTS, HandFrame, extract_motion, read_hand_frames,
                           transform_trajectory, write_hand_frames)
from ..keyframes import KeyframeProgram, build_program, extract_keyframes

FPS = 30.0
SEG_FRAMES = 12
DWELL = 6
GRIP_GAP = 3
REST = 4

# Overhead camera looking straight down at the table centre.
TEACHING_CAMERA = StereoCamera()
CAMERA_TO_ROBOT = RigidTransform(
    np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]),
    [0.45, 0.0, 1.0],
)

# Fingertips in the hand frame (metres); y points from wrist to fingers.
_TIPS_LOCAL = np.array([
    [0.05, 0.05, 0.0],   # thumb
    [0.03, 0.09, 0.0],   # index
    [0.0, 0.10, 0.0],    # middle
    [-0.03, 0.09, 0.0],  # ring
    [-0.05, 0.07, 0.0],  # pinky
])


def hand_joints(center, rotation) -> np.ndarray:
    """21 joints whose fingertip mean is ``center`` and whose palm frame is ``rotation``."""
    R = np.asarray(rotation, dtype=float)
    wrist = np.asarray(center, dtype=float) - R @ _TIPS_LOCAL.mean(axis=0)
    joints = np.zeros((N_JOINTS, 3))
    joints[0] = wrist
    for f, tip in enumerate(FINGERTIPS):
        tip_w = wrist + R @ _TIPS_LOCAL[f]
        for i, frac in enumerate((0.4, 0.6, 0.8)):
            joints[tip - 3 + i] = wrist + frac * (tip_w - wrist)
        joints[tip] = tip_w
    return joints


def _smoothstep(u):
    return 3 * u**2 - 2 * u**3


def hand_streams(program: KeyframeProgram, cam_to_robot: RigidTransform = CAMERA_TO_ROBOT,
                 fps: float = FPS) -> tuple[list[HandFrame], list[HandFrame]]:
    """Camera-frame hand streams whose extracted keyframes reproduce ``program``."""
    to_cam = cam_to_robot.inverse()
    pose = {a: (program.initial[i].position.copy(), program.initial[i].rotation.copy(), program.initial[i].gripper)
            for i, a in enumerate(("L", "R"))}
    rows: list[dict] = []

    def emit(n):
        for _ in range(n):
            rows.append({a: (p.copy(), R.copy(), g) for a, (p, R, g) in pose.items()})

    emit(REST)
    for (cl, cr), aL, aR in zip(program.mask.entries, program.actions_L, program.actions_R):
        target = {"L": aL, "R": aR}
        movers = [a for a, c in (("L", cl), ("R", cr)) if c]
        travel = any(np.linalg.norm(target[a].position - pose[a][0]) > 1e-9
                     or np.abs(target[a].rotation - pose[a][1]).max() > 1e-9 for a in movers)
        if travel:
            start = {a: pose[a] for a in movers}
            for i in range(1, SEG_FRAMES + 1):
                s = _smoothstep(i / SEG_FRAMES)
                for a in movers:
                    p0, R0, g0 = start[a]
                    p = p0 + s * (target[a].position - p0)
                    R = target[a].rotation if i == SEG_FRAMES else blend_rotation(R0, target[a].rotation, s)
                    pose[a] = (p, R, g0)
                emit(1)
        else:
            emit(GRIP_GAP - 1)
        for a in movers:
            pose[a] = (target[a].position.copy(), target[a].rotation.copy(), target[a].gripper)
        emit(1)  # keyframe frame: first rest frame, new gripper state
        rows_before_dwell = len(rows)
        emit(DWELL - 1)
    # the trajectory ends on the last keyframe
    del rows[rows_before_dwell:]
    frames_L, frames_R = [], []
    for j, row in enumerate(rows):
        for a, out in (("L", frames_L), ("R", frames_R)):
            p, R, g = row[a]
            joints = hand_joints(to_cam.apply(p), to_cam.rotation @ R)
            out.append(HandFrame(j, j / fps, a, joints, contact=(g == 0)))
    return frames_L, frames_R


def fixture_dir() -> Path:
    return Path(str(resources.files("yoto") / "data" / "fixtures"))


def fixture_path(task: str) -> Path:
    return fixture_dir() / f"{task}.jsonl"


def write_fixture(task: str, directory=None, seed: int = 0) -> Path:
    """Write the teaching stream of ``task`` (nominal placement) as JSON Lines."""
    from .tasks import make_task

    _, demo = make_task(task, seed, nominal=True)
    L, R = hand_streams(demo.program)
    path = Path(directory or fixture_dir()) / f"{task}.jsonl"
    frames = [f for pair in zip(L, R) for f in pair]
    write_hand_frames(path, frames)
    return path


def load_fixture(task: str):
    return read_hand_frames(fixture_path(task))


def program_from_frames(frames_L, frames_R, task: str = "", cfg=None,
                        cam: StereoCamera = TEACHING_CAMERA,
                        cam_to_robot: RigidTransform = CAMERA_TO_ROBOT) -> KeyframeProgram:
    """Hand streams to a keyframe program in the robot frame."""
    traj = transform_trajectory(extract_motion(frames_L, frames_R, cam), cam_to_robot)
    return build_program(traj, extract_keyframes(traj, cfg), cfg, task)


def teaching_demo(task: str, program: KeyframeProgram | None = None, seed: int = 0):
    """The one-shot teaching as a seed demonstration.

    The program defaults to the one extracted from the shipped fixture. It is
    paired with the nominal scene and its keyposes are associated to objects.
    """
    from ..proliferation import associate
    from .tasks import demonstration, get_task, make_task

    spec = get_task(task)
    scene, _ = make_task(spec, seed, nominal=True)
    if program is None:
        program = program_from_frames(*load_fixture(task), task=task)
    demo = demonstration(spec, scene, program, f"{task}-teach{seed}",
                         {"kind": "seed", "scene_seed": int(seed), "nominal": True, "n_points": 1024,
                          "source": "teaching"})
    return associate(demo)
