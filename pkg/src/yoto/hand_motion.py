"""Per-frame hand observations to robot-oriented motion samples.

A hand frame holds the 21 MANO-layout joints of one hand in the camera frame.
Each frame becomes a ``MotionSample``: the stabilised hand centre, a gripper
orientation built from the wrist / index-tip / ring-tip triangle, and a binary
gripper state read from the contact flag.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateDataError,
    DegenerateHand,
    IndexOutOfRange,
    MismatchedStreams,
    ParseError,
)
from .geometry import RigidTransform, StereoCamera, lift_many, project_many

N_JOINTS = 21

# MANO / OpenPose ordering.
JOINTS = {
    "wrist": 0,
    "thumb_tip": 4,
    "index_tip": 8,
    "middle_tip": 12,
    "ring_tip": 16,
    "pinky_tip": 20,
}
FINGERTIPS = (4, 8, 12, 16, 20)

DEGENERATE_CROSS_NORM = 1e-6

# (frame_index, u, v) -> disparity in pixels
DisparitySource = Callable[[int, float, float], float]


@dataclass(eq=False)
class HandFrame:
    frame_index: int
    timestamp_s: float
    chirality: str
    joints: np.ndarray
    contact: bool

    def __post_init__(self):
        if self.chirality not in ("L", "R"):
            raise ValueError(f"chirality must be 'L' or 'R', got {self.chirality!r}")
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.shape != (N_JOINTS, 3):
            raise ValueError(f"expected {N_JOINTS}x3 joints, got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("non-finite joint coordinates")

    def to_json(self) -> dict:
        return {
            "frame": int(self.frame_index),
            "t": float(self.timestamp_s),
            "hand": self.chirality,
            "joints": self.joints.tolist(),
            "contact": bool(self.contact),
        }


@dataclass(eq=False)
class MotionSample:
    position: np.ndarray
    rotation: np.ndarray
    gripper: int
    chirality: str
    timestamp_s: float
    frame_index: int = 0

    def to_json(self) -> dict:
        return {
            "frame": int(self.frame_index),
            "hand": self.chirality,
            "t": float(self.timestamp_s),
            "position": np.asarray(self.position).tolist(),
            "rotation": np.asarray(self.rotation).reshape(-1).tolist(),
            "gripper": int(self.gripper),
        }


@dataclass(eq=False)
class MotionTrajectory:
    """Time-ordered ``(left, right)`` sample pairs, one per retained frame."""

    samples: list[tuple[MotionSample, MotionSample]]
    camera: StereoCamera | None = None
    frame: str = "camera"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def positions(self, hand: str) -> np.ndarray:
        i = 0 if hand == "L" else 1
        return np.array([pair[i].position for pair in self.samples])

    def grippers(self, hand: str) -> np.ndarray:
        i = 0 if hand == "L" else 1
        return np.array([pair[i].gripper for pair in self.samples], dtype=int)

    def timestamps(self) -> np.ndarray:
        return np.array([pair[0].timestamp_s for pair in self.samples])

    def frame_indices(self) -> list[int]:
        return [pair[0].frame_index for pair in self.samples]


def hand_center(frame: HandFrame, indices: Sequence[int] = FINGERTIPS) -> np.ndarray:
    idx = list(indices)
    if not idx:
        raise IndexOutOfRange("hand centre needs at least one joint index")
    for i in idx:
        if not 0 <= i < N_JOINTS:
            raise IndexOutOfRange(f"joint index {i} outside 0..{N_JOINTS - 1}")
    return frame.joints[idx].mean(axis=0)


def pose_from_joints(wrist, index_tip, ring_tip, frame_index=None) -> np.ndarray:
    l_iw = np.asarray(index_tip, dtype=np.float64) - wrist
    l_rw = np.asarray(ring_tip, dtype=np.float64) - wrist
    v_z = np.cross(l_iw, l_rw)
    nz = np.linalg.norm(v_z)
    if nz < DEGENERATE_CROSS_NORM:
        raise DegenerateHand(
            f"wrist, index and ring tips are collinear (|cross|={nz:.3g})", frame=frame_index
        )
    v_y = (l_iw + l_rw) / 2.0
    ny = np.linalg.norm(v_y)
    if ny < DEGENERATE_CROSS_NORM:
        raise DegenerateHand("index and ring directions cancel", frame=frame_index)
    z = v_z / nz
    y = v_y / ny
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=1)


def hand_pose(frame: HandFrame) -> np.ndarray:
    """Gripper orientation from the wrist / index-tip / ring-tip triangle.

    Columns are ``[x, y, z]``: ``z`` is the palm normal (index × ring
    directions), ``y`` the mean wrist-to-tip direction and ``x = y × z``.
    ``y`` is orthogonal to ``z`` by construction, so the result is a proper
    rotation without re-orthogonalisation.

    Raises:
        DegenerateHand: if the three joints are (nearly) collinear.
    """
    j = frame.joints
    return pose_from_joints(
        j[JOINTS["wrist"]], j[JOINTS["index_tip"]], j[JOINTS["ring_tip"]], frame.frame_index
    )


def gripper_state(frame: HandFrame) -> int:
    # contact -> closed (0), otherwise open (1)
    return 0 if frame.contact else 1


def stabilize_positions(
    cam: StereoCamera,
    centers: Sequence,
    disparity_source: DisparitySource,
    frame_indices: Sequence[int] | None = None,
) -> list[np.ndarray]:
    """Re-derive depth of each centre from the disparity at its projected pixel."""
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if frame_indices is None:
        frame_indices = range(len(pts))
    frame_indices = list(frame_indices)
    out = []
    for j, p in zip(frame_indices, pts):
        try:
            u, v, _ = project_many(cam, p[None])[0]
            d = float(disparity_source(j, u, v))
            out.append(lift_many(cam, [(u, v, d)])[0])
        except DegenerateDataError as exc:
            raise type(exc)(str(exc), frame=j) from None
    return out


class ExactDisparity:
    """Disparity source that reproduces each frame's true depth.

    ``depths`` maps frame index to camera-frame depth in metres; ``scale``
    multiplies the returned disparity (``0.5`` doubles every lifted depth).
    """

    def __init__(self, cam: StereoCamera, depths: dict[int, float], scale: float = 1.0):
        self.cam = cam
        self.depths = dict(depths)
        self.scale = scale

    def __call__(self, frame_index: int, u: float, v: float) -> float:
        z = self.depths[frame_index]
        return self.scale * self.cam.focal_px * self.cam.baseline_m / z


def _stream_by_index(frames: Iterable[HandFrame], hand: str) -> dict[int, HandFrame]:
    out: dict[int, HandFrame] = {}
    last_t = -np.inf
    for f in sorted(frames, key=lambda f: f.frame_index):
        if f.chirality != hand:
            raise MismatchedStreams(f"frame {f.frame_index} has chirality {f.chirality}, expected {hand}")
        if f.frame_index in out:
            raise MismatchedStreams(f"duplicate {hand} frame {f.frame_index}")
        if not f.timestamp_s > last_t:
            raise MismatchedStreams(f"{hand} timestamps not strictly increasing at frame {f.frame_index}")
        last_t = f.timestamp_s
        out[f.frame_index] = f
    return out


def extract_motion(
    frames_L: Sequence[HandFrame],
    frames_R: Sequence[HandFrame],
    cam: StereoCamera,
    disparity_source: DisparitySource | None = None,
    center_indices: Sequence[int] = FINGERTIPS,
) -> MotionTrajectory:
    """Build the motion trajectory of both hands, aligned by frame index.

    With ``disparity_source=None`` the depth of each raw centre is trusted
    (an :class:`ExactDisparity` over the raw centres).
    """
    left = _stream_by_index(frames_L, "L")
    right = _stream_by_index(frames_R, "R")
    if set(left) != set(right):
        only = sorted(set(left) ^ set(right))
        raise MismatchedStreams(f"left/right streams differ at frame indices {only[:5]}")
    order = sorted(left)
    per_hand = {}
    for hand, stream in (("L", left), ("R", right)):
        centers = np.array([hand_center(stream[j], center_indices) for j in order]).reshape(-1, 3)
        source = disparity_source
        if source is None:
            source = ExactDisparity(cam, {j: c[2] for j, c in zip(order, centers)})
        positions = stabilize_positions(cam, centers, source, order)
        samples = []
        for j, pos in zip(order, positions):
            f = stream[j]
            samples.append(
                MotionSample(pos, hand_pose(f), gripper_state(f), hand, f.timestamp_s, j)
            )
        per_hand[hand] = samples
    return MotionTrajectory(list(zip(per_hand["L"], per_hand["R"])), camera=cam)


def transform_trajectory(traj: MotionTrajectory, g: RigidTransform, frame: str = "robot") -> MotionTrajectory:
    """Express every sample in another frame (e.g. camera to robot base)."""
    pairs = []
    for a, b in traj.samples:
        pairs.append(
            tuple(
                MotionSample(g.apply(s.position), g.rotation @ s.rotation, s.gripper, s.chirality,
                             s.timestamp_s, s.frame_index)
                for s in (a, b)
            )
        )
    return MotionTrajectory(pairs, camera=traj.camera, frame=frame, meta=dict(traj.meta))


def read_hand_frames(path) -> tuple[list[HandFrame], list[HandFrame]]:
    """Parse a JSON Lines hand stream into left and right frame lists."""
    left, right = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                frame = HandFrame(
                    frame_index=int(rec["frame"]),
                    timestamp_s=float(rec["t"]),
                    chirality=rec["hand"],
                    joints=np.asarray(rec["joints"], dtype=np.float64),
                    contact=bool(rec["contact"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from None
            (left if frame.chirality == "L" else right).append(frame)
    return left, right


def write_hand_frames(path, frames: Iterable[HandFrame]) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_json(), separators=(",", ":")) + "\n")


def write_trajectory(path, traj: MotionTrajectory) -> None:
    with open(path, "w") as fh:
        for pair in traj.samples:
            for s in pair:
                fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def read_trajectory(path) -> MotionTrajectory:
    by_frame: dict[int, dict[str, MotionSample]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                s = MotionSample(
                    position=np.asarray(rec["position"], dtype=np.float64).reshape(3),
                    rotation=np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3),
                    gripper=int(rec["gripper"]),
                    chirality=rec["hand"],
                    timestamp_s=float(rec["t"]),
                    frame_index=int(rec.get("frame", lineno)),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), line=lineno) from None
            by_frame.setdefault(s.frame_index, {})[s.chirality] = s
    pairs = []
    for j in sorted(by_frame):
        entry = by_frame[j]
        if set(entry) != {"L", "R"}:
            raise MismatchedStreams(f"frame {j} lacks one hand")
        pairs.append((entry["L"], entry["R"]))
    return MotionTrajectory(pairs)

