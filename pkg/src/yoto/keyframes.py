"""Keyframe programs: simplification, motion masks and per-arm reorganisation.

A ``KeyframeProgram`` stores one ``(left, right)`` action pair per keyframe and
a ``MotionMask`` saying which arm moves (1) or holds (0) at each keyframe.
Strictly asynchronous programs move exactly one arm per keyframe; synchronous
programs drive both arms at every keyframe. Mixed programs are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    LengthMismatch,
    MixedCoordination,
    NotAsynchronous,
    ParseError,
    TooShort,
)
from .hand_motion import MotionTrajectory

SCHEMA_VERSION = 1
STRICTLY_ASYNC = "strictly_async"
SYNC = "sync"
ARMS = ("L", "R")

# Slack when comparing a speed against its window minimum.
_SPEED_TIE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class KeyframeAction:
    k: int
    timestamp_s: float
    chirality: str
    position: np.ndarray
    rotation: np.ndarray
    gripper: int
    object_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "gripper", int(self.gripper))

    def replace(self, **changes) -> "KeyframeAction":
        return dataclasses.replace(self, **changes)

    def same_as(self, other: "KeyframeAction", atol: float = 0.0) -> bool:
        """Field-wise equality; ``atol=0`` demands bitwise-equal arrays."""
        if atol == 0.0:
            geo = np.array_equal(self.position, other.position) and np.array_equal(
                self.rotation, other.rotation
            )
        else:
            geo = np.allclose(self.position, other.position, atol=atol, rtol=0) and np.allclose(
                self.rotation, other.rotation, atol=atol, rtol=0
            )
        return bool(
            geo
            and self.k == other.k
            and self.chirality == other.chirality
            and self.gripper == other.gripper
            and self.object_id == other.object_id
            and self.timestamp_s == other.timestamp_s
        )

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "t": self.timestamp_s,
            "hand": self.chirality,
            "position": self.position.tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),
            "gripper": self.gripper,
            "object_id": self.object_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "KeyframeAction":
        return cls(
            k=int(d["k"]),
            timestamp_s=float(d["t"]),
            chirality=d["hand"],
            position=d["position"],
            rotation=d["rotation"],
            gripper=int(d["gripper"]),
            object_id=None if d.get("object_id") is None else int(d["object_id"]),
        )


@dataclass(eq=False)
class MotionMask:
    entries: np.ndarray
    mode: str

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 2)
        if self.mode not in (STRICTLY_ASYNC, SYNC):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        e = self.entries
        if not np.all((e == 0) | (e == 1)):
            raise ValueError("mask entries must be binary")
        if self.mode == STRICTLY_ASYNC and np.any(e[:, 0] == e[:, 1]):
            raise MixedCoordination("strictly asynchronous mask has a keyframe with c_L == c_R")
        if self.mode == SYNC and np.any(e != 1):
            raise MixedCoordination("synchronous mask must be all (1, 1)")

    def __len__(self):
        return self.entries.shape[0]

    def movers(self) -> list[str]:
        """Moving arm per keyframe (``"LR"`` for synchronous keyframes)."""
        out = []
        for cl, cr in self.entries:
            out.append("LR" if cl and cr else ("L" if cl else "R"))
        return out

    def equals(self, other: "MotionMask") -> bool:
        return self.mode == other.mode and np.array_equal(self.entries, other.entries)

    @classmethod
    def sync(cls, K: int) -> "MotionMask":
        return cls(np.ones((K, 2), dtype=np.int64), SYNC)

    @classmethod
    def from_movers(cls, movers: Sequence[str]) -> "MotionMask":
        if all(m == "LR" for m in movers):
            return cls.sync(len(movers))
        return cls([(1, 0) if m == "L" else (0, 1) for m in movers], STRICTLY_ASYNC)


@dataclass(eq=False)
class KeyframeProgram:
    actions_L: list[KeyframeAction]
    actions_R: list[KeyframeAction]
    mask: MotionMask
    task: str = ""
    initial: tuple[KeyframeAction, KeyframeAction] | None = None

    def __post_init__(self):
        if not (len(self.actions_L) == len(self.actions_R) == len(self.mask)):
            raise LengthMismatch(
                f"program lengths differ: L={len(self.actions_L)} R={len(self.actions_R)} mask={len(self.mask)}"
            )

    @property
    def K(self) -> int:
        return len(self.mask)

    @property
    def sync(self) -> bool:
        return self.mask.mode == SYNC

    def pairs(self):
        return zip(self.actions_L, self.actions_R)

    def all_actions(self) -> list[KeyframeAction]:
        return list(self.actions_L) + list(self.actions_R)

    def same_as(self, other: "KeyframeProgram", atol: float = 0.0) -> bool:
        if self.K != other.K or not self.mask.equals(other.mask) or self.task != other.task:
            return False
        ok = all(a.same_as(b, atol) for a, b in zip(self.all_actions(), other.all_actions()))
        if (self.initial is None) != (other.initial is None):
            return False
        if self.initial is not None:
            ok = ok and all(a.same_as(b, atol) for a, b in zip(self.initial, other.initial))
        return ok

    def map_actions(self, fn) -> "KeyframeProgram":
        """New program with ``fn`` applied to every keyframe action (not the initial state)."""
        return KeyframeProgram(
            [fn(a) for a in self.actions_L],
            [fn(a) for a in self.actions_R],
            MotionMask(self.mask.entries.copy(), self.mask.mode),
            self.task,
            self.initial,
        )

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "sync": self.sync,
            "mask": self.mask.entries.tolist(),
            "initial": None if self.initial is None else {a.chirality: a.to_json() for a in self.initial},
            "keyframes": [
                {"k": i + 1, "L": a.to_json(), "R": b.to_json()} for i, (a, b) in enumerate(self.pairs())
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "KeyframeProgram":
        try:
            if int(d.get("schema_version", 0)) != SCHEMA_VERSION:
                raise ParseError(f"unsupported program schema_version {d.get('schema_version')}")
            mode = SYNC if d["sync"] else STRICTLY_ASYNC
            mask = MotionMask(np.asarray(d["mask"], dtype=np.int64).reshape(-1, 2), mode)
            L = [KeyframeAction.from_json(kf["L"]) for kf in d["keyframes"]]
            R = [KeyframeAction.from_json(kf["R"]) for kf in d["keyframes"]]
            initial = None
            if d.get("initial"):
                initial = (
                    KeyframeAction.from_json(d["initial"]["L"]),
                    KeyframeAction.from_json(d["initial"]["R"]),
                )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed keyframe program: {exc}") from None
        return cls(L, R, mask, d.get("task", ""), initial)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "KeyframeProgram":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from None
        return cls.from_json(d)


@dataclass(eq=False)
class ReorganizedActions:
    """Time-ordered single-arm actions; each entry's ``chirality`` is its arm tag."""

    entries: list[KeyframeAction]
    mode: str
    initial: tuple[KeyframeAction, KeyframeAction] | None = None

    def __len__(self):
        return len(self.entries)

    def arm_tags(self) -> list[str]:
        return [a.chirality for a in self.entries]


@dataclass
class KeyframeConfig:
    speed_eps: float = 0.01
    window: int = 5
    max_gap: int | None = None
    move_eps: float = 0.005


# --------------------------------------------------------------------------- extraction


def _stop_events(pos: np.ndarray, t: np.ndarray, speed_eps: float, window: int) -> list[int]:
    """Frames where a hand comes to rest after moving.

    A frame qualifies when its central-difference speed is below ``speed_eps``,
    is the minimum of the ``±window`` neighbourhood, and the hand moved faster
    than ``speed_eps`` somewhere in the preceding ``window`` frames. Each run of
    consecutive qualifying frames yields its first frame.
    """
    J = len(pos)
    if J < 3:
        return []
    speed = np.linalg.norm(np.gradient(pos, t, axis=0), axis=1)
    out = []
    prev = False
    for j in range(J):
        lo, hi = max(0, j - window), min(J, j + window + 1)
        q = (
            speed[j] < speed_eps
            and speed[j] <= speed[lo:hi].min() + _SPEED_TIE_TOL
            and j > 0
            and speed[max(0, j - window) : j].max() >= speed_eps
        )
        if q and not prev:
            out.append(j)
        prev = q
    return out


def split_gaps(indices: Sequence[int], max_gap: int | None) -> list[int]:
    """Insert evenly spaced indices so no gap exceeds ``max_gap``."""
    idx = sorted(set(int(i) for i in indices))
    if max_gap is None or max_gap <= 0 or len(idx) < 2:
        return idx
    out = [idx[0]]
    for a, b in zip(idx[:-1], idx[1:]):
        gap = b - a
        m = math.ceil(gap / max_gap)
        out.extend(a + (i * gap) // m for i in range(1, m))
        out.append(b)
    return out


def extract_keyframes(traj: MotionTrajectory, cfg: KeyframeConfig | None = None) -> list[int]:
    """Keyframe positions (indices into ``traj.samples``).

    Always contains the first and last frame and every gripper change of either
    hand; adds frames where a hand comes to rest (see :func:`_stop_events`),
    then subdivides gaps longer than ``cfg.max_gap``. A rest frame coinciding
    with a gripper change collapses into a single keyframe.
    """
    cfg = cfg or KeyframeConfig()
    J = len(traj)
    if J < 2:
        raise TooShort(f"trajectory has {J} frame(s); need at least 2")
    t = traj.timestamps()
    events = {0, J - 1}
    for hand in ARMS:
        g = traj.grippers(hand)
        events.update(int(j) for j in np.flatnonzero(np.diff(g) != 0) + 1)
        events.update(_stop_events(traj.positions(hand), t, cfg.speed_eps, cfg.window))
    return split_gaps(sorted(events), cfg.max_gap)


# --------------------------------------------------------------------------- masks


def derive_motion_mask(displacements, gripper_changes=None, move_eps: float = 0.005) -> MotionMask:
    """Moving/holding flags from per-keyframe ``(K, 2)`` L/R displacements (metres).

    An arm moves at ``k`` when it displaced more than ``move_eps`` since the
    previous keyframe or its gripper bit changed. All-equal flags make a
    synchronous mask (both arms are driven); all-different flags make a
    strictly asynchronous one.

    Raises:
        MixedCoordination: when neither regime fits.
    """
    disp = np.asarray(displacements, dtype=np.float64).reshape(-1, 2)
    K = disp.shape[0]
    if K < 1:
        raise ValueError("motion mask needs at least one keyframe")
    moving = disp > move_eps
    if gripper_changes is not None:
        moving |= np.asarray(gripper_changes, dtype=bool).reshape(-1, 2)
    cl, cr = moving[:, 0], moving[:, 1]
    if np.all(cl == cr):
        return MotionMask.sync(K)
    if np.all(cl != cr):
        return MotionMask(moving.astype(np.int64), STRICTLY_ASYNC)
    bad = [i + 1 for i in range(K) if cl[i] == cr[i]]
    raise MixedCoordination(
        f"keyframes {bad[:8]} break the strictly asynchronous pattern of the others"
    )


def build_program(
    traj: MotionTrajectory,
    indices: Sequence[int],
    cfg: KeyframeConfig | None = None,
    task: str = "",
) -> KeyframeProgram:
    """Assemble a program from keyframe positions.

    The first index is the initial state (the pose the arms start from); every
    later index becomes one keyframe, so ``K = len(indices) - 1``.
    """
    cfg = cfg or KeyframeConfig()
    idx = sorted(indices)
    if len(idx) < 2:
        raise TooShort("need the initial frame plus at least one keyframe")

    def action(j, arm, k):
        s = traj.samples[j][0 if arm == "L" else 1]
        return KeyframeAction(k, s.timestamp_s, arm, s.position.copy(), s.rotation.copy(), s.gripper)

    initial = (action(idx[0], "L", 0), action(idx[0], "R", 0))
    L = [action(j, "L", k) for k, j in enumerate(idx[1:], start=1)]
    R = [action(j, "R", k) for k, j in enumerate(idx[1:], start=1)]
    disp = np.zeros((len(L), 2))
    changes = np.zeros((len(L), 2), dtype=bool)
    for a_i, seq in enumerate((L, R)):
        prev = initial[a_i]
        for k, a in enumerate(seq):
            disp[k, a_i] = np.linalg.norm(a.position - prev.position)
            changes[k, a_i] = a.gripper != prev.gripper
            prev = a
    mask = derive_motion_mask(disp, changes, cfg.move_eps)
    return KeyframeProgram(L, R, mask, task, initial)


# --------------------------------------------------------------------------- decomposition


def decompose(program: KeyframeProgram) -> tuple[list[KeyframeAction], list[KeyframeAction]]:
    """Split a strictly asynchronous program into the two single-arm sequences.

    Holding entries are dropped, so ``len(A_L) + len(A_R) == K``.
    """
    if program.mask.mode != STRICTLY_ASYNC:
        raise NotAsynchronous("synchronous programs drive both arms at every keyframe")
    A_L, A_R = [], []
    for (cl, cr), a, b in zip(program.mask.entries, program.actions_L, program.actions_R):
        if cl == 1 and cr == 0:
            A_L.append(a)
        elif cl == 0 and cr == 1:
            A_R.append(b)
    return A_L, A_R


def entry_counts(program: KeyframeProgram) -> dict[str, int]:
    """Both size readings: ``2K`` per-arm entries and the entries kept after decomposition."""
    if program.sync:
        kept = 2 * program.K
    else:
        A_L, A_R = decompose(program)
        kept = len(A_L) + len(A_R)
    return {"keyframes": program.K, "per_arm_entries": 2 * program.K, "kept_entries": kept}


def reorganize(program: KeyframeProgram) -> ReorganizedActions:
    if program.mask.mode == SYNC:
        entries = []
        for a, b in program.pairs():
            entries.extend([a, b])
        return ReorganizedActions(entries, SYNC, program.initial)
    A_L, A_R = decompose(program)
    entries = sorted(A_L + A_R, key=lambda a: a.k)
    return ReorganizedActions(entries, STRICTLY_ASYNC, program.initial)


def recompose(actions: ReorganizedActions, mask: MotionMask, task: str = "") -> KeyframeProgram:
    """Inverse of :func:`reorganize`; holding arms carry their last pose forward."""
    K = len(mask)
    n = len(actions.entries)
    if mask.mode == SYNC:
        if n != 2 * K:
            raise LengthMismatch(f"synchronous mask of {K} keyframes needs {2 * K} actions, got {n}")
        L = actions.entries[0::2]
        R = actions.entries[1::2]
        for i, (a, b) in enumerate(zip(L, R)):
            if a.chirality != "L" or b.chirality != "R":
                raise LengthMismatch(f"synchronous entry pair {i + 1} is not ordered (L, R)")
        return KeyframeProgram(list(L), list(R), mask, task, actions.initial)
    if n != K:
        raise LengthMismatch(f"asynchronous mask of {K} keyframes needs {K} actions, got {n}")
    last = {"L": None, "R": None}
    if actions.initial is not None:
        last = {"L": actions.initial[0], "R": actions.initial[1]}
    L, R = [], []
    for k, ((cl, cr), entry) in enumerate(zip(mask.entries, actions.entries), start=1):
        mover = "L" if cl == 1 else "R"
        holder = "R" if mover == "L" else "L"
        if entry.chirality != mover:
            raise LengthMismatch(f"keyframe {k}: action is for arm {entry.chirality}, mask moves {mover}")
        prev = last[holder]
        if prev is None:
            raise LengthMismatch(f"keyframe {k}: arm {holder} holds before any known pose")
        hold = prev.replace(k=entry.k, timestamp_s=entry.timestamp_s)
        last[mover] = entry
        last[holder] = hold
        if mover == "L":
            L.append(entry)
            R.append(hold)
        else:
            L.append(hold)
            R.append(entry)
    return KeyframeProgram(L, R, mask, task, actions.initial)
