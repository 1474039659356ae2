"""The bimanual diffusion policy: data preparation, training, inference, checkpoints.

Action rows are ``[position (3), axis-angle (3), gripper (1)]``. Positions are
in the canonical frame of the observed cloud; rotations are expressed relative
to the tool-down orientation so the usual grasp poses sit near the origin of
axis-angle space. Rows are normalised per entry to ``[-1, 1]``.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DatasetError, EmptyDataset, InconsistentHorizon, ParseError, ShapeMismatch
from ..geometry import TOOL_DOWN, exp_so3, log_so3
from ..keyframes import SYNC, KeyframeAction, MotionMask, ReorganizedActions, reorganize
from .network import Denoiser, NetConfig, init_params, loss_and_grad_draws
from .observation import N_POINTS, CanonicalFrame, Observation, canonical_frame, subsample
from .schedule import DiffusionSchedule, ddim_sample

log = logging.getLogger(__name__)

MAGIC = b"YBDP"
SCHEMA_VERSION = 1
ACTION_DIM = 7
_MIN_HALF_RANGE = 1e-6


# --------------------------------------------------------------------------- action rows


def _initial_canonical(initial, frame: CanonicalFrame):
    return {a.chirality: (frame.to_canonical(a.position), a.rotation) for a in initial}


def encode_actions(entries, frame: CanonicalFrame, initial, delta: bool = False) -> np.ndarray:
    """``(H, 7)`` rows for reorganized entries, positions in the canonical frame."""
    prev = _initial_canonical(initial, frame)
    rows = np.zeros((len(entries), ACTION_DIM))
    for i, a in enumerate(entries):
        p = frame.to_canonical(a.position)
        if delta:
            p0, R0 = prev[a.chirality]
            rows[i, :3] = p - p0
            rows[i, 3:6] = log_so3(R0.T @ a.rotation)
            prev[a.chirality] = (p, a.rotation)
        else:
            rows[i, :3] = p
            rows[i, 3:6] = log_so3(TOOL_DOWN.T @ a.rotation)
        rows[i, 6] = a.gripper
    return rows


def decode_actions(rows, frame: CanonicalFrame, arms, initial, delta: bool = False) -> list[KeyframeAction]:
    """Inverse of :func:`encode_actions`; ``arms[i]`` is the chirality of row ``i``
    and ``ks[i]`` follows from the row order."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, ACTION_DIM)
    prev = _initial_canonical(initial, frame)
    out = []
    sync = len(arms) >= 2 and arms[0] == "L" and arms[1] == "R" and all(
        arms[i] == ("L", "R")[i % 2] for i in range(len(arms)))
    for i, (row, arm) in enumerate(zip(rows, arms)):
        k = i // 2 + 1 if sync else i + 1
        if delta:
            p0, R0 = prev[arm]
            p = p0 + row[:3]
            R = R0 @ exp_so3(row[3:6])
            prev[arm] = (p, R)
        else:
            p = row[:3]
            R = TOOL_DOWN @ exp_so3(row[3:6])
        grip = 1 if float(np.clip(row[6], 0.0, 1.0)) >= 0.5 else 0
        out.append(KeyframeAction(k, float(k), arm, frame.to_world(p), R, grip))
    return out


def row_arms(mask: MotionMask) -> list[str]:
    if mask.mode == SYNC:
        return ["L", "R"] * len(mask)
    return mask.movers()


@dataclass
class Normalizer:
    center: np.ndarray
    half: np.ndarray

    @classmethod
    def fit(cls, actions) -> "Normalizer":
        a = np.asarray(actions, dtype=np.float64)
        lo, hi = a.min(axis=0), a.max(axis=0)
        return cls((hi + lo) / 2.0, np.maximum((hi - lo) / 2.0, _MIN_HALF_RANGE))

    def forward(self, x):
        return (np.asarray(x) - self.center) / self.half

    def inverse(self, y):
        return np.asarray(y) * self.half + self.center


# --------------------------------------------------------------------------- inputs


def canonical_inputs(obs: Observation, n_points: int = N_POINTS, seed: int = 0):
    """Network inputs for one observation: canonical subsampled cloud, canonical proprio, frame.

    The full cloud is canonicalised before subsampling, so translating or
    rescaling the scene selects the same canonical points.
    """
    frame = canonical_frame(obs.cloud)
    pts = subsample(frame.to_canonical(obs.cloud), n_points, seed)
    proprio = obs.proprio.copy()
    proprio[:3] = frame.to_canonical(obs.proprio[:3])
    return pts, proprio, frame


@dataclass
class TrainingSet:
    task: str
    mask: MotionMask
    initial: tuple
    points: np.ndarray  # (D, N, 3)
    proprio: np.ndarray  # (D, 13)
    actions: np.ndarray  # (D, H, 7), raw rows

    def __len__(self):
        return len(self.points)


def prepare(demos, n_points: int = N_POINTS, delta: bool = False) -> TrainingSet:
    """Canonical network inputs and action rows for every demonstration.

    All demonstrations must share the task, motion mask and horizon.
    """
    demos = list(demos) if not hasattr(demos, "__getitem__") else demos
    if len(demos) == 0:
        raise EmptyDataset("no demonstrations to train on")
    first = demos[0]
    mask = first.program.mask
    H = len(row_arms(mask))
    pts, props, acts = [], [], []
    for i in range(len(demos)):
        d = demos[i]
        if d.task != first.task:
            raise DatasetError(f"demo {d.id} belongs to task {d.task!r}, not {first.task!r}")
        if not d.program.mask.equals(mask):
            raise InconsistentHorizon(
                f"demo {d.id} has K={d.program.K} ({d.program.mask.mode}); expected K={mask.entries.shape[0]} ({mask.mode})")
        obs = Observation(d.union_cloud(), d.proprio)
        p, pr, frame = canonical_inputs(obs, n_points)
        entries = reorganize(d.program).entries
        if len(entries) != H:
            raise InconsistentHorizon(f"demo {d.id} has {len(entries)} action rows, expected {H}")
        pts.append(p)
        props.append(pr)
        acts.append(encode_actions(entries, frame, d.program.initial, delta))
    return TrainingSet(first.task, mask, tuple(first.program.initial), np.stack(pts), np.stack(props), np.stack(acts))


# --------------------------------------------------------------------------- policy


@dataclass
class PolicyConfig:
    horizon: int
    n_points: int = N_POINTS
    delta: bool = False
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    ddim_steps: int = 8
    clip: float | None = 1.0
    net: dict = field(default_factory=dict)

    def net_config(self) -> NetConfig:
        return NetConfig(horizon=self.horizon, **{k: v for k, v in self.net.items() if k != "horizon"})

    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(self.T, self.beta_start, self.beta_end)


class Policy:
    def __init__(self, cfg: PolicyConfig, params: np.ndarray, normalizer: Normalizer,
                 task: str, mask: MotionMask, initial):
        self.cfg = cfg
        self.net = Denoiser(cfg.net_config())
        self.sched = cfg.schedule()
        if params.shape != (self.net.layout.size,):
            raise ShapeMismatch(f"expected {self.net.layout.size} parameters, got {params.shape}")
        self.params = params
        self.normalizer = normalizer
        self.task = task
        self.mask = mask
        self.initial = tuple(initial)

    @property
    def arms(self) -> list[str]:
        return row_arms(self.mask)

    def sample_canonical(self, points, proprio, seed: int = 0, n_steps: int | None = None) -> np.ndarray:
        """Denoised ``(H, 7)`` rows in the canonical frame (unnormalised)."""
        cond, _ = self.net.encode(self.params, points[None], proprio[None])

        def eps_fn(x, t):
            return self.net.eps_hat(self.params, cond, x, np.full(len(x), t), self.sched)

        H = self.cfg.horizon
        y = ddim_sample(eps_fn, (1, H * ACTION_DIM), self.sched, n_steps or self.cfg.ddim_steps, seed,
                        clip=self.cfg.clip)
        return self.normalizer.inverse(y.reshape(H, ACTION_DIM))

    def predict(self, obs: Observation, seed: int = 0, n_steps: int | None = None):
        """Reorganized keyframe actions and the task's motion mask for one observation."""
        pts, proprio, frame = canonical_inputs(obs, self.cfg.n_points)
        rows = self.sample_canonical(pts, proprio, seed, n_steps)
        entries = decode_actions(rows, frame, self.arms, self.initial, self.cfg.delta)
        return ReorganizedActions(entries, self.mask.mode, self.initial), self.mask

    def as_sim_policy(self, seed: int = 0):
        return lambda obs, scene: self.predict(obs, seed)

    # ------------------------------------------------------------------ checkpoint

    def header(self) -> dict:
        return {
            "task": self.task,
            "policy": asdict(self.cfg),
            "mask": {"mode": self.mask.mode, "entries": self.mask.entries.tolist()},
            "initial": [a.to_json() for a in self.initial],
            "layout": self.net.layout.table(),
            "n_params": int(self.params.size),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        H = self.cfg.horizon
        parts = [
            MAGIC,
            struct.pack("<II", SCHEMA_VERSION, len(head)),
            head,
            np.ascontiguousarray(self.normalizer.center.reshape(H * ACTION_DIM), dtype="<f8").tobytes(),
            np.ascontiguousarray(self.normalizer.half.reshape(H * ACTION_DIM), dtype="<f8").tobytes(),
            np.ascontiguousarray(self.sched.betas, dtype="<f8").tobytes(),
            struct.pack("<Q", self.params.size),
            np.ascontiguousarray(self.params, dtype="<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Policy":
        if data[:4] != MAGIC:
            raise ParseError("not a policy checkpoint (bad magic)")
        try:
            version, n = struct.unpack_from("<II", data, 4)
            if version != SCHEMA_VERSION:
                raise ParseError(f"checkpoint schema {version}, expected {SCHEMA_VERSION}")
            off = 12
            head = json.loads(data[off: off + n])
            off += n
            cfg = PolicyConfig(**head["policy"])
            H = cfg.horizon
            m = H * ACTION_DIM

            def f64(count):
                nonlocal off
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
                off += 8 * count
                return arr

            center, half = f64(m).reshape(H, ACTION_DIM), f64(m).reshape(H, ACTION_DIM)
            betas = f64(cfg.T)
            (count,) = struct.unpack_from("<Q", data, off)
            off += 8
            params = f64(count)
        except (struct.error, ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"corrupt checkpoint: {exc}") from None
        mask = MotionMask(np.asarray(head["mask"]["entries"], dtype=np.int64), head["mask"]["mode"])
        initial = [KeyframeAction.from_json(d) for d in head["initial"]]
        pol = cls(cfg, params, Normalizer(center, half), head["task"], mask, initial)
        if not np.array_equal(pol.sched.betas, betas):
            raise ParseError("checkpoint betas disagree with its schedule config")
        return pol

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# --------------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 300
    batch: int = 32
    lr: float = 1e-3
    n_draws: int = 4
    seed: int = 0
    weight_decay: float = 0.0


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)  # (step, epoch, loss, lr)

    def add(self, step, epoch, loss, lr):
        self.rows.append((step, epoch, loss, lr))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def epoch_means(self) -> np.ndarray:
        if not self.rows:
            return np.zeros(0)
        ep = np.array([r[1] for r in self.rows])
        return np.array([self.losses[ep == e].mean() for e in np.unique(ep)])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("step,epoch,loss,lr\n")
            for s, e, l, r in self.rows:
                fh.write(f"{s},{e},{l:.10g},{r:.10g}\n")


class Adam:
    def __init__(self, size: int, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0

    def step(self, params, grad, lr, weight_decay=0.0):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        upd = mh / (np.sqrt(vh) + self.eps)
        if weight_decay:
            upd = upd + weight_decay * params
        return params - lr * upd


def draw_noise(rng: np.random.Generator, n: int, dim: int, T: int):
    t = rng.integers(1, T + 1, size=n)
    eps = rng.standard_normal((n, dim))
    return t, eps


def loss_and_grad(batch, params, sched: DiffusionSchedule, seed: int, net: Denoiser,
                  n_draws: int = 1, perfect: bool = False):
    """Noise-prediction loss over ``(Observation, ActionTensor)`` pairs.

    Observations are taken as already canonical network inputs and action
    tensors as normalised ``(H, 7)`` rows. Each item gets ``n_draws`` random
    ``(t, eps)`` pairs from ``seed``.
    """
    if not batch:
        raise ShapeMismatch("empty batch")
    points = np.stack([o.cloud for o, _ in batch])
    proprio = np.stack([o.proprio for o, _ in batch])
    x0 = np.stack([np.asarray(a, dtype=np.float64).reshape(-1) for _, a in batch])
    if x0.shape[1] != net.cfg.flat_action:
        raise ShapeMismatch(f"action tensors have {x0.shape[1]} entries, network expects {net.cfg.flat_action}")
    rng = np.random.default_rng(seed)
    idx = np.repeat(np.arange(len(batch)), n_draws)
    t, eps = draw_noise(rng, len(idx), x0.shape[1], sched.T)
    return loss_and_grad_draws(net, params, sched, points, proprio, x0[idx], t, eps, idx, perfect)


def train(data, cfg: TrainConfig | None = None, policy_cfg: PolicyConfig | None = None,
          params=None, progress=None) -> tuple[Policy, LossTrace]:
    """Fit the denoiser with Adam and a cosine learning-rate decay.

    ``data`` is a :class:`TrainingSet` or a sequence of demonstrations.
    Deterministic for a given ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    if not isinstance(data, TrainingSet):
        data = prepare(data, policy_cfg.n_points if policy_cfg else N_POINTS,
                       policy_cfg.delta if policy_cfg else False)
    D = len(data)
    if D == 0:
        raise EmptyDataset("no demonstrations to train on")
    H = data.actions.shape[1]
    pcfg = policy_cfg or PolicyConfig(horizon=H)
    if pcfg.horizon != H:
        pcfg = PolicyConfig(**{**asdict(pcfg), "horizon": H})
    norm = Normalizer.fit(data.actions)
    x0_all = norm.forward(data.actions).reshape(D, -1)
    net = Denoiser(pcfg.net_config())
    sched = pcfg.schedule()
    rng = np.random.default_rng(cfg.seed)
    theta = init_params(net.cfg, int(rng.integers(2**31))) if params is None else np.array(params, dtype=np.float64)
    opt = Adam(theta.size)
    B = max(1, min(cfg.batch, D))
    per_epoch = math.ceil(D / B)
    total = cfg.epochs * per_epoch
    trace = LossTrace()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(D)
        for s in range(per_epoch):
            sel = order[s * B: (s + 1) * B]
            idx = np.repeat(np.arange(len(sel)), cfg.n_draws)
            t, eps = draw_noise(rng, len(idx), x0_all.shape[1], sched.T)
            loss, grad = loss_and_grad_draws(net, theta, sched, data.points[sel], data.proprio[sel],
                                             x0_all[sel][idx], t, eps, idx)
            lr = cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
            theta = opt.step(theta, grad, lr, cfg.weight_decay)
            trace.add(step, epoch, loss, lr)
            step += 1
        if progress is not None:
            progress(epoch, trace)
    if not np.all(np.isfinite(theta)):
        raise DatasetError("training diverged (non-finite parameters)")
    return Policy(pcfg, theta, norm, data.task, data.mask, data.initial), trace
