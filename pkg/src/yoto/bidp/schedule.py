"""Noise schedule, forward noising, DDPM posterior step and the DDIM sampler.

Timesteps run 1..T; ``alpha_bar(0)`` is 1 by convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import BadStep

EpsFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    betas: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.betas is None:
            if self.T < 1:
                raise BadStep("schedule needs T >= 1")
            b = np.linspace(self.beta_start, self.beta_end, self.T) if self.T > 1 else np.array([self.beta_start])
        else:
            b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "T", len(b))
        if not np.all((b > 0) & (b < 1)):
            raise BadStep("betas must lie in (0, 1)")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - b)])
        ab.setflags(write=False)
        object.__setattr__(self, "_alpha_bars", ab)

    @classmethod
    def from_betas(cls, betas) -> "DiffusionSchedule":
        return cls(betas=betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """``alpha_bar`` for t = 1..T."""
        return self._alpha_bars[1:]

    def alpha_bar(self, t: int) -> float:
        return float(self._alpha_bars[t])

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def sigma(self, t: int) -> float:
        """DDPM posterior standard deviation; zero at t=1."""
        self.check(t)
        if t == 1:
            return 0.0
        ab, ab_prev = self.alpha_bar(t), self.alpha_bar(t - 1)
        return float(np.sqrt(self.beta(t) * (1.0 - ab_prev) / (1.0 - ab)))

    def check(self, t) -> None:
        if isinstance(t, (int, np.integer)):
            ok = 1 <= t <= self.T
        else:
            t = np.asarray(t)
            ok = t.size > 0 and t.min() >= 1 and t.max() <= self.T
        if not ok:
            raise BadStep(f"timestep {t} outside 1..{self.T}")

    def to_json(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def q_sample(x0, t, eps, sched: DiffusionSchedule) -> np.ndarray:
    """Forward noising ``x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or one timestep per leading row of ``x0``.
    """
    sched.check(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = sched._alpha_bars[np.asarray(t)]
    if np.ndim(ab):
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def denoise_step(x_t, t: int, eps_hat, sched: DiffusionSchedule, noise_draw=None) -> np.ndarray:
    """One ancestral DDPM step from ``t`` to ``t - 1`` given the predicted noise."""
    sched.check(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    a, b, ab = 1.0 - sched.beta(t), sched.beta(t), sched.alpha_bar(t)
    mean = (x_t - (b / np.sqrt(1.0 - ab)) * np.asarray(eps_hat)) / np.sqrt(a)
    if t == 1 or noise_draw is None:
        return mean
    return mean + sched.sigma(t) * np.asarray(noise_draw)


def ddpm_sample(eps_fn: EpsFn, x_T, sched: DiffusionSchedule, rng: np.random.Generator | None = None) -> np.ndarray:
    """Full T-step ancestral sampling from ``x_T`` (noise-free when ``rng`` is None)."""
    x = np.asarray(x_T, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        z = rng.standard_normal(x.shape) if rng is not None and t > 1 else None
        x = denoise_step(x, t, eps_fn(x, t), sched, z)
    return x


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    if not 1 <= n_steps <= T:
        raise BadStep(f"n_steps must be within 1..{T}, got {n_steps}")
    ts = np.round(np.linspace(T, 1, n_steps)).astype(np.int64)
    return ts


def ddim_step(x_t, t: int, t_prev: int, eps_hat, sched: DiffusionSchedule, clip: float | None = None) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev`` (0 means clean)."""
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
    x0 = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    if clip is not None:
        x0 = np.clip(x0, -clip, clip)
    if t_prev == 0:
        return x0
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat


def ddim_sample(eps_fn: EpsFn, shape, sched: DiffusionSchedule, n_steps: int = 8, seed: int = 0,
                clip: float | None = None, x_T=None) -> np.ndarray:
    """Strided deterministic sampler; ``seed`` only picks the starting noise."""
    ts = ddim_timesteps(sched.T, n_steps)
    x = np.random.default_rng(seed).standard_normal(shape) if x_T is None else np.array(x_T, dtype=np.float64)
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        x = ddim_step(x, int(t), t_prev, eps_fn(x, int(t)), sched, clip)
    return x
