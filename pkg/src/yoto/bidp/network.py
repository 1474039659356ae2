"""Noise-prediction network with hand-written reverse mode.

Point encoder: two shared per-point affine layers (SiLU between) and a
max-pool. The pooled feature and the proprioception are projected to a
conditioning vector. The noise MLP sees ``[x_t, cond, temb(t)]``.

All weights live in one flat float64 vector; :class:`Layout` maps names to
slices.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch


@dataclass(frozen=True)
class NetConfig:
    horizon: int
    action_dim: int = 7
    proprio_dim: int = 13
    point_hidden: int = 64
    point_feat: int = 128
    cond_dim: int = 128
    temb_dim: int = 64
    hidden: int = 256
    layers: int = 3
    # "epsilon": the output is the noise; "sample": the output is the clean
    # action and the noise is derived from it
    prediction: str = "sample"

    @property
    def flat_action(self) -> int:
        return self.horizon * self.action_dim

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "NetConfig":
        return cls(**d)


class Layout:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        shapes = [
            ("enc1.W", (3, cfg.point_hidden)), ("enc1.b", (cfg.point_hidden,)),
            ("enc2.W", (cfg.point_hidden, cfg.point_feat)), ("enc2.b", (cfg.point_feat,)),
            ("cond.W", (cfg.point_feat + cfg.proprio_dim, cfg.cond_dim)), ("cond.b", (cfg.cond_dim,)),
        ]
        d_in = cfg.flat_action + cfg.cond_dim + cfg.temb_dim
        for i in range(cfg.layers):
            shapes += [(f"mlp{i}.W", (d_in, cfg.hidden)), (f"mlp{i}.b", (cfg.hidden,))]
            d_in = cfg.hidden
        shapes += [("out.W", (d_in, cfg.flat_action)), ("out.b", (cfg.flat_action,))]
        self.entries = []
        off = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.entries.append((name, off, shape))
            off += n
        self.size = off
        self._index = {name: (o, s) for name, o, s in self.entries}

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        off, shape = self._index[name]
        return flat[off: off + int(np.prod(shape))].reshape(shape)

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ShapeMismatch(f"expected {self.size} parameters, got {flat.shape}")
        return {name: self.view(flat, name) for name, _, _ in self.entries}

    def table(self) -> list[dict]:
        return [{"name": n, "offset": o, "shape": list(s)} for n, o, s in self.entries]


def init_params(cfg: NetConfig, seed: int = 0, zero_output: bool = True) -> np.ndarray:
    lay = Layout(cfg)
    rng = np.random.default_rng(seed)
    flat = np.zeros(lay.size)
    for name, _, shape in lay.entries:
        if name.endswith(".W"):
            if name == "out.W" and zero_output:
                continue
            lay.view(flat, name)[...] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return flat


def _silu(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _dsilu(z, s):
    return s * (1.0 + z * (1.0 - s))


def timestep_embedding(t, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)], axis=1)


class Denoiser:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.layout = Layout(cfg)

    # ------------------------------------------------------------------ forward

    def encode(self, params, points, proprio):
        """Conditioning vectors for ``(B, N, 3)`` clouds and ``(B, 13)`` proprio."""
        p = self.layout.unpack(params)
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ShapeMismatch(f"points must be (B, N, 3), got {pts.shape}")
        proprio = np.asarray(proprio, dtype=np.float64).reshape(len(pts), self.cfg.proprio_dim)
        B = len(pts)
        z1 = pts @ p["enc1.W"] + p["enc1.b"]
        h1, s1 = _silu(z1)
        z2 = h1 @ p["enc2.W"] + p["enc2.b"]
        idx = np.argmax(z2, axis=1)  # (B, F)
        rows = np.arange(B)[:, None]
        pooled = z2[rows, idx, np.arange(z2.shape[2])[None, :]]
        u = np.concatenate([pooled, proprio], axis=1)
        zc = u @ p["cond.W"] + p["cond.b"]
        cond, sc = _silu(zc)
        cache = {
            "idx": idx, "u": u, "zc": zc, "sc": sc,
            "pts_g": pts[rows, idx],  # (B, F, 3)
            "z1_g": z1[rows, idx], "s1_g": s1[rows, idx], "h1_g": h1[rows, idx],
        }
        return cond, cache

    def eps(self, params, cond, x, t):
        """Noise prediction for ``(M, H*7)`` noisy actions with ``(M, C)`` conditioning."""
        p = self.layout.unpack(params)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.flat_action:
            raise ShapeMismatch(f"noisy actions must be (M, {self.cfg.flat_action}), got {x.shape}")
        temb = timestep_embedding(t, self.cfg.temb_dim)
        h = np.concatenate([x, cond, temb], axis=1)
        acts = [h]
        pre = []
        for i in range(self.cfg.layers):
            z = h @ p[f"mlp{i}.W"] + p[f"mlp{i}.b"]
            h, s = _silu(z)
            pre.append((z, s))
            acts.append(h)
        out = h @ p["out.W"] + p["out.b"]
        return out, {"acts": acts, "pre": pre}

    def eps_hat(self, params, cond, x, t, sched) -> np.ndarray:
        """Predicted noise whatever the output parameterisation."""
        out, _ = self.eps(params, cond, x, t)
        if self.cfg.prediction == "epsilon":
            return out
        ab = sched._alpha_bars[np.asarray(t)].reshape(-1, 1)
        return (x - np.sqrt(ab) * out) / np.sqrt(1.0 - ab)

    # ------------------------------------------------------------------ backward

    def backward(self, params, enc_cache, mlp_cache, dout, obs_index) -> np.ndarray:
        """Gradient of a scalar loss given ``d loss / d eps_out``.

        ``obs_index[m]`` names the observation row ``m`` was conditioned on.
        """
        cfg = self.cfg
        p = self.layout.unpack(params)
        grad = np.zeros(self.layout.size)
        g = self.layout.unpack(grad)
        acts, pre = mlp_cache["acts"], mlp_cache["pre"]
        g["out.W"][...] = acts[-1].T @ dout
        g["out.b"][...] = dout.sum(axis=0)
        dh = dout @ p["out.W"].T
        for i in reversed(range(cfg.layers)):
            z, s = pre[i]
            dz = dh * _dsilu(z, s)
            g[f"mlp{i}.W"][...] = acts[i].T @ dz
            g[f"mlp{i}.b"][...] = dz.sum(axis=0)
            dh = dz @ p[f"mlp{i}.W"].T
        A = cfg.flat_action
        dcond_rows = dh[:, A: A + cfg.cond_dim]
        B = len(enc_cache["u"])
        dcond = np.zeros((B, cfg.cond_dim))
        np.add.at(dcond, np.asarray(obs_index), dcond_rows)

        dzc = dcond * _dsilu(enc_cache["zc"], enc_cache["sc"])
        g["cond.W"][...] = enc_cache["u"].T @ dzc
        g["cond.b"][...] = dzc.sum(axis=0)
        dpool = dzc @ p["cond.W"][: cfg.point_feat].T  # (B, F)

        # max-pool routes each pooled gradient to one point
        g["enc2.b"][...] = dpool.sum(axis=0)
        h1_g = enc_cache["h1_g"]  # (B, F, P1): hidden of the argmax point of feature j
        g["enc2.W"][...] = np.einsum("bjp,bj->pj", h1_g, dpool)
        W2 = p["enc2.W"]  # (P1, F)
        dh1 = dpool[:, :, None] * W2.T[None, :, :]  # (B, F, P1)
        dz1 = dh1 * _dsilu(enc_cache["z1_g"], enc_cache["s1_g"])
        g["enc1.W"][...] = np.einsum("bjc,bjp->cp", enc_cache["pts_g"], dz1)
        g["enc1.b"][...] = dz1.sum(axis=(0, 1))
        return grad


def loss_and_grad_draws(net: Denoiser, params, sched, points, proprio, x0, t, eps, obs_index=None,
                        perfect: bool = False) -> tuple[float, np.ndarray]:
    """Denoising MSE and its gradient for explicit draws.

    The regression target is ``eps`` or ``x0`` depending on the network's
    ``prediction`` setting.

    Row ``m`` of ``x0``/``t``/``eps`` belongs to observation ``obs_index[m]``
    (defaults to one row per observation). With ``perfect=True`` the network
    output is replaced by the drawn noise, a test hook for the zero-loss case.
    """
    from .schedule import q_sample  # local: schedule does not depend on the network

    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatch(f"x0 {x0.shape} and eps {eps.shape} differ")
    M = len(x0)
    if M == 0:
        raise ShapeMismatch("empty batch")
    obs_index = np.arange(M) if obs_index is None else np.asarray(obs_index)
    if net.cfg.prediction not in ("epsilon", "sample"):
        raise ValueError(f"unknown prediction mode {net.cfg.prediction!r}")
    if perfect:
        return 0.0, np.zeros(net.layout.size)
    cond, enc_cache = net.encode(params, points, proprio)
    x_t = q_sample(x0, t, eps, sched)
    out, mlp_cache = net.eps(params, cond[obs_index], x_t, t)
    r = out - (eps if net.cfg.prediction == "epsilon" else x0)
    loss = float(np.mean(r * r))
    dout = 2.0 * r / r.size
    return loss, net.backward(params, enc_cache, mlp_cache, dout, obs_index)
