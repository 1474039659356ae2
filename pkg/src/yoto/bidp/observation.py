"""Policy observations: object cloud + left-arm proprioception, and their canonical form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateCloud
from ..geometry import PointCloud, from_6d

N_POINTS = 1024
PROPRIO_DIM = 13
MIN_SCALE = 1e-9
# canonical coordinates are snapped to this grid so that rescaling a cloud
# about its centroid reproduces the network input bit for bit
_GRID = 2.0**30


@dataclass(eq=False)
class Observation:
    cloud: np.ndarray  # (n, 3)
    proprio: np.ndarray  # (13,)

    def __post_init__(self):
        self.cloud = np.asarray(self.cloud, dtype=np.float64).reshape(-1, 3)
        self.proprio = np.asarray(self.proprio, dtype=np.float64).reshape(PROPRIO_DIM)

    def check(self, tol: float = 1e-6) -> None:
        g = self.proprio[9:12]
        if abs(np.linalg.norm(g) - 1.0) > tol:
            raise ValueError("gravity direction is not a unit vector")
        R = from_6d(self.proprio[3:9])
        if np.abs(R.T @ R - np.eye(3)).max() > tol:
            raise ValueError("proprioceptive rotation does not decode to a rotation")


@dataclass(frozen=True)
class CanonicalFrame:
    centroid: np.ndarray
    scale: float

    def to_canonical(self, p) -> np.ndarray:
        return _snap((np.asarray(p, dtype=np.float64) - self.centroid) / self.scale)

    def to_world(self, q) -> np.ndarray:
        return np.asarray(q, dtype=np.float64) * self.scale + self.centroid

    def to_json(self):
        return {"centroid": self.centroid.tolist(), "scale": self.scale}


def _snap(x):
    return np.round(x * _GRID) / _GRID


def canonical_frame(points) -> CanonicalFrame:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateCloud("empty point cloud")
    c = pts.mean(axis=0)
    scale = float(np.linalg.norm(pts - c, axis=1).mean())
    if not scale >= MIN_SCALE:
        raise DegenerateCloud(f"cloud scale {scale:.3g} below {MIN_SCALE}")
    return CanonicalFrame(c, scale)


def canonicalize(obs: Observation) -> tuple[Observation, CanonicalFrame]:
    """Quotient out cloud position and size.

    Points and the proprioceptive position map through ``(p - centroid) / scale``;
    rotation, gravity and gripper entries pass through unchanged.
    """
    frame = canonical_frame(obs.cloud)
    proprio = obs.proprio.copy()
    proprio[:3] = frame.to_canonical(obs.proprio[:3])
    return Observation(frame.to_canonical(obs.cloud), proprio), frame


def subsample(cloud, n: int = N_POINTS, seed: int = 0) -> np.ndarray:
    """Farthest-point sampling of ``n`` points.

    The first pick is the point farthest from the centroid (lowest index on
    ties), so the result does not depend on ``seed`` when the cloud has at
    least ``n`` points. Smaller clouds are topped up by sampling with
    replacement from ``seed``.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    m = len(pts)
    if m == 0:
        raise DegenerateCloud("empty point cloud")
    if n <= 0:
        return pts[:0].copy()
    k = min(n, m)
    chosen = np.empty(k, dtype=np.int64)
    d = np.linalg.norm(pts - pts.mean(axis=0), axis=1)
    chosen[0] = int(np.argmax(d))
    dist = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    dist[chosen[0]] = -1.0
    for i in range(1, k):
        j = int(np.argmax(dist))
        chosen[i] = j
        dist = np.minimum(dist, np.sum((pts - pts[j]) ** 2, axis=1))
        dist[j] = -1.0  # already-chosen points keep -1 through the minimum
    out = pts[chosen]
    if k < n:
        rng = np.random.default_rng(seed)
        extra = rng.integers(0, m, size=n - k)
        out = np.concatenate([out, pts[extra]], axis=0)
    return out


def observation_from(clouds, proprio, n_points: int = N_POINTS, seed: int = 0) -> Observation:
    """Union of object clouds, subsampled, with the given proprioception."""
    if isinstance(clouds, dict):
        pts = np.concatenate([clouds[k].points for k in sorted(clouds)], axis=0)
    elif isinstance(clouds, PointCloud):
        pts = clouds.points
    else:
        pts = np.asarray(clouds, dtype=np.float64)
    return Observation(subsample(pts, n_points, seed), proprio)
