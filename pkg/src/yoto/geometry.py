"""3D math shared by every stage: rotations, rigid transforms, stereo, point clouds.

Vectors are ``(3,)`` float64 arrays and rotations ``(3, 3)`` matrices. All
functions are pure.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonPositiveDepth, NonPositiveDisparity, ParseError

ROTATION_TOL = 1e-9

# Tool pointing straight down at the table: gripper z along world -z.
TOOL_DOWN = np.diag([1.0, -1.0, -1.0])


def as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).reshape(3)
    return v


def is_rotation(R, tol: float = ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(
        np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(R) -> float:
    """Heading of the rotated x axis projected on the table plane."""
    R = np.asarray(R)
    return float(np.arctan2(R[1, 0], R[0, 0]))


def exp_so3(rotvec) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def log_so3(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def rotation_angle(R) -> float:
    cos = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def orthonormalize(R) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def to_6d(R) -> np.ndarray:
    """First two columns of ``R`` stacked column-wise."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def from_6d(v) -> np.ndarray:
    """Gram-Schmidt decode of the two-column encoding."""
    v = np.asarray(v, dtype=np.float64)
    a, b = v[:3], v[3:6]
    x = a / np.linalg.norm(a)
    b = b - np.dot(x, b) * x
    y = b / np.linalg.norm(b)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


def blend_rotation(R0, R1, s: float) -> np.ndarray:
    """Shortest-arc interpolation from ``R0`` (s=0) to ``R1`` (s=1)."""
    rel = log_so3(np.asarray(R0).T @ np.asarray(R1))
    return np.asarray(R0) @ exp_so3(s * rel)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def yaw_about(cls, angle: float, center, shift=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotate by ``angle`` about the vertical axis through ``center``, then shift."""
        R = rot_z(angle)
        c = as_vec3(center)
        return cls(R, c - R @ c + as_vec3(shift))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Map a point ``(3,)`` or a batch ``(N, 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_list(self) -> list:
        return self.rotation.reshape(-1).tolist() + self.translation.tolist()

    @classmethod
    def from_list(cls, values) -> "RigidTransform":
        v = np.asarray(values, dtype=np.float64)
        return cls(v[:9].reshape(3, 3), v[9:12])

    def __repr__(self):
        return f"RigidTransform(yaw={yaw_of(self.rotation):.4f}, t={self.translation.round(6).tolist()})"


def compose(g1: RigidTransform, g2: RigidTransform) -> RigidTransform:
    """``g1 ∘ g2``: apply ``g2`` first."""
    return RigidTransform(g1.rotation @ g2.rotation, g1.rotation @ g2.translation + g1.translation)


@dataclass(frozen=True)
class StereoCamera:
    """Ideal rectified stereo pair; depth follows ``z = f * B / d``."""

    focal_px: float = 600.0
    principal_point: tuple[float, float] = (320.0, 240.0)
    baseline_m: float = 0.1
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")
        if not self.baseline_m > 0:
            raise ValueError("baseline_m must be positive")

    def to_dict(self) -> dict:
        return {
            "focal_px": self.focal_px,
            "principal_point": list(self.principal_point),
            "baseline_m": self.baseline_m,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StereoCamera":
        return cls(
            focal_px=float(d.get("focal_px", 600.0)),
            principal_point=tuple(d.get("principal_point", (320.0, 240.0))),
            baseline_m=float(d.get("baseline_m", 0.1)),
            image_size=tuple(d.get("image_size", (640, 480))),
        )


def project(cam: StereoCamera, p) -> tuple[float, float, float]:
    """Pixel coordinates and disparity of a camera-frame point."""
    x, y, z = as_vec3(p)
    if not z > 0:
        raise NonPositiveDepth(f"point depth {z} is not positive")
    u0, v0 = cam.principal_point
    f = cam.focal_px
    return u0 + f * x / z, v0 + f * y / z, f * cam.baseline_m / z


def lift(cam: StereoCamera, u: float, v: float, d: float) -> np.ndarray:
    if not d > 0:
        raise NonPositiveDisparity(f"disparity {d} is not positive")
    u0, v0 = cam.principal_point
    f = cam.focal_px
    z = f * cam.baseline_m / d
    return np.array([(u - u0) * z / f, (v - v0) * z / f, z])


def project_many(cam: StereoCamera, points) -> np.ndarray:
    """Vectorised :func:`project`; returns ``(N, 3)`` rows of ``(u, v, d)``."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        raise NonPositiveDepth(f"point {int(bad[0])} has non-positive depth {z[bad[0]]}")
    u0, v0 = cam.principal_point
    f = cam.focal_px
    return np.stack([u0 + f * p[:, 0] / z, v0 + f * p[:, 1] / z, f * cam.baseline_m / z], axis=1)


def lift_many(cam: StereoCamera, uvd) -> np.ndarray:
    uvd = np.asarray(uvd, dtype=np.float64).reshape(-1, 3)
    d = uvd[:, 2]
    bad = np.flatnonzero(~(d > 0))
    if bad.size:
        raise NonPositiveDisparity(f"pixel {int(bad[0])} has non-positive disparity {d[bad[0]]}")
    u0, v0 = cam.principal_point
    f = cam.focal_px
    z = f * cam.baseline_m / d
    return np.stack([(uvd[:, 0] - u0) * z / f, (uvd[:, 1] - v0) * z / f, z], axis=1)


_PC_MAGIC = b"YPC1"


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32).reshape(-1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("labels length does not match point count")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite coordinates")

    def __len__(self):
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def transformed(self, g: RigidTransform) -> "PointCloud":
        return PointCloud(g.apply(self.points), None if self.labels is None else self.labels.copy())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    def to_bytes(self) -> bytes:
        n = len(self)
        labels = self.labels if self.labels is not None else np.zeros(n, dtype=np.uint32)
        return (
            _PC_MAGIC
            + struct.pack("<I", n)
            + self.points.astype("<f8").tobytes()
            + labels.astype("<u4").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["PointCloud", int]:
        """Parse one block starting at ``offset``; returns the cloud and the end offset."""
        if data[offset : offset + 4] != _PC_MAGIC:
            raise ParseError("bad point cloud magic")
        (n,) = struct.unpack_from("<I", data, offset + 4)
        start = offset + 8
        end_pts = start + 24 * n
        end = end_pts + 4 * n
        if end > len(data):
            raise ParseError("truncated point cloud block")
        pts = np.frombuffer(data, dtype="<f8", count=3 * n, offset=start).reshape(n, 3)
        labels = np.frombuffer(data, dtype="<u4", count=n, offset=end_pts)
        return cls(pts.astype(np.float64), labels.astype(np.uint32)), end

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PointCloud":
        data = Path(path).read_bytes()
        cloud, end = cls.from_bytes(data)
        if end != len(data):
            raise ParseError("trailing bytes after point cloud")
        return cloud

    @classmethod
    def from_json(cls, text_or_obj) -> "PointCloud":
        """Small fixtures: ``{"points": [[x, y, z], ...], "labels": [...]}`` or a bare list."""
        obj = json.loads(text_or_obj) if isinstance(text_or_obj, (str, bytes)) else text_or_obj
        if isinstance(obj, list):
            return cls(np.asarray(obj, dtype=np.float64))
        return cls(np.asarray(obj["points"], dtype=np.float64), obj.get("labels"))
