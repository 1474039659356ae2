"""Demonstration proliferation by planar rigid transforms of object point clouds.

Every keypose associated with an object moves with that object, so the pose of
each keypose expressed in its object's frame is identical across all copies of
a seed demonstration.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AmbiguousAssociation,
    DatasetError,
    EmptyRegion,
    OutOfWorkspace,
    ParseError,
    RetryExhausted,
    UnknownObject,
)
from .geometry import PointCloud, RigidTransform, to_6d
from .keyframes import KeyframeAction, KeyframeProgram

SCHEMA_VERSION = 1
SPAN_M = 0.88
RETRY_CAP = 100
TIE_TOL_M = 1e-3
GRAVITY = np.array([0.0, 0.0, -1.0])
_REGION_TOL = 1e-9
_DEMO_MAGIC = b"YDM1"


def initial_proprioception(action: KeyframeAction) -> np.ndarray:
    """13-vector: position, two rotation columns, gravity direction, gripper openness."""
    return np.concatenate(
        [action.position, to_6d(action.rotation), GRAVITY, [float(action.gripper)]]
    )


@dataclass(frozen=True)
class Region:
    center: tuple[float, float]
    half_extents: tuple[float, float]
    yaw_range: tuple[float, float] = (0.0, 0.0)

    def validate(self):
        hx, hy = self.half_extents
        lo, hi = self.yaw_range
        if hx < 0 or hy < 0 or lo > hi:
            raise EmptyRegion(f"region {self} admits no placement")

    def contains(self, xy) -> bool:
        d = np.abs(np.asarray(xy[:2], dtype=float) - self.center)
        return bool(np.all(d <= np.asarray(self.half_extents) + _REGION_TOL))

    def to_json(self):
        return {"center": list(self.center), "half_extents": list(self.half_extents),
                "yaw_range": list(self.yaw_range)}


@dataclass
class Workspace:
    regions: dict[int, Region]
    arm_bases: dict[str, np.ndarray] = field(
        default_factory=lambda: {"L": np.array([0.0, 0.25, 0.0]), "R": np.array([0.0, -0.25, 0.0])}
    )
    span_m: float = SPAN_M

    def validate(self):
        if not self.span_m > 0:
            raise OutOfWorkspace(f"arm span must be positive, got {self.span_m}")
        for r in self.regions.values():
            r.validate()

    def reachable(self, arm: str, p) -> bool:
        return float(np.linalg.norm(np.asarray(p) - self.arm_bases[arm])) <= self.span_m

    def to_json(self) -> dict:
        return {
            "regions": {str(k): v.to_json() for k, v in sorted(self.regions.items())},
            "arm_bases": {k: np.asarray(v).tolist() for k, v in sorted(self.arm_bases.items())},
            "span_m": self.span_m,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Workspace":
        regions = {
            int(k): Region(tuple(v["center"]), tuple(v["half_extents"]), tuple(v.get("yaw_range", (0, 0))))
            for k, v in d["regions"].items()
        }
        bases = {k: np.asarray(v, dtype=float) for k, v in d.get("arm_bases", {}).items()}
        ws = cls(regions, span_m=float(d.get("span_m", SPAN_M)))
        if bases:
            ws.arm_bases = bases
        return ws

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class Demonstration:
    id: str
    clouds: dict[int, PointCloud]
    program: KeyframeProgram
    proprio: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "seed"})
    object_poses: dict[int, RigidTransform] = field(default_factory=dict)
    task: str = ""

    def __post_init__(self):
        self.proprio = np.asarray(self.proprio, dtype=np.float64).reshape(13)
        for a in self.program.all_actions():
            if a.object_id is not None and a.object_id not in self.clouds:
                raise UnknownObject(f"keyframe {a.k} ({a.chirality}) references unknown object {a.object_id}")

    def union_cloud(self) -> np.ndarray:
        return np.concatenate([self.clouds[i].points for i in sorted(self.clouds)], axis=0)

    # ---- serialisation

    def header(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "task": self.task,
            "program": self.program.to_json(),
            "proprio": self.proprio.tolist(),
            "provenance": self.provenance,
            "object_poses": {str(k): v.to_list() for k, v in sorted(self.object_poses.items())},
            "objects": sorted(self.clouds),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        parts = [_DEMO_MAGIC, struct.pack("<I", len(head)), head]
        for oid in sorted(self.clouds):
            c = self.clouds[oid]
            parts.append(PointCloud(c.points, np.full(len(c), oid, dtype=np.uint32)).to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Demonstration":
        if data[:4] != _DEMO_MAGIC:
            raise ParseError("bad demonstration magic")
        (n,) = struct.unpack_from("<I", data, 4)
        try:
            head = json.loads(data[8 : 8 + n].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad demonstration header: {exc}") from None
        offset = 8 + n
        clouds = {}
        for oid in head["objects"]:
            cloud, offset = PointCloud.from_bytes(data, offset)
            clouds[int(oid)] = cloud
        return cls(
            id=head["id"],
            clouds=clouds,
            program=KeyframeProgram.from_json(head["program"]),
            proprio=np.asarray(head["proprio"]),
            provenance=head.get("provenance", {}),
            object_poses={int(k): RigidTransform.from_list(v) for k, v in head.get("object_poses", {}).items()},
            task=head.get("task", ""),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Demonstration":
        return cls.from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------- association


def associate(demo: Demonstration, radius_m: float = 0.15) -> Demonstration:
    """Label unlabelled keyframe actions with the object they manipulate.

    Actions with a gripper transition take the nearest object centroid.
    While a gripper stays closed its actions keep the grasped object's label
    (the object travels with the hand). Remaining actions take the nearest
    centroid within ``radius_m``. Explicit labels are kept as they are.
    """
    if not demo.clouds:
        raise UnknownObject("demonstration has no object clouds")
    ids = sorted(demo.clouds)
    centroids = np.array([demo.clouds[i].centroid() for i in ids])
    prog = demo.program

    def label(seq, init):
        out = []
        prev = init
        held = None
        for a in seq:
            closing = prev is not None and prev.gripper == 1 and a.gripper == 0
            if a.object_id is None and held is not None and (a.gripper == 0 or not closing):
                a = a.replace(object_id=held)
            elif a.object_id is None:
                d = np.linalg.norm(centroids - a.position, axis=1)
                order = np.argsort(d, kind="stable")
                if len(ids) > 1 and d[order[1]] - d[order[0]] <= TIE_TOL_M:
                    raise AmbiguousAssociation(
                        f"keyframe {a.k} ({a.chirality}) is equidistant from objects "
                        f"{ids[order[0]]} and {ids[order[1]]}"
                    )
                transition = prev is not None and prev.gripper != a.gripper
                if transition or d[order[0]] <= radius_m:
                    a = a.replace(object_id=ids[order[0]])
            if closing:
                held = a.object_id
            elif a.gripper == 1:
                held = None
            out.append(a)
            prev = a
        return out

    init = prog.initial or (None, None)
    program = KeyframeProgram(
        label(prog.actions_L, init[0]), label(prog.actions_R, init[1]), prog.mask, prog.task, prog.initial
    )
    return Demonstration(demo.id, demo.clouds, program, demo.proprio, dict(demo.provenance),
                         dict(demo.object_poses), demo.task)


# --------------------------------------------------------------------------- transforms


def _check_transform(demo: Demonstration, object_id: int, g: RigidTransform, ws: Workspace):
    if object_id not in demo.clouds:
        raise UnknownObject(f"object {object_id} not in demonstration {demo.id}")
    region = ws.regions.get(object_id)
    if region is None:
        raise UnknownObject(f"workspace has no placement region for object {object_id}")
    c = g.apply(demo.clouds[object_id].centroid())
    if not region.contains(c):
        raise OutOfWorkspace(f"object {object_id} centroid {c[:2].round(4).tolist()} leaves its region")
    for a in demo.program.all_actions():
        if a.object_id == object_id:
            p = g.apply(a.position)
            if not ws.reachable(a.chirality, p):
                raise OutOfWorkspace(
                    f"keyframe {a.k} ({a.chirality}) at {p.round(3).tolist()} exceeds the {ws.span_m} m arm span"
                )


def transform_demo(demo: Demonstration, object_id: int, g: RigidTransform, ws: Workspace) -> Demonstration:
    """Move one object and every keypose associated with it by ``g``."""
    _check_transform(demo, object_id, g, ws)

    def move(a: KeyframeAction) -> KeyframeAction:
        if a.object_id != object_id:
            return a
        return a.replace(position=g.apply(a.position), rotation=g.rotation @ a.rotation)

    clouds = dict(demo.clouds)
    clouds[object_id] = demo.clouds[object_id].transformed(g)
    poses = dict(demo.object_poses)
    if object_id in poses:
        poses[object_id] = g @ poses[object_id]
    prov = dict(demo.provenance)
    steps = list(prov.get("transforms", []))
    steps.append({"object": object_id, "g": g.to_list()})
    prov.update(kind="geo_transform", parent=prov.get("parent", demo.id), transforms=steps)
    return Demonstration(demo.id, clouds, demo.program.map_actions(move), demo.proprio.copy(), prov,
                         poses, demo.task)


def _sample_one(region: Region, centroid, rng: np.random.Generator) -> RigidTransform:
    hx, hy = region.half_extents
    cx, cy = region.center
    target = np.array([cx + rng.uniform(-hx, hx), cy + rng.uniform(-hy, hy)])
    lo, hi = region.yaw_range
    yaw = rng.uniform(lo, hi)
    c = np.asarray(centroid, dtype=float)
    shift = np.array([target[0] - c[0], target[1] - c[1], 0.0])
    return RigidTransform.yaw_about(yaw, c, shift)


def sample_transforms(ws: Workspace, object_id: int, n: int, seed: int, centroid=(0.0, 0.0, 0.0)) -> list[RigidTransform]:
    """``n`` planar transforms taking ``centroid`` to uniform targets in the region.

    Each is a yaw about ``centroid`` followed by a table-plane translation.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    region = ws.regions.get(object_id)
    if region is None:
        raise UnknownObject(f"workspace has no placement region for object {object_id}")
    region.validate()
    rng = np.random.default_rng(seed)
    return [_sample_one(region, centroid, rng) for _ in range(n)]


def _overlap_xy(a: PointCloud, b: PointCloud) -> bool:
    amin, amax = a.bounds()
    bmin, bmax = b.bounds()
    return bool(np.all(amin[:2] <= bmax[:2]) and np.all(bmin[:2] <= amax[:2]))


def clouds_collide(clouds: dict[int, PointCloud]) -> bool:
    ids = sorted(clouds)
    return any(
        _overlap_xy(clouds[i], clouds[j]) for n, i in enumerate(ids) for j in ids[n + 1 :]
    )


def sample_variant(demo: Demonstration, ws: Workspace, rng: np.random.Generator,
                   retry_cap: int = RETRY_CAP) -> dict[int, RigidTransform]:
    """Per-object transforms for one valid copy of ``demo`` (rejection sampling)."""
    ids = sorted(demo.clouds)
    for _ in range(retry_cap):
        gs = {}
        cur = demo
        try:
            for oid in ids:
                region = ws.regions.get(oid)
                if region is None:
                    raise UnknownObject(f"workspace has no placement region for object {oid}")
                g = _sample_one(region, demo.clouds[oid].centroid(), rng)
                cur = transform_demo(cur, oid, g, ws)
                gs[oid] = g
        except OutOfWorkspace:
            continue
        if len(ids) > 1 and clouds_collide(cur.clouds):
            continue
        return gs
    raise RetryExhausted(f"no valid placement for demonstration {demo.id} after {retry_cap} attempts")


def apply_variant(demo: Demonstration, gs: dict[int, RigidTransform], ws: Workspace, new_id: str) -> Demonstration:
    cur = demo
    for oid in sorted(gs):
        cur = transform_demo(cur, oid, gs[oid], ws)
    cur.id = new_id
    cur.provenance["parent"] = demo.id
    return cur


class Dataset(Sequence):
    """Seed demonstrations plus recorded transforms, materialised on access."""

    def __init__(self, seeds: list[Demonstration], records: list[tuple[int, dict]],
                 workspace: Workspace | None = None, seed: int = 0, factor: int = 1):
        self.seeds = list(seeds)
        self.records = list(records)
        self.workspace = workspace
        self.seed = seed
        self.factor = factor

    @classmethod
    def from_demos(cls, demos: list[Demonstration]) -> "Dataset":
        return cls(demos, [(i, {}) for i in range(len(demos))])

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        si, gs = self.records[i]
        parent = self.seeds[si]
        if not gs:
            return parent
        return apply_variant(parent, gs, self.workspace, self.demo_id(i))

    def demo_id(self, i) -> str:
        si, gs = self.records[i]
        if not gs:
            return self.seeds[si].id
        return f"{self.seeds[si].id}-p{i:06d}"

    def parent_of(self, i) -> Demonstration:
        return self.seeds[self.records[i][0]]

    def digest(self) -> str:
        h = hashlib.sha256()
        for i in range(len(self)):
            h.update(self[i].to_bytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "factor": self.factor,
            "workspace_hash": None if self.workspace is None else self.workspace.digest(),
            "workspace": None if self.workspace is None else self.workspace.to_json(),
            "demos": [
                {"id": self.demo_id(i), "file": f"demo_{i:06d}.ydemo", "parent": self.parent_of(i).id}
                for i in range(len(self))
            ],
        }

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        for i, entry in enumerate(manifest["demos"]):
            (d / entry["file"]).write_bytes(self[i].to_bytes())
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "Dataset":
        d = Path(directory)
        mpath = d / "manifest.json"
        if mpath.exists():
            try:
                manifest = json.loads(mpath.read_text())
            except json.JSONDecodeError as exc:
                raise ParseError(f"manifest.json: {exc}", line=exc.lineno) from None
            files = [d / e["file"] for e in manifest.get("demos", [])]
            ws = manifest.get("workspace")
            workspace = Workspace.from_json(ws) if ws else None
            seed, factor = manifest.get("seed", 0), manifest.get("factor", 1)
        else:
            files = sorted(d.glob("*.ydemo"))
            workspace, seed, factor = None, 0, 1
        missing = [str(f) for f in files if not f.exists()]
        if missing:
            raise DatasetError(f"dataset {d} lists missing files: {missing[:3]}")
        demos = [Demonstration.load(f) for f in files]
        ds = cls.from_demos(demos)
        ds.workspace, ds.seed, ds.factor = workspace, seed, factor
        return ds


def proliferate(seeds: list[Demonstration], factor: int, ws: Workspace, seed: int,
                retry_cap: int = RETRY_CAP) -> Dataset:
    """Each seed followed by ``factor - 1`` transformed copies.

    Copy ``c`` of seed ``i`` draws from its own stream keyed by
    ``(seed, i, c)``, so the result does not depend on generation order.
    """
    if factor < 1:
        raise ValueError("factor must be at least 1")
    ws.validate()
    records: list[tuple[int, dict]] = []
    for i, demo in enumerate(seeds):
        records.append((i, {}))
        for c in range(1, factor):
            rng = np.random.default_rng([seed, i, c])
            records.append((i, sample_variant(demo, ws, rng, retry_cap)))
    return Dataset(seeds, records, ws, seed, factor)
