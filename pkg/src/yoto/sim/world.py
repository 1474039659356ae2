"""Two-arm kinematic world: rigid bodies, simple mechanisms, program replay.

Arms are point end-effectors with a spherical reach about fixed bases. There
are no dynamics: bodies move only when carried, driven through a mechanism,
or pushed (flaps). Violations are recorded as flags so failed trials can
still be scored.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..geometry import TOOL_DOWN, PointCloud, RigidTransform, exp_so3, log_so3, rot_z
from ..keyframes import KeyframeAction, KeyframeProgram, MotionMask, ReorganizedActions, recompose

SPAN_M = 0.88
ATTACH_RADIUS = 0.05
GRIPPER_RADIUS = 0.04
COLLISION_MARGIN = 0.005
COORD_TOL = 0.03
SLIP_TOL = 0.03
SCREW_SLIP_TOL = 0.02
WAYPOINTS = 20

ARM_BASES = {"L": np.array([0.0, 0.25, 0.0]), "R": np.array([0.0, -0.25, 0.0])}
HOME = {
    "L": RigidTransform(TOOL_DOWN, [0.25, 0.25, 0.30]),
    "R": RigidTransform(TOOL_DOWN, [0.25, -0.25, 0.30]),
}


def grip_rot(yaw: float) -> np.ndarray:
    """Top-down gripper orientation turned by ``yaw`` about the vertical."""
    return rot_z(yaw) @ TOOL_DOWN


# --------------------------------------------------------------------------- bodies


@dataclass
class Site:
    kind: str  # carry | drive | brace | screw | place
    local: np.ndarray

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=float).reshape(3)


@dataclass(eq=False)
class Body:
    name: str
    object_id: int
    kind: str  # box | cylinder
    dims: np.ndarray  # full extents along local x, y, z
    local_cloud: np.ndarray
    sites: dict = field(default_factory=dict)
    solid: bool = True
    support: bool = False
    two_handed: bool = False
    parent: str | None = None
    rel: RigidTransform | None = None
    pose: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        self.dims = np.asarray(self.dims, dtype=float).reshape(3)

    def site_world(self, name: str) -> np.ndarray:
        return self.pose.apply(self.sites[name].local)

    def inside(self, p, margin: float = 0.0, pose: RigidTransform | None = None) -> bool:
        pose = pose or self.pose
        q = pose.inverse().apply(p)
        h = self.dims / 2 - margin
        if self.kind == "cylinder":
            return bool(np.hypot(q[0], q[1]) < h[0] and abs(q[2]) < h[2])
        return bool(np.all(np.abs(q) < h))

    def corners(self, pose: RigidTransform | None = None) -> np.ndarray:
        pose = pose or self.pose
        h = self.dims / 2
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return pose.apply(signs * h)


def box_surface(dims, n: int, rng: np.random.Generator, open_top: bool = False) -> np.ndarray:
    """Points uniformly distributed over the faces of a centred box."""
    d = np.asarray(dims, dtype=float)
    faces = []  # (normal axis, sign)
    for ax in range(3):
        for s in (-1, 1):
            if open_top and ax == 2 and s == 1:
                continue
            faces.append((ax, s))
    areas = np.array([np.prod(np.delete(d, ax)) for ax, _ in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) - 0.5) * d
    for i, (ax, s) in enumerate(faces):
        sel = which == i
        pts[sel, ax] = s * d[ax] / 2
    return pts


def cylinder_surface(radius: float, height: float, n: int, rng: np.random.Generator) -> np.ndarray:
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    th = rng.uniform(0, 2 * np.pi, n)
    r = np.where(which == 0, radius, radius * np.sqrt(rng.random(n)))
    z = np.where(which == 0, rng.uniform(-height / 2, height / 2, n),
                 np.where(which == 1, height / 2, -height / 2))
    return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)


def surface_area(kind: str, dims) -> float:
    d = np.asarray(dims, dtype=float)
    if kind == "cylinder":
        r = d[0] / 2
        return 2 * np.pi * r * d[2] + 2 * np.pi * r**2
    return 2 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])


# --------------------------------------------------------------------------- mechanisms


@dataclass
class Prismatic:
    """Drawer slide: ``body`` translates along ``axis`` (parent frame) by q in [0, travel]."""

    body: str
    axis: np.ndarray
    travel: float
    rest: RigidTransform
    q: float = 0.0
    engaged: dict = field(default_factory=dict)

    def rel(self) -> RigidTransform:
        return RigidTransform(self.rest.rotation, self.rest.translation + self.axis * self.q)

    def engage(self, scene, arm, p):
        self.engaged[arm] = (np.array(p), self.q)

    def release(self, arm):
        self.engaged.pop(arm, None)

    def update(self, scene, arms, log):
        body = scene.bodies[self.body]
        parent = scene.bodies[body.parent]
        axis_w = parent.pose.rotation @ self.axis
        for arm, (p0, q0) in list(self.engaged.items()):
            d = arms[arm].pos - p0
            along = float(d @ axis_w)
            if np.linalg.norm(d - along * axis_w) > SLIP_TOL:
                self.engaged.pop(arm)
                log("slip", arm, self.body)
                continue
            self.q = float(np.clip(q0 + along, 0.0, self.travel))
        body.rel = self.rel()

    def state(self):
        return {"q": self.q}


@dataclass
class Screw:
    """Threaded cap: twisting past ``unthread_angle`` frees it from its parent."""

    body: str
    rest: RigidTransform
    threaded: bool = True
    twist: float = 0.0
    unthread_angle: float = np.pi / 2
    lead: float = 0.0072  # metres of rise per radian of unscrewing
    engaged: dict = field(default_factory=dict)

    def rel(self) -> RigidTransform:
        rise = np.array([0.0, 0.0, self.lead * abs(self.twist)])
        return RigidTransform(rot_z(self.twist) @ self.rest.rotation, self.rest.translation + rise)

    def engage(self, scene, arm, p):
        self.engaged[arm] = (np.array(p), scene.arms[arm].rot.copy(), self.twist)

    def release(self, arm):
        self.engaged.pop(arm, None)

    def update(self, scene, arms, log):
        body = scene.bodies[self.body]
        if not self.threaded:
            return
        parent = scene.bodies[body.parent]
        axis_w = parent.pose.rotation[:, 2]
        for arm, (p0, R0, tw0) in list(self.engaged.items()):
            if np.linalg.norm(arms[arm].pos - p0) > SCREW_SLIP_TOL:
                self.engaged.pop(arm)
                log("slip", arm, self.body)
                continue
            self.twist = tw0 + float(log_so3(arms[arm].rot @ R0.T) @ axis_w)
            body.rel = self.rel()
            if abs(self.twist) >= self.unthread_angle:
                self.threaded = False
                self.engaged.pop(arm)
                scene.resolve()
                scene.start_carry(arm, self.body, arms[arm])
                log("unthread", arm, self.body)
                return
        body.rel = self.rel()

    def state(self):
        return {"threaded": self.threaded, "twist": self.twist}


@dataclass
class Flap:
    """Box flap hinged on an edge of its parent; pushed open by any gripper near its free edge."""

    body: str
    hinge: np.ndarray  # parent-frame point on the hinge line
    inward: np.ndarray  # parent-frame direction from hinge to free edge when closed
    length: float
    width: float
    thickness: float = 0.004
    angle: float = 0.0
    contact: float = 0.03

    def __post_init__(self):
        self.hinge = np.asarray(self.hinge, dtype=float)
        self.inward = np.asarray(self.inward, dtype=float)
        self.up = np.array([0.0, 0.0, 1.0])
        self.edge = np.cross(self.up, self.inward)
        self.axis = np.cross(self.inward, self.up)

    def dims(self) -> np.ndarray:
        return np.abs(self.inward) * self.length + np.abs(self.edge) * self.width + self.up * self.thickness

    def direction(self, angle=None) -> np.ndarray:
        a = self.angle if angle is None else angle
        return np.cos(a) * self.inward + np.sin(a) * self.up

    def rel(self) -> RigidTransform:
        R = _axis_angle(self.axis, self.angle)
        centre = self.hinge + self.direction() * self.length / 2 + self.up * self.thickness / 2
        return RigidTransform(R, centre)

    def tip_distance(self, parent_pose: RigidTransform, p) -> float:
        v = parent_pose.inverse().apply(p) - self.hinge
        e = float(v @ self.edge)
        vp = v - e * self.edge
        gap = max(abs(e) - self.width / 2, 0.0)
        return float(np.hypot(np.linalg.norm(vp - self.direction() * self.length), gap))

    def update(self, scene, arms, log):
        body = scene.bodies[self.body]
        parent_pose = scene.bodies[body.parent].pose
        for arm in arms:
            p = arms[arm].pos
            if self.tip_distance(parent_pose, p) > self.contact:
                continue
            v = parent_pose.inverse().apply(p) - self.hinge
            vp = v - (v @ self.edge) * self.edge
            r = np.linalg.norm(vp)
            if not 0.6 * self.length <= r <= 1.4 * self.length:
                continue
            theta = float(np.arctan2(vp @ self.up, vp @ self.inward))
            if theta > self.angle:
                self.angle = min(theta, np.pi)
        body.rel = self.rel()

    def state(self):
        return {"angle": self.angle}


def _axis_angle(axis, angle) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


# --------------------------------------------------------------------------- scene


@dataclass
class ArmState:
    pos: np.ndarray
    rot: np.ndarray
    gripper: int = 1

    def pose(self) -> RigidTransform:
        return RigidTransform(self.rot, self.pos)


@dataclass(eq=False)
class Snapshot:
    poses: dict
    parents: dict
    carried: dict
    braces: dict
    coholds: dict
    mech: dict
    arms: dict


class Scene:
    def __init__(self, task: str, bodies: list[Body], mechanisms: list, span_m: float = SPAN_M,
                 arm_bases=None, home=None):
        self.task = task
        self.bodies = {b.name: b for b in bodies}
        self.mechanisms = list(mechanisms)
        self.span_m = span_m
        self.arm_bases = {k: np.array(v, dtype=float) for k, v in (arm_bases or ARM_BASES).items()}
        self.home = dict(home or HOME)
        self.arms = {a: ArmState(g.translation.copy(), g.rotation.copy()) for a, g in self.home.items()}
        self.carried: dict[str, str | None] = {"L": None, "R": None}
        self.grip_offset: dict[str, RigidTransform] = {}
        self.braces: dict[str, tuple[str, np.ndarray]] = {}
        self.coholds: dict[str, tuple[str, float]] = {}  # body -> (holder arm, arm distance)
        self.resolve()

    # ---- structure

    def copy(self) -> "Scene":
        return copy.deepcopy(self)

    def object_ids(self) -> list[int]:
        return sorted({b.object_id for b in self.bodies.values()})

    def object_bodies(self, oid: int) -> list[Body]:
        return [b for b in self.bodies.values() if b.object_id == oid]

    def anchor(self, oid: int) -> Body:
        """The object's root body (its pose is the object pose)."""
        return self.object_bodies(oid)[0]

    def object_pose(self, oid: int) -> RigidTransform:
        return self.anchor(oid).pose

    def object_cloud(self, oid: int) -> PointCloud:
        pts = np.concatenate([b.pose.apply(b.local_cloud) for b in self.object_bodies(oid)], axis=0)
        return PointCloud(pts, np.full(len(pts), oid, dtype=np.uint32))

    def clouds(self) -> dict[int, PointCloud]:
        return {oid: self.object_cloud(oid) for oid in self.object_ids()}

    def transform_object(self, oid: int, g: RigidTransform) -> None:
        for b in self.object_bodies(oid):
            if b.parent is None or self.bodies[b.parent].object_id != oid:
                b.pose = g @ b.pose
                if b.parent is not None:
                    b.rel = self.bodies[b.parent].pose.inverse() @ b.pose
        self.resolve()

    def mechanism_for(self, body: str):
        for m in self.mechanisms:
            if m.body == body:
                return m
        return None

    def descendants(self, name: str) -> set[str]:
        out = {name}
        grew = True
        while grew:
            grew = False
            for b in self.bodies.values():
                if b.parent in out and b.name not in out:
                    out.add(b.name)
                    grew = True
        return out

    def resolve(self) -> None:
        done: set[str] = set()

        def visit(b: Body):
            if b.name in done:
                return
            if b.parent is not None:
                p = self.bodies[b.parent]
                visit(p)
                b.pose = p.pose @ b.rel
            done.add(b.name)

        for b in self.bodies.values():
            visit(b)

    # ---- grasping

    def start_carry(self, arm: str, name: str, state: ArmState) -> None:
        b = self.bodies[name]
        b.parent, b.rel = None, None
        self.carried[arm] = name
        self.grip_offset[arm] = state.pose().inverse() @ b.pose

    def nearest_site(self, p, radius: float, exclude=()):
        best = None
        for b in self.bodies.values():
            if b.name in exclude:
                continue
            for sname, s in b.sites.items():
                if s.kind == "place":
                    continue
                d = float(np.linalg.norm(b.pose.apply(s.local) - p))
                if d <= radius and (best is None or d < best[0]):
                    best = (d, b.name, sname, s.kind)
        return best

    def close(self, arm: str, log, radius: float = ATTACH_RADIUS) -> None:
        st = self.arms[arm]
        hit = self.nearest_site(st.pos, radius)
        if hit is None:
            log("close_empty", arm, None)
            return
        _, name, _, kind = hit
        other = "R" if arm == "L" else "L"
        if kind == "carry":
            if self.carried[other] == name:
                d = float(np.linalg.norm(st.pos - self.arms[other].pos))
                self.coholds[name] = (arm, d)
                log("cohold", arm, name)
            else:
                self.start_carry(arm, name, st)
                log("attach", arm, name)
        elif kind == "screw":
            m = self.mechanism_for(name)
            if isinstance(m, Screw) and m.threaded:
                m.engage(self, arm, st.pos)
                log("engage", arm, name)
            else:
                self.start_carry(arm, name, st)
                log("attach", arm, name)
        elif kind == "drive":
            self.mechanism_for(name).engage(self, arm, st.pos)
            log("engage", arm, name)
        elif kind == "brace":
            self.braces[arm] = (name, st.pos.copy())
            log("brace", arm, name)

    def release_body(self, name: str) -> str | None:
        """Leave ``name`` where it is, parented to the smallest support under it."""
        b = self.bodies[name]
        c = b.pose.translation
        skip = self.descendants(name)
        best = None
        for s in self.bodies.values():
            if not s.support or s.name in skip:
                continue
            q = s.pose.inverse().apply(c)
            h = s.dims / 2
            if abs(q[0]) <= h[0] and abs(q[1]) <= h[1] and q[2] >= -h[2]:
                vol = float(np.prod(s.dims))
                if best is None or vol < best[0]:
                    best = (vol, s.name)
        if best is None:
            b.parent, b.rel = None, None
        else:
            b.parent = best[1]
            b.rel = self.bodies[best[1]].pose.inverse() @ b.pose
        return b.parent

    def open(self, arm: str, log) -> None:
        name = self.carried.get(arm)
        if name is not None:
            self.carried[arm] = None
            self.coholds.pop(name, None)
            parent = self.release_body(name)
            log("detach", arm, name, parent=parent)
        for body, (holder, _) in list(self.coholds.items()):
            if holder == arm:
                self.coholds.pop(body)
                log("uncohold", arm, body)
        for m in self.mechanisms:
            if isinstance(m, (Prismatic, Screw)) and arm in m.engaged:
                m.release(arm)
                log("disengage", arm, m.body)
        if self.braces.pop(arm, None) is not None:
            log("unbrace", arm, None)

    # ---- per-waypoint update

    def step(self, log) -> None:
        for arm, name in self.carried.items():
            if name is None:
                continue
            b = self.bodies[name]
            if b.two_handed and name not in self.coholds:
                # a single hand cannot lift it; the grasp slides off once the arm moves away
                anchor = b.pose @ self.grip_offset[arm]
                if np.linalg.norm(self.arms[arm].pos - anchor.translation) > SLIP_TOL:
                    self.carried[arm] = None
                    self.release_body(name)
                    log("slip", arm, name)
                continue
            b.pose = self.arms[arm].pose() @ self.grip_offset[arm]
        for name, (holder, d0) in list(self.coholds.items()):
            d = float(np.linalg.norm(self.arms["L"].pos - self.arms["R"].pos))
            if abs(d - d0) > COORD_TOL:
                self.coholds.pop(name)
                for arm in ("L", "R"):
                    if self.carried[arm] == name:
                        self.carried[arm] = None
                self.release_body(name)
                log("coordination_failure", holder, name)
        self.resolve()
        for m in self.mechanisms:
            m.update(self, self.arms, log)
        self.resolve()
        for arm, (name, p0) in list(self.braces.items()):
            if np.linalg.norm(self.arms[arm].pos - p0) > SLIP_TOL:
                self.braces.pop(arm)
                log("unbrace", arm, name)

    def engaged_with(self, arm: str) -> set[str]:
        names: set[str] = set()
        if self.carried.get(arm):
            names |= self.descendants(self.carried[arm])
        for body, (holder, _) in self.coholds.items():
            if holder == arm:
                names |= self.descendants(body)
        for m in self.mechanisms:
            if isinstance(m, (Prismatic, Screw)) and arm in m.engaged:
                names |= self.descendants(m.body)
        if arm in self.braces:
            names.add(self.braces[arm][0])
        return names

    def collisions(self) -> list[tuple[str, str]]:
        out = []
        for arm, st in self.arms.items():
            skip = self.engaged_with(arm)
            for b in self.bodies.values():
                if b.solid and b.name not in skip and b.inside(st.pos, COLLISION_MARGIN):
                    out.append((arm, b.name))
        if np.linalg.norm(self.arms["L"].pos - self.arms["R"].pos) < 2 * GRIPPER_RADIUS:
            out.append(("LR", "arms"))
        return out

    def snapshot(self) -> Snapshot:
        return Snapshot(
            poses={n: b.pose for n, b in self.bodies.items()},
            parents={n: b.parent for n, b in self.bodies.items()},
            carried=dict(self.carried),
            braces={a: v[0] for a, v in self.braces.items()},
            coholds={n: v[0] for n, v in self.coholds.items()},
            mech={m.body: m.state() for m in self.mechanisms},
            arms={a: (s.pos.copy(), s.rot.copy(), s.gripper) for a, s in self.arms.items()},
        )


# --------------------------------------------------------------------------- replay


@dataclass
class ReplayConfig:
    waypoints_per_segment: int = WAYPOINTS
    attach_radius: float = ATTACH_RADIUS


@dataclass(eq=False)
class KeyframeRecord:
    k: int
    commanded: tuple[KeyframeAction, KeyframeAction]
    moving: tuple[int, int]
    waypoints: np.ndarray  # (W, 2, 3) end-effector positions
    events: list
    violations: list
    snapshot: Snapshot


@dataclass(eq=False)
class ExecutionTrace:
    task: str
    initial: Snapshot
    scene: Scene | None = None
    records: list[KeyframeRecord] = field(default_factory=list)
    substeps: list[bool] | None = None
    length: int | None = None

    @property
    def violations(self) -> list[dict]:
        return [v for r in self.records for v in r.violations]

    @property
    def events(self) -> list[dict]:
        return [e for r in self.records for e in r.events]

    def snapshot_at(self, k: int) -> Snapshot:
        return self.initial if k == 0 else self.records[k - 1].snapshot

    def violations_through(self, k: int) -> list[dict]:
        return [v for r in self.records[:k] for v in r.violations]

    def to_jsonl(self) -> list[dict]:
        rows = []
        for r in self.records:
            for w, pts in enumerate(r.waypoints):
                rows.append({"k": r.k, "w": w + 1, "L": pts[0].tolist(), "R": pts[1].tolist(),
                             "moving": list(r.moving)})
        return rows


def as_program(program, mask: MotionMask | None = None) -> KeyframeProgram:
    if isinstance(program, KeyframeProgram):
        return program
    if isinstance(program, ReorganizedActions):
        if mask is None:
            raise ValueError("reorganized actions need their motion mask")
        return recompose(program, mask)
    if isinstance(program, tuple) and len(program) == 2:
        return as_program(*program)
    raise TypeError(f"cannot replay {type(program).__name__}")


def replay(scene: Scene, program, mask: MotionMask | None = None,
           cfg: ReplayConfig | None = None) -> ExecutionTrace:
    """Execute a keyframe program; the input scene is left untouched."""
    cfg = cfg or ReplayConfig()
    prog = as_program(program, mask)
    sc = scene.copy()
    trace = ExecutionTrace(sc.task, sc.snapshot(), scene)
    W = cfg.waypoints_per_segment
    for k, ((cl, cr), aL, aR) in enumerate(zip(prog.mask.entries, prog.actions_L, prog.actions_R), start=1):
        events: list[dict] = []
        violations: list[dict] = []
        seen: set = set()

        def log(kind, arm, body, **extra):
            events.append({"k": k, "type": kind, "arm": arm, "body": body, **extra})

        def flag(kind, arm, body=None):
            if (kind, arm, body) not in seen:
                seen.add((kind, arm, body))
                violations.append({"k": k, "kind": kind, "arm": arm, "body": body})

        targets = {"L": aL, "R": aR}
        moving = {"L": bool(cl), "R": bool(cr)}
        start = {a: (s.pos.copy(), s.rot.copy()) for a, s in sc.arms.items()}
        rel = {}
        for a in ("L", "R"):
            if moving[a]:
                rel[a] = log_so3(start[a][1].T @ targets[a].rotation)
        pts = np.zeros((W, 2, 3))
        for w in range(1, W + 1):
            s = w / W
            for a in ("L", "R"):
                if not moving[a]:
                    continue
                p = start[a][0] + s * (targets[a].position - start[a][0])
                if np.linalg.norm(p - sc.arm_bases[a]) > sc.span_m:
                    flag("reach", a)
                    continue
                st = sc.arms[a]
                st.pos = p
                st.rot = start[a][1] @ exp_so3(s * rel[a]) if w < W else np.array(targets[a].rotation)
            sc.step(log)
            for arm, body in sc.collisions():
                flag("arm_collision" if body == "arms" else "collision", arm, body)
            pts[w - 1, 0] = sc.arms["L"].pos
            pts[w - 1, 1] = sc.arms["R"].pos
        for a in ("L", "R"):
            g = int(targets[a].gripper)
            if not moving[a] or g == sc.arms[a].gripper:
                continue
            sc.arms[a].gripper = g
            if g == 0:
                sc.close(a, log, cfg.attach_radius)
            else:
                sc.open(a, log)
        sc.step(log)
        trace.records.append(
            KeyframeRecord(k, (aL, aR), (int(cl), int(cr)), pts, events, violations, sc.snapshot())
        )
    return trace
