"""Synthetic analogues of the five bimanual tasks.

Each task builds a nominal scene from primitive shapes, knows how to script an
expert keyframe program for any placement of its objects, and lists the
geometric substep checks used for scoring.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..geometry import TOOL_DOWN, RigidTransform, yaw_of
from ..keyframes import KeyframeAction, KeyframeProgram, MotionMask
from ..proliferation import (
    Demonstration,
    Region,
    Workspace,
    _sample_one,
    clouds_collide,
    initial_proprioception,
)
from .world import (
    ARM_BASES,
    HOME,
    SPAN_M,
    Body,
    Flap,
    Prismatic,
    Scene,
    Screw,
    Site,
    Snapshot,
    _axis_angle,
    box_surface,
    cylinder_surface,
    grip_rot,
    surface_area,
)

UP = np.array([0.0, 0.0, 1.0])
TASK_NAMES = ("pull_drawer", "pour_water", "unscrew_bottle", "uncover_lid", "open_box")
PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class Substep:
    name: str
    arms: str
    check_k: int
    check: Callable[[Snapshot, Scene], bool]


@dataclass
class TaskSpec:
    name: str
    sync: bool
    keyframes: int
    substeps: list[Substep]
    workspace: Workspace
    build: Callable[[np.random.Generator, int], Scene] = field(repr=False)
    expert: Callable[[Scene], KeyframeProgram] = field(repr=False)

    @property
    def n_substeps(self) -> int:
        return len(self.substeps)


# --------------------------------------------------------------------------- helpers


def _split_counts(weights, n: int) -> list[int]:
    w = np.asarray(weights, dtype=float)
    raw = w / w.sum() * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _clouds_for(parts, n_points, rng):
    """Sample ``n_points`` across ``parts`` = [(kind, dims, open_top)] by surface area."""
    counts = _split_counts([surface_area(k, d) for k, d, _ in parts], n_points)
    out = []
    for (kind, dims, open_top), n in zip(parts, counts):
        if kind == "cylinder":
            out.append(cylinder_surface(dims[0] / 2, dims[2], n, rng))
        else:
            out.append(box_surface(dims, n, rng, open_top))
    return out


def _T(x=0.0, y=0.0, z=0.0) -> RigidTransform:
    return RigidTransform(np.eye(3), [x, y, z])


def tilt(pose: RigidTransform) -> float:
    """Angle between a body's z axis and the world vertical."""
    return float(np.arccos(np.clip(pose.rotation[2, 2], -1.0, 1.0)))


def bottom_z(body: Body, pose: RigidTransform) -> float:
    return float(body.corners(pose)[:, 2].min())


def _hdist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a)[:2] - np.asarray(b)[:2]))


class _Script:
    """Accumulates keyframes; arms left out of a step hold their previous action."""

    def __init__(self):
        self.prev = {a: KeyframeAction(0, 0.0, a, HOME[a].translation, HOME[a].rotation, 1, None)
                     for a in ("L", "R")}
        self.initial = (self.prev["L"], self.prev["R"])
        self.seq = {"L": [], "R": []}
        self.movers = []

    def step(self, L: dict | None = None, R: dict | None = None):
        k = len(self.movers) + 1
        t = float(k)
        for arm, spec in (("L", L), ("R", R)):
            p = self.prev[arm]
            if spec is None:
                a = p.replace(k=k, timestamp_s=t)
            else:
                a = KeyframeAction(
                    k, t, arm,
                    np.array(spec.get("pos", p.position), dtype=float),
                    np.array(spec.get("rot", p.rotation), dtype=float),
                    spec.get("grip", p.gripper),
                    spec.get("obj", p.object_id),
                )
            self.seq[arm].append(a)
            self.prev[arm] = a
        self.movers.append("LR" if L is not None and R is not None else ("L" if L is not None else "R"))

    def program(self, task: str) -> KeyframeProgram:
        return KeyframeProgram(self.seq["L"], self.seq["R"], MotionMask.from_movers(self.movers), task,
                               self.initial)


def _workspace(regions: dict[int, Region]) -> Workspace:
    return Workspace(regions, {k: v.copy() for k, v in ARM_BASES.items()}, SPAN_M)


# --------------------------------------------------------------------------- pull drawer


def _build_pull_drawer(rng, n_points):
    cab_d, tray_d, item_d = (0.22, 0.26, 0.15), (0.20, 0.22, 0.06), (0.06, 0.05, 0.04)
    c_cab, c_tray = _clouds_for([("box", cab_d, False), ("box", tray_d, True)], n_points, rng)
    (c_item,) = _clouds_for([("box", item_d, False)], n_points, rng)
    rest = _T(0, 0, -0.035)
    cabinet = Body("cabinet", 0, "box", cab_d, c_cab, {"brace": Site("brace", (-0.11, 0.08, 0.04))},
                   support=True, pose=_T(0.56, -0.16, 0.075))
    tray = Body("tray", 0, "box", tray_d, c_tray,
                {"handle": Site("drive", (-0.125, 0, 0.01)), "place": Site("place", (-0.035, 0, 0.01))},
                solid=False, support=True, parent="cabinet", rel=rest)
    item = Body("item", 1, "box", item_d, c_item, {"grasp": Site("carry", (0, 0, 0.02))},
                pose=_T(0.34, 0.18, 0.02))
    slide = Prismatic("tray", np.array([-1.0, 0.0, 0.0]), 0.14, rest)
    return Scene("pull_drawer", [cabinet, tray, item], [slide])


def _expert_pull_drawer(scene: Scene) -> KeyframeProgram:
    b = scene.bodies
    cab, tray, item = b["cabinet"], b["tray"], b["item"]
    slide = scene.mechanism_for("tray")
    Rc = grip_rot(yaw_of(cab.pose.rotation))
    Ri = grip_rot(yaw_of(item.pose.rotation))
    axis = cab.pose.rotation @ slide.axis
    handle = tray.site_world("handle")
    brace = cab.site_world("brace")
    top = item.site_world("grasp")
    pulled = cab.pose @ RigidTransform(slide.rest.rotation, slide.rest.translation + slide.axis * slide.travel)
    place = pulled.apply(tray.sites["place"].local)
    s = _Script()
    s.step(R=dict(pos=handle + 0.08 * axis, rot=Rc, grip=1, obj=0))
    s.step(R=dict(pos=handle, grip=0))
    s.step(L=dict(pos=brace, rot=Rc, grip=0, obj=0))
    s.step(R=dict(pos=handle + slide.travel * axis))
    s.step(L=dict(pos=top + 0.10 * UP, rot=Ri, grip=1, obj=1))
    s.step(L=dict(pos=top, grip=0))
    s.step(L=dict(pos=place + 0.12 * UP, obj=0))
    s.step(L=dict(pos=place, grip=1))
    s.step(L=dict(pos=brace, rot=Rc, grip=0))
    s.step(R=dict(pos=handle))
    return s.program("pull_drawer")


def _pull_drawer_substeps():
    travel = 0.14

    def braced(snap, sc):
        return snap.braces.get("L") == "cabinet"

    def pulled(snap, sc):
        return snap.mech["tray"]["q"] >= travel - 0.01

    def picked(snap, sc):
        z0 = sc.bodies["item"].pose.translation[2]
        return snap.carried["L"] == "item" and snap.poses["item"].translation[2] >= z0 + 0.05

    def placed(snap, sc):
        return snap.carried["L"] is None and snap.parents["item"] == "tray"

    def pushed(snap, sc):
        return snap.mech["tray"]["q"] <= 0.01 and snap.parents["item"] == "tray"

    return [
        Substep("stabilize the drawer", "L", 4, braced),
        Substep("pull the drawer", "R", 4, pulled),
        Substep("pick up the object", "L", 7, picked),
        Substep("place the object into the drawer", "L", 8, placed),
        Substep("stabilize the drawer", "L", 10, braced),
        Substep("push the drawer", "R", 10, pushed),
    ]


# --------------------------------------------------------------------------- pour water

_MEET_LOCAL = np.array([0.02, -0.17, 0.07])  # mug centre relative to the bottle when pouring
_POUR_TILT = np.deg2rad(100.0)


def _build_pour_water(rng, n_points):
    bottle_d, mug_d = (0.07, 0.07, 0.20), (0.08, 0.08, 0.10)
    (c_b,) = _clouds_for([("cylinder", bottle_d, False)], n_points, rng)
    (c_m,) = _clouds_for([("cylinder", mug_d, False)], n_points, rng)
    bottle = Body("bottle", 0, "cylinder", bottle_d, c_b,
                  {"grasp": Site("carry", (-0.035, 0, 0)), "mouth": Site("place", (0, 0, 0.10))},
                  pose=_T(0.42, 0.15, 0.10))
    mug = Body("mug", 1, "cylinder", mug_d, c_m, {"grasp": Site("carry", (-0.04, 0, 0))},
               pose=_T(0.42, -0.15, 0.05))
    return Scene("pour_water", [bottle, mug], [])


def _expert_pour_water(scene: Scene) -> KeyframeProgram:
    bottle, mug = scene.bodies["bottle"], scene.bodies["mug"]
    Rb = grip_rot(yaw_of(bottle.pose.rotation))
    Rm = grip_rot(yaw_of(mug.pose.rotation))
    sb, sm = bottle.site_world("grasp"), mug.site_world("grasp")
    out_b = bottle.pose.rotation @ np.array([-1.0, 0, 0])
    out_m = mug.pose.rotation @ np.array([-1.0, 0, 0])
    meet = bottle.pose.apply(_MEET_LOCAL)
    mug_offset = sm - mug.pose.translation
    lift_b = 0.15
    grip6 = RigidTransform(Rb, sb + lift_b * UP)
    body6 = _T(0, 0, lift_b) @ bottle.pose
    hold = grip6.inverse() @ body6
    d = meet - body6.translation
    d[2] = 0.0
    d /= np.linalg.norm(d)
    R_tilt = _axis_angle(np.cross(UP, d), _POUR_TILT)
    R8 = R_tilt @ Rb
    mouth_target = meet + np.array([0, 0, 0.05 + 0.06])
    p8 = mouth_target - R8 @ hold.apply(bottle.sites["mouth"].local)
    s = _Script()
    s.step(R=dict(pos=sm + 0.05 * out_m + 0.06 * UP, rot=Rm, grip=1, obj=1))
    s.step(R=dict(pos=sm, grip=0))
    s.step(R=dict(pos=sm + 0.12 * UP))
    s.step(L=dict(pos=sb + 0.05 * out_b + 0.06 * UP, rot=Rb, grip=1, obj=0))
    s.step(L=dict(pos=sb, grip=0))
    s.step(L=dict(pos=sb + lift_b * UP))
    s.step(R=dict(pos=meet + mug_offset, obj=0))
    s.step(L=dict(pos=p8, rot=R8))
    s.step(L=dict(pos=sb, rot=Rb))
    s.step(L=dict(grip=1))
    s.step(R=dict(pos=sm, grip=1, obj=1))
    return s.program("pour_water")


def _pour_water_substeps():
    def lifted(name, arm):
        def check(snap, sc):
            z0 = sc.bodies[name].pose.translation[2]
            return snap.carried[arm] == name and snap.poses[name].translation[2] >= z0 + 0.05
        return check

    def brought(snap, sc):
        return lifted("mug", "R")(snap, sc) and _hdist(snap.poses["mug"].translation,
                                                       snap.poses["bottle"].translation) <= 0.20

    def poured(snap, sc):
        pb, pm = snap.poses["bottle"], snap.poses["mug"]
        mouth = pb.apply(sc.bodies["bottle"].sites["mouth"].local)
        mug_top = pm.translation[2] + sc.bodies["mug"].dims[2] / 2
        return (snap.carried["L"] == "bottle" and tilt(pb) >= np.deg2rad(60)
                and _hdist(mouth, pm.translation) <= 0.04 and mouth[2] > mug_top)

    def put_down(name, arm):
        def check(snap, sc):
            pose = snap.poses[name]
            return (snap.carried[arm] is None and tilt(pose) <= np.deg2rad(10)
                    and abs(bottom_z(sc.bodies[name], pose)) <= 0.01)
        return check

    return [
        Substep("pick up the mug", "R", 3, lifted("mug", "R")),
        Substep("pick up the bottle", "L", 6, lifted("bottle", "L")),
        Substep("bring the mug close to the bottle", "R", 7, brought),
        Substep("pour water into the mug", "L", 8, poured),
        Substep("put down the bottle", "L", 10, put_down("bottle", "L")),
        Substep("put down the mug", "R", 11, put_down("mug", "R")),
    ]


# --------------------------------------------------------------------------- unscrew bottle

_HANDOVER_LOCAL = np.array([0.0, -0.19, 0.13])  # bottle centre at hand-over, bottle frame
_CAP_SPOT_LOCAL = np.array([0.0, -0.32, -0.09])  # cap resting spot on the table, bottle frame
_CAP_REST = _T(0, 0, 0.1025)


def _build_unscrew_bottle(rng, n_points):
    bottle_d, cap_d = (0.07, 0.07, 0.18), (0.036, 0.036, 0.025)
    c_b, c_c = _clouds_for([("cylinder", bottle_d, False), ("cylinder", cap_d, False)], n_points, rng)
    bottle = Body("bottle", 0, "cylinder", bottle_d, c_b, {"grasp": Site("carry", (-0.035, 0, 0))},
                  pose=_T(0.40, 0.12, 0.09))
    cap = Body("cap", 0, "cylinder", cap_d, c_c, {"twist": Site("screw", (0, 0, 0.0125))},
               parent="bottle", rel=_CAP_REST)
    return Scene("unscrew_bottle", [bottle, cap], [Screw("cap", _CAP_REST)])


def _expert_unscrew_bottle(scene: Scene) -> KeyframeProgram:
    bottle, cap = scene.bodies["bottle"], scene.bodies["cap"]
    Rb = grip_rot(yaw_of(bottle.pose.rotation))
    sb = bottle.site_world("grasp")
    out = bottle.pose.rotation @ np.array([-1.0, 0, 0])
    away = bottle.pose.rotation @ np.array([0, -1.0, 0])  # toward the right arm
    handover = bottle.pose.apply(_HANDOVER_LOCAL)
    grip_offset = sb - bottle.pose.translation
    cap_top = handover + _CAP_REST.translation + cap.sites["twist"].local
    spot = bottle.pose.apply(_CAP_SPOT_LOCAL)
    spot[2] = 0.0
    spot_top = spot + np.array([0, 0, cap.dims[2]])
    twist = _axis_angle(UP, np.deg2rad(120)) @ Rb
    s = _Script()
    s.step(L=dict(pos=sb + 0.05 * out + 0.06 * UP, rot=Rb, grip=1, obj=0))
    s.step(L=dict(pos=sb, grip=0))
    s.step(L=dict(pos=sb + 0.12 * UP))
    s.step(L=dict(pos=handover + grip_offset))
    s.step(R=dict(pos=cap_top + 0.08 * UP, rot=Rb, grip=1, obj=0))
    s.step(R=dict(pos=cap_top, grip=0))
    # unscrewing lifts the gripper slightly with the cap
    s.step(R=dict(pos=cap_top + 0.015 * UP, rot=twist))
    s.step(R=dict(pos=cap_top + 0.06 * UP + 0.10 * away))
    s.step(R=dict(pos=spot_top + 0.06 * UP))
    s.step(R=dict(pos=spot_top, grip=1))
    s.step(L=dict(pos=sb))
    s.step(L=dict(grip=1))
    return s.program("unscrew_bottle")


def _unscrew_bottle_substeps():
    def picked(snap, sc):
        z0 = sc.bodies["bottle"].pose.translation[2]
        return snap.carried["L"] == "bottle" and snap.poses["bottle"].translation[2] >= z0 + 0.05

    def brought(snap, sc):
        d0 = _hdist(sc.bodies["bottle"].pose.translation, sc.arm_bases["R"])
        d = _hdist(snap.poses["bottle"].translation, sc.arm_bases["R"])
        return snap.carried["L"] == "bottle" and d <= d0 - 0.04

    def unscrewed(snap, sc):
        mouth = snap.poses["bottle"].apply(_CAP_REST.translation)
        return (not snap.mech["cap"]["threaded"] and snap.carried["R"] == "cap"
                and np.linalg.norm(snap.poses["cap"].translation - mouth) >= 0.04)

    def put_down(name, arm):
        def check(snap, sc):
            pose = snap.poses[name]
            return (snap.carried[arm] is None and tilt(pose) <= np.deg2rad(10)
                    and abs(bottom_z(sc.bodies[name], pose)) <= 0.01)
        return check

    return [
        Substep("pick up the bottle", "L", 3, picked),
        Substep("bring the bottle close to the right arm", "L", 4, brought),
        Substep("unscrew the cap", "R", 8, unscrewed),
        Substep("put down the cap", "R", 10, put_down("cap", "R")),
        Substep("put down the bottle", "L", 12, put_down("bottle", "L")),
    ]


# --------------------------------------------------------------------------- uncover lid


def _build_uncover_lid(rng, n_points):
    box_d, lid_d = (0.24, 0.18, 0.10), (0.25, 0.19, 0.03)
    c_box, c_lid = _clouds_for([("box", box_d, True), ("box", lid_d, False)], n_points, rng)
    box = Body("box", 0, "box", box_d, c_box, support=True, pose=_T(0.45, 0.0, 0.05))
    lid = Body("lid", 0, "box", lid_d, c_lid,
               {"left": Site("carry", (0, 0.095, 0)), "right": Site("carry", (0, -0.095, 0))},
               two_handed=True, parent="box", rel=_T(0, 0, 0.065))
    return Scene("uncover_lid", [box, lid], [])


def _expert_uncover_lid(scene: Scene) -> KeyframeProgram:
    box, lid = scene.bodies["box"], scene.bodies["lid"]
    R = grip_rot(yaw_of(box.pose.rotation))
    site = {"L": lid.site_world("left"), "R": lid.site_world("right")}
    out = {"L": box.pose.rotation @ np.array([0, 1.0, 0]), "R": box.pose.rotation @ np.array([0, -1.0, 0])}
    back = box.pose.rotation @ np.array([-1.0, 0, 0])
    z0 = site["L"][2]
    s = _Script()

    def both(fn, **kw):
        s.step(L=dict(pos=fn("L"), **kw), R=dict(pos=fn("R"), **kw))

    both(lambda a: site[a] + 0.06 * out[a] + 0.10 * UP, rot=R, grip=1, obj=0)
    both(lambda a: site[a] + 0.06 * out[a])
    both(lambda a: site[a])
    both(lambda a: site[a], grip=0)
    both(lambda a: site[a] + 0.03 * UP)
    both(lambda a: site[a] + 0.12 * UP)
    both(lambda a: site[a] + 0.12 * UP + 0.14 * back)
    both(lambda a: site[a] + 0.12 * UP + 0.30 * back)
    both(lambda a: site[a] + 0.30 * back + (0.045 - z0) * UP)
    both(lambda a: site[a] + 0.30 * back + (0.015 - z0) * UP)
    both(lambda a: site[a] + 0.30 * back + (0.015 - z0) * UP, grip=1)
    both(lambda a: site[a] + 0.30 * back + (0.015 - z0) * UP + 0.06 * out[a] + 0.10 * UP)
    return s.program("uncover_lid")


def _uncover_lid_substeps():
    def at_lid(snap, sc):
        lid = sc.bodies["lid"]
        pose = snap.poses["lid"]
        return all(
            np.linalg.norm(snap.arms[a][0] - pose.apply(lid.sites[n].local)) <= 0.02
            for a, n in (("L", "left"), ("R", "right"))
        )

    def lifted(snap, sc):
        z0 = sc.bodies["lid"].pose.translation[2]
        held = "lid" in snap.carried.values() and "lid" in snap.coholds
        return held and snap.poses["lid"].translation[2] >= z0 + 0.08

    def aside(snap, sc):
        lid, box = sc.bodies["lid"], sc.bodies["box"]
        pose = snap.poses["lid"]
        if "lid" in snap.carried.values() or snap.parents["lid"] is not None:
            return False
        if tilt(pose) > np.deg2rad(10) or abs(bottom_z(lid, pose)) > 0.015:
            return False
        bp = snap.poses["box"]
        q = bp.inverse().apply(lid.corners(pose))
        h = box.dims / 2
        return bool(q[:, 0].min() > h[0] or q[:, 0].max() < -h[0]
                    or q[:, 1].min() > h[1] or q[:, 1].max() < -h[1])

    return [
        Substep("go to the lower middle part of the lid", "LR", 3, at_lid),
        Substep("lift up the lid", "LR", 6, lifted),
        Substep("put down the lid to one side", "LR", 12, aside),
    ]


# --------------------------------------------------------------------------- open box

_FLAPS = {
    # name: (hinge, inward, length, width, arm, offset along the free edge)
    "flap_py": ((0.0, 0.11, 0.07), (0.0, -1.0, 0.0), 0.11, 0.30, "L", 0.10),
    "flap_ny": ((0.0, -0.11, 0.07), (0.0, 1.0, 0.0), 0.11, 0.30, "R", 0.10),
    "flap_px": ((0.15, 0.0, 0.07), (-1.0, 0.0, 0.0), 0.10, 0.22, "L", -0.05),
    "flap_nx": ((-0.15, 0.0, 0.07), (1.0, 0.0, 0.0), 0.10, 0.22, "R", -0.05),
}
_OPEN_ANGLE = np.deg2rad(120)


def _build_open_box(rng, n_points):
    box_d = (0.30, 0.22, 0.14)
    flaps = [Flap(n, np.array(h), np.array(i), L, w) for n, (h, i, L, w, _, _) in _FLAPS.items()]
    parts = [("box", box_d, True)] + [("box", f.dims(), False) for f in flaps]
    clouds = _clouds_for(parts, n_points, rng)
    box = Body("box", 0, "box", box_d, clouds[0], support=True, pose=_T(0.45, 0.0, 0.07))
    bodies = [box]
    for f, c in zip(flaps, clouds[1:]):
        bodies.append(Body(f.body, 0, "box", f.dims(), c, solid=False, parent="box", rel=f.rel()))
    return Scene("open_box", bodies, flaps)


def _expert_open_box(scene: Scene) -> KeyframeProgram:
    box = scene.bodies["box"]
    R = grip_rot(yaw_of(box.pose.rotation))
    flaps = {m.body: m for m in scene.mechanisms}

    def arc(name, deg):
        f = flaps[name]
        e = _FLAPS[name][5]
        return box.pose.apply(f.hinge + e * f.edge + f.length * f.direction(np.deg2rad(deg)))

    s = _Script()
    for first, (fl, fr) in enumerate((("flap_py", "flap_ny"), ("flap_px", "flap_nx"))):
        kw = dict(rot=R, grip=1, obj=0)
        s.step(L=dict(pos=arc(fl, 0) + 0.10 * UP, **kw), R=dict(pos=arc(fr, 0) + 0.10 * UP, **kw))
        s.step(L=dict(pos=arc(fl, 0) + 0.04 * UP), R=dict(pos=arc(fr, 0) + 0.04 * UP))
        for deg in (5, 45, 90, 135):
            s.step(L=dict(pos=arc(fl, deg)), R=dict(pos=arc(fr, deg)))
        s.step(L=dict(pos=arc(fl, 135) + 0.08 * UP), R=dict(pos=arc(fr, 135) + 0.08 * UP))
    last = {a: s.prev[a].position for a in ("L", "R")}
    s.step(**{a: dict(pos=(last[a] + HOME[a].translation) / 2, obj=None) for a in ("L", "R")})
    s.step(**{a: dict(pos=HOME[a].translation, rot=TOOL_DOWN, obj=None) for a in ("L", "R")})
    return s.program("open_box")


def _open_box_substeps():
    def near(pairs):
        def check(snap, sc):
            box_pose = snap.poses["box"]
            flaps = {m.body: m for m in sc.mechanisms}
            for name, arm in pairs:
                f = flaps[name]
                old = f.angle
                f.angle = snap.mech[name]["angle"]
                d = f.tip_distance(box_pose, snap.arms[arm][0])
                f.angle = old
                if d > f.contact:
                    return False
            return True
        return check

    def opened(names):
        def check(snap, sc):
            return all(snap.mech[n]["angle"] >= _OPEN_ANGLE for n in names)
        return check

    return [
        Substep("go close to the two vertical wings", "LR", 3, near((("flap_py", "L"), ("flap_ny", "R")))),
        Substep("flick open two wings", "LR", 6, opened(("flap_py", "flap_ny"))),
        Substep("go close to the two horizontal wings", "LR", 10, near((("flap_px", "L"), ("flap_nx", "R")))),
        Substep("flick open two wings", "LR", 13, opened(("flap_py", "flap_ny", "flap_px", "flap_nx"))),
    ]


# --------------------------------------------------------------------------- registry


def _make_specs() -> dict[str, TaskSpec]:
    r = Region
    return {
        "pull_drawer": TaskSpec(
            "pull_drawer", False, 10, _pull_drawer_substeps(),
            _workspace({0: r((0.55, -0.16), (0.04, 0.05), (-0.15, 0.15)),
                        1: r((0.34, 0.18), (0.04, 0.05), (-0.5, 0.5))}),
            _build_pull_drawer, _expert_pull_drawer),
        "pour_water": TaskSpec(
            "pour_water", False, 11, _pour_water_substeps(),
            _workspace({0: r((0.42, 0.15), (0.04, 0.04), (-0.3, 0.3)),
                        1: r((0.42, -0.15), (0.04, 0.04), (-0.3, 0.3))}),
            _build_pour_water, _expert_pour_water),
        "unscrew_bottle": TaskSpec(
            "unscrew_bottle", False, 12, _unscrew_bottle_substeps(),
            _workspace({0: r((0.40, 0.12), (0.05, 0.05), (-0.2, 0.2))}),
            _build_unscrew_bottle, _expert_unscrew_bottle),
        "uncover_lid": TaskSpec(
            "uncover_lid", True, 12, _uncover_lid_substeps(),
            _workspace({0: r((0.45, 0.0), (0.05, 0.06), (-0.2, 0.2))}),
            _build_uncover_lid, _expert_uncover_lid),
        "open_box": TaskSpec(
            "open_box", True, 16, _open_box_substeps(),
            _workspace({0: r((0.45, 0.0), (0.04, 0.05), (-0.2, 0.2))}),
            _build_open_box, _expert_open_box),
    }


TASKS = _make_specs()


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}") from None


def _streams(spec: TaskSpec, seed: int):
    idx = TASK_NAMES.index(spec.name)
    cloud_ss, place_ss = np.random.SeedSequence([int(seed), idx]).spawn(2)
    return np.random.default_rng(cloud_ss), np.random.default_rng(place_ss)


def _reachable(scene: Scene, program: KeyframeProgram) -> bool:
    return all(
        np.linalg.norm(a.position - scene.arm_bases[a.chirality]) <= scene.span_m
        for a in program.all_actions()
    )


def demonstration(spec: TaskSpec, scene: Scene, program: KeyframeProgram, demo_id: str,
                  provenance: dict | None = None) -> Demonstration:
    return Demonstration(
        id=demo_id,
        clouds=scene.clouds(),
        program=program,
        proprio=initial_proprioception(program.initial[0]),
        provenance=provenance or {"kind": "seed"},
        object_poses={oid: scene.object_pose(oid) for oid in scene.object_ids()},
        task=spec.name,
    )


def make_task(spec: TaskSpec | str, seed: int, n_points: int = 1024,
              nominal: bool = False) -> tuple[Scene, Demonstration]:
    """Seeded scene within the task workspace plus the scripted expert demonstration.

    ``nominal=True`` keeps every object at its reference placement (only the
    point sampling depends on ``seed``).
    """
    spec = get_task(spec) if isinstance(spec, str) else spec
    cloud_rng, place_rng = _streams(spec, seed)
    base = spec.build(cloud_rng, n_points)
    scene = base
    if not nominal:
        for _ in range(PLACEMENT_TRIES):
            scene = base.copy()
            for oid in scene.object_ids():
                c = scene.object_cloud(oid).centroid()
                scene.transform_object(oid, _sample_one(spec.workspace.regions[oid], c, place_rng))
            if len(scene.object_ids()) > 1 and clouds_collide(scene.clouds()):
                continue
            if _reachable(scene, spec.expert(scene)):
                break
        else:  # pragma: no cover - regions are sized so this never triggers
            raise RuntimeError(f"{spec.name}: no feasible placement for seed {seed}")
    program = spec.expert(scene)
    prov = {"kind": "seed", "scene_seed": int(seed), "nominal": bool(nominal), "n_points": n_points}
    return scene, demonstration(spec, scene, program, f"{spec.name}-{seed}", prov)


def scene_for_demo(spec: TaskSpec | str, demo: Demonstration) -> Scene:
    """Rebuild the simulator scene a (possibly transformed) demonstration lives in."""
    spec = get_task(spec) if isinstance(spec, str) else spec
    prov = demo.provenance
    seed = int(prov.get("scene_seed", 0))
    cloud_rng, _ = _streams(spec, seed)
    scene = spec.build(cloud_rng, int(prov.get("n_points", 1024)))
    for oid, pose in demo.object_poses.items():
        scene.transform_object(oid, pose @ scene.object_pose(oid).inverse())
    return scene


def substep_names(spec: TaskSpec) -> list[str]:
    return [f"{s.name} ({s.arms})" for s in spec.substeps]


def expert_grasp(spec: TaskSpec, scene: Scene) -> KeyframeAction:
    """First gripper-closing keypose of the expert program (left arm first on ties)."""
    prog = spec.expert(scene)
    return first_grasp(prog)


def first_grasp(prog: KeyframeProgram) -> KeyframeAction:
    prev = {"L": prog.initial[0].gripper, "R": prog.initial[1].gripper}
    for a, b in prog.pairs():
        for act in (a, b):
            if prev[act.chirality] == 1 and act.gripper == 0:
                return act
        prev = {"L": a.gripper, "R": b.gripper}
    raise ValueError("program never closes a gripper")


__all__ = [
    "TASKS", "TASK_NAMES", "Substep", "TaskSpec", "get_task", "make_task", "scene_for_demo",
    "demonstration", "expert_grasp", "first_grasp", "substep_names", "tilt", "bottom_z",
]
