"""Whole-body planar models: floating torso, one (merged) hind leg, a tail.

Coordinates are ``q = [x, z, pitch, hip, knee, ankle, tail...]`` with the
torso as the floating base (frame at the torso centre of mass, +x forward).
The leg hangs from a hip point on the torso; the foot runs from the ankle
(heel) to the toe. The tail is attached at the rear of the torso and is one
of:

* ``"link"``: a single rigid link on a passive spring-damper joint,
* ``"chain"``: the full elastic wire-driven chain of :mod:`kangaroo.tail`,
* ``"locked"``: the chain frozen into one rigid link (no tail joint at all).

Two identical hind legs moving together are merged into one planar leg with
``leg_count`` times the mass and inertia; each muscle then stands for
``leg_count`` wires in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import BaseBody, ChainModel, Kinematics, Link
from .muscle import Muscle, MuscleRouting
from .tail import TailModel, tail_spring_energy, tail_spring_torques

HIP, KNEE, ANKLE = 0, 1, 2
LEG_LINKS = (0, 1, 2)
THIGH, SHANK, FOOT = 0, 1, 2


@dataclass(frozen=True)
class BodyParams:
    torso_mass: float = 12.4
    torso_length: float = 0.65
    torso_height: float = 0.19
    hip_mount: tuple[float, float] = (-0.05, -0.08)
    tail_mount: tuple[float, float] = (-0.325, 0.0)
    # thigh, shank, foot
    leg_masses: tuple[float, float, float] = (0.3, 0.5, 0.4)
    leg_lengths: tuple[float, float, float] = (0.2, 0.28, 0.2)
    leg_count: int = 1
    # hip, knee, ankle stops (deg, relative joint angles); the knee cannot
    # bend past straight
    leg_limits_deg: tuple = ((-90.0, 120.0), (-160.0, 0.0), (0.0, 170.0))
    limit_stiffness: float = 300.0  # N m/rad past a stop
    limit_damping: float = 3.0  # N m s/rad past a stop
    # one-link tail
    tail_mass: float = 1.6
    tail_length: float = 0.4
    tail_stiffness: float = 200.0
    tail_damping: float = 5.0
    tail_rest: float = 0.0
    gravity: float = 9.81

    @property
    def torso_inertia(self) -> float:
        return self.torso_mass * (self.torso_length**2 + self.torso_height**2) / 12.0


@dataclass(frozen=True)
class ContactPoint:
    name: str
    link: int
    point: tuple[float, float]


@dataclass
class Body:
    """A built whole-body model plus the index bookkeeping around it."""

    model: ChainModel
    params: BodyParams
    tail_kind: str
    tail: TailModel | None
    contacts: tuple[ContactPoint, ...]
    leg_dofs: np.ndarray
    tail_dofs: np.ndarray
    tail_links: tuple[int, ...]
    routing: MuscleRouting | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_dof(self) -> int:
        return self.model.n_dof

    @property
    def toe(self) -> ContactPoint:
        return self.contacts[1]

    @property
    def heel(self) -> ContactPoint:
        return self.contacts[0]

    @property
    def leg_reach(self) -> float:
        return float(sum(self.params.leg_lengths))

    def leg_limit_excess(self, q) -> np.ndarray:
        lo, hi = np.deg2rad(np.asarray(self.params.leg_limits_deg, dtype=float)).T
        th = np.asarray(q)[self.leg_dofs]
        return np.minimum(th - lo, 0.0) + np.maximum(th - hi, 0.0)

    def passive_forces(self, q, qd) -> np.ndarray:
        """Joint stop forces on the leg and spring/damper torques of the
        passive tail joints."""
        Q = np.zeros(self.n_dof)
        p = self.params
        ex = self.leg_limit_excess(q)
        Q[self.leg_dofs] = -p.limit_stiffness * ex - p.limit_damping * (ex != 0) * np.asarray(qd)[self.leg_dofs]
        if self.tail_kind == "link":
            p = self.params
            i = self.tail_dofs[0]
            Q[i] = -p.tail_stiffness * (q[i] - p.tail_rest) - p.tail_damping * qd[i]
        elif self.tail_kind == "chain":
            i = self.tail_dofs
            Q[i] = tail_spring_torques(self.tail, q[i]) - self.tail.damping * qd[i]
        return Q

    def passive_energy(self, q) -> float:
        ex = self.leg_limit_excess(q)
        e = 0.5 * self.params.limit_stiffness * float(ex @ ex)
        if self.tail_kind == "link":
            p = self.params
            d = q[self.tail_dofs[0]] - p.tail_rest
            return e + 0.5 * p.tail_stiffness * d * d
        if self.tail_kind == "chain":
            return e + tail_spring_energy(self.tail, q[self.tail_dofs])
        return e


def build_body(params: BodyParams = BodyParams(), tail_kind: str = "link", tail: TailModel | None = None,
               tail_shape=None, routing: MuscleRouting | None = None) -> Body:
    """Assemble the floating-base model.

    ``tail_shape`` (joint angles of the chain) sets the frozen shape for
    ``tail_kind="locked"``; the tail always leaves the torso pointing
    backwards (mount angle pi).
    """
    if tail_kind not in ("link", "chain", "locked"):
        raise ValueError("tail_kind must be 'link', 'chain' or 'locked'")
    n = params.leg_count
    if n < 1:
        raise ValueError("leg_count must be >= 1")
    names = ("thigh", "shank", "foot")
    legs = []
    for i, (m, L) in enumerate(zip(params.leg_masses, params.leg_lengths)):
        kw = dict(parent=-1, mount=params.hip_mount, mount_angle=-np.pi / 2) if i == 0 else {}
        legs.append(Link(n * m, L, inertia=n * m * L**2 / 12.0, name=names[i], **kw))
    mount = dict(parent=-1, mount=params.tail_mount, mount_angle=np.pi)
    if tail_kind == "link":
        tails = [Link(params.tail_mass, params.tail_length, name="tail", **mount)]
    elif tail_kind == "chain":
        tail = tail or TailModel()
        tails = [Link(tail.link_mass, tail.link_length, name="tail0", **mount)]
        tails += [Link(tail.link_mass, tail.link_length, name=f"tail{i}") for i in range(1, tail.n_joints)]
    else:
        tail = tail or TailModel()
        tails = []
    base_mass = params.torso_mass
    base_inertia = params.torso_inertia
    base_com = np.zeros(2)
    kin = None
    if tail_kind == "locked":
        # lump the frozen chain into the torso's rigid body
        shape = np.zeros(tail.n_joints) if tail_shape is None else np.asarray(tail_shape, dtype=float)
        chain = ChainModel(tail.links(), gravity=0.0,
                           base_origin=(params.tail_mount[0], params.tail_mount[1], np.pi))
        kin = chain.kinematics(shape)
        m = tail.link_mass
        pts = kin.com
        total = base_mass + tail.mass
        base_com = (tail.mass * pts.mean(axis=0)) / total
        base_inertia = (base_inertia + base_mass * base_com @ base_com
                        + sum(lk.inertia + m * (c - base_com) @ (c - base_com)
                              for lk, c in zip(tail.links(), pts)))
        base_mass = total
    links = tuple(legs + tails)
    model = ChainModel(links, gravity=params.gravity, base_kind="floating",
                       base=BaseBody(base_mass, base_inertia, tuple(base_com), name="torso"))
    contacts = [ContactPoint("heel", FOOT, (0.0, 0.0)), ContactPoint("toe", FOOT, (params.leg_lengths[2], 0.0))]
    half_l, half_h = params.torso_length / 2, params.torso_height / 2
    contacts += [ContactPoint("rump", -1, (-half_l, -half_h)), ContactPoint("chest", -1, (half_l, -half_h))]
    tail_links = tuple(range(3, len(links)))
    if tail_kind == "link":
        contacts.append(ContactPoint("tail_tip", 3, (params.tail_length, 0.0)))
    elif tail_kind == "chain":
        for i in tail_links[1::2]:
            contacts.append(ContactPoint(f"tail{i - 3}", i, (tail.link_length, 0.0)))
    else:
        # tail contact points ride on the torso; the base frame stays at the torso centre
        for i in range(1, tail.n_joints, 2):
            contacts.append(ContactPoint(f"tail{i}", -1, tuple(kin.link_tip(i))))
    body = Body(model, params, tail_kind, tail if tail_kind != "link" else None, tuple(contacts),
                np.array([3, 4, 5]), np.arange(6, 6 + len(tails)), tail_links, routing)
    if routing is not None:
        routing.validate(model)
    return body


def leg_kinematics(body: Body, kin: Kinematics):
    """Hip, heel and toe positions in the world."""
    hip = kin.point_world(THIGH, (0.0, 0.0))
    heel = kin.point_world(FOOT, (0.0, 0.0))
    toe = kin.point_world(FOOT, (body.params.leg_lengths[2], 0.0))
    return hip, heel, toe


def leg_angles_for_toe(body: Body, torso_pitch: float, hip, toe, foot_angle: float, knee_forward: bool = True):
    """Analytic leg IK: joint angles putting the toe at ``toe`` with the foot
    at absolute angle ``foot_angle``. Out-of-reach ankle targets are pulled
    back along the hip-ankle line to 0.999 of the reach."""
    Lt, Ls, Lf = body.params.leg_lengths
    hip = np.asarray(hip, dtype=float)
    ankle = np.asarray(toe, dtype=float) - Lf * np.array([np.cos(foot_angle), np.sin(foot_angle)])
    d = ankle - hip
    r = float(np.hypot(*d))
    r_max = 0.999 * (Lt + Ls)
    r_min = 1.001 * abs(Lt - Ls)
    if r > r_max or r < r_min:
        d = d * (np.clip(r, r_min, r_max) / max(r, 1e-12))
        r = float(np.hypot(*d))
    cos_k = (Lt**2 + Ls**2 - r**2) / (2 * Lt * Ls)
    interior = np.arccos(np.clip(cos_k, -1.0, 1.0))
    phi = np.arctan2(d[1], d[0])
    cos_a = (Lt**2 + r**2 - Ls**2) / (2 * Lt * r)
    alpha = np.arccos(np.clip(cos_a, -1.0, 1.0))
    # knee forward: the thigh sits on the CCW side of the hip-ankle line when facing +x
    a_thigh = phi + alpha if knee_forward else phi - alpha
    bend = np.pi - interior
    a_shank = a_thigh - bend if knee_forward else a_thigh + bend
    hip_angle = a_thigh - torso_pitch + np.pi / 2
    return np.array([hip_angle, a_shank - a_thigh, foot_angle - a_shank])


def pulley_routing(arms, f_max, names=None) -> MuscleRouting:
    """Muscles running from torso-mounted motors over joint pulleys.

    ``arms`` is (muscles, 3): the signed pulley radius at hip, knee and
    ankle (dL/dtheta). The wire leaves the motor along the torso, so the
    polyline part of the path is constant and only the pulleys change the
    length.
    """
    arms = np.asarray(arms, dtype=float)
    names = names or [f"m{i}" for i in range(len(arms))]
    f_max = np.broadcast_to(np.asarray(f_max, dtype=float), (len(arms),))
    muscles = []
    for name, row, fm in zip(names, arms, f_max):
        pulleys = tuple((j, float(a)) for j, a in zip(LEG_LINKS, row) if a != 0.0)
        muscles.append(Muscle(name, ((-1, (0.2, 0.0)), (-1, (0.05, -0.08))), float(fm), pulleys=pulleys))
    return MuscleRouting(tuple(muscles))
