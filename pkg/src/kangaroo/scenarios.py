"""Whole-body scenarios: hopping, the belt-supported leg jump and the
leg-plus-tail jump from three-point support.

Each runner takes plain settings objects (built from the config) and returns
a :class:`~kangaroo.sim.SimTrace` plus a metrics dict.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hopping import HopperGains, HoppingController, Phase
from .muscle import MuscleRouting, allocate_tensions, muscle_jacobian
from .robot import FOOT, Body, BodyParams, build_body, pulley_routing
from .sim import ContactModel, SimTrace, apex_and_hop_metrics, simulate
from .tail import TailModel, closed_form_equilibrium, tail_wire_torques

# joint torque signs that straighten the leg: hip back, knee open, toe down
EXTENSION = np.array([-1.0, 1.0, -1.0])


def dof_names(body: Body) -> list[str]:
    names = ["x", "z", "pitch", "hip", "knee", "ankle"]
    if body.tail_kind == "link":
        names.append("tail")
    elif body.tail_kind == "chain":
        names += [f"tail{i}" for i in range(len(body.tail_dofs))]
    return names


@dataclass(frozen=True)
class SimSettings:
    dt: float = 1e-4
    control_dt: float = 1e-3
    record_every: int = 10
    max_speed: float = 1e3


# -- hopping ---------------------------------------------------------------------

@dataclass(frozen=True)
class HopSettings:
    gains: HopperGains = HopperGains()
    arms: tuple = ()  # (muscles, 3) pulley radii; empty runs on ideal joint torques
    muscle_names: tuple = ()
    f_max: float = 450.0
    duration: float = 3.0
    start_height: float | None = None  # COG height at release; default apex height


def hop_initial_state(body: Body, gains: HopperGains, height: float):
    """Flight pose with the leg at its touchdown target, COG at ``height``,
    moving at the target speed."""
    q = np.zeros(body.n_dof)
    q[1] = height
    probe = HoppingController(body, gains)
    for _ in range(3):
        kin = body.model.kinematics(q)
        q[body.leg_dofs] = probe.flight_targets(kin)
        kin = body.model.kinematics(q)
        q[1] += height - kin.com_position[1]
    qd = np.zeros(body.n_dof)
    qd[0] = gains.target_velocity
    return q, qd


def run_hop(body_params: BodyParams, hop: HopSettings, contact: ContactModel = ContactModel(),
            sim: SimSettings = SimSettings(), meta: dict | None = None):
    routing = pulley_routing(hop.arms, hop.f_max, list(hop.muscle_names) or None) if len(hop.arms) else None
    body = build_body(body_params, "link", routing=routing)
    q0, qd0 = hop_initial_state(body, hop.gains, hop.start_height or hop.gains.apex_height)
    ctl = HoppingController(body, hop.gains, routing, contact.ground_height)
    trace = simulate(body, ctl, q0, qd0, hop.duration, contact, sim.dt, sim.control_dt, sim.record_every,
                     sim.max_speed, meta, dof_names(body), routing.names if routing else ())
    metrics = apex_and_hop_metrics(trace)
    metrics["tension_cap"] = hop.gains.tension_cap
    metrics["cap_respected"] = bool(metrics["max_tension"] <= hop.gains.tension_cap + 1e-9)
    stance = trace.phase == int(Phase.STANCE)
    peaks = trace.tensions[stance].max(axis=0) if stance.any() and trace.tensions.size else np.zeros(0)
    metrics["stance_peak_tensions"] = [float(v) for v in peaks]
    return trace, metrics


# -- belt rig and scheduled commands --------------------------------------------

@dataclass(frozen=True)
class BeltRig:
    """Test-stand belts on the torso: springs on pitch and horizontal position,
    and a one-sided vertical support that only holds the torso up when it
    sinks below ``support_height``."""

    pitch: float = np.deg2rad(20.0)
    pitch_stiffness: float = 300.0
    pitch_damping: float = 30.0
    x: float = 0.0
    x_stiffness: float = 2000.0
    x_damping: float = 200.0
    support_height: float | None = None
    support_stiffness: float = 2e4
    support_damping: float = 1e3

    def __call__(self, q, qd) -> np.ndarray:
        Q = np.zeros(len(q))
        Q[0] = -self.x_stiffness * (q[0] - self.x) - self.x_damping * qd[0]
        Q[2] = -self.pitch_stiffness * (q[2] - self.pitch) - self.pitch_damping * qd[2]
        if self.support_height is not None and q[1] < self.support_height:
            Q[1] = max(self.support_stiffness * (self.support_height - q[1]) - self.support_damping * qd[1], 0.0)
        return Q


@dataclass(frozen=True)
class LegCommand:
    """From ``start``: constant joint torque per leg (extension-positive
    magnitudes) allocated under ``cap``. The push ends after ``duration`` or
    when the foot leaves the ground, whichever comes first; outside it the
    wires hold ``pretension`` (or a posture hold, if set)."""

    torques: tuple[float, float, float] = (9.6, 19.2, 1.4)
    cap: float = 145.0
    start: float = 0.2
    duration: float = 0.3
    pretension: float = 10.0


@dataclass(frozen=True)
class TailCommand:
    """Piecewise-constant (time, f_upper, f_lower) schedule."""

    schedule: tuple[tuple[float, float, float], ...] = ((0.0, 40.0, 30.0),)

    def at(self, t: float) -> tuple[float, float]:
        fu, fl = self.schedule[0][1:]
        for t0, u, l in self.schedule:
            if t >= t0:
                fu, fl = u, l
        return fu, fl


@dataclass
class ScheduledController:
    body: Body
    routing: MuscleRouting
    legs: LegCommand
    tail: TailCommand | None = None
    hold: np.ndarray | None = None  # leg posture held outside the push
    hold_kp: float = 60.0
    hold_kd: float = 3.0
    phases: list = field(default_factory=list)

    def __post_init__(self):
        self._push_over = False

    def pushing(self, t, forces) -> bool:
        if self._push_over or t < self.legs.start:
            return False
        # heel and toe are the first two contact points
        if t >= self.legs.start + self.legs.duration or forces[:2, 1].sum() <= 0:
            self._push_over = True
            return False
        return True

    def leg_tensions(self, t, kin, forces):
        n = self.body.params.leg_count
        G = muscle_jacobian(self.routing, self.body.model, kin)[:, :3]
        cap = np.minimum(self.legs.cap, self.routing.f_max)
        pushing = self.pushing(t, forces)
        phase = 1 if pushing else (2 if self._push_over else 0)
        if pushing:
            tau = EXTENSION * np.asarray(self.legs.torques)
        elif self.hold is not None:
            a = self.body.leg_dofs
            tau = (self.hold_kp * (self.hold - kin.q[a]) - self.hold_kd * kin.qd[a]) / n
        else:
            f = np.full(len(G), float(self.legs.pretension))
            return f, n * (-G.T @ f), phase
        alloc = allocate_tensions(G, tau, cap)
        f = alloc.f if pushing else np.maximum(alloc.f, self.legs.pretension)
        f = np.minimum(f, cap)
        return f, n * (-G.T @ f), phase

    def __call__(self, t, kin, forces):
        Q = np.zeros(self.body.n_dof)
        f, tau, phase = self.leg_tensions(t, kin, forces)
        Q[self.body.leg_dofs] = tau
        ft = (0.0, 0.0)
        if self.tail is not None and self.body.tail_kind == "chain":
            ft = self.tail.at(t)
            # the tail leaves the torso pointing backwards, so "upper" bends it
            # toward negative joint angles in the body frame
            Q[self.body.tail_dofs] = -tail_wire_torques(self.body.tail, kin.q[self.body.tail_dofs], *ft)
        elif self.tail is not None:
            ft = self.tail.at(t)
        return Q, {"tensions": f, "tail_tensions": ft, "phase": phase}


def standing_pose(body: Body, pitch: float, thigh: float, shank: float, foot: float, ground: float = 0.0,
                  tail_theta=None):
    """Joint vector with the foot at absolute angles and the lowest foot point
    resting on the ground; ``thigh``/``shank``/``foot`` are absolute link
    angles (rad)."""
    q = np.zeros(body.n_dof)
    q[2] = pitch
    q[body.leg_dofs] = [thigh - pitch + np.pi / 2, shank - thigh, foot - shank]
    if tail_theta is not None and len(body.tail_dofs):
        q[body.tail_dofs] = tail_theta
    kin = body.model.kinematics(q)
    low = min(kin.point_world(FOOT, (0.0, 0.0))[1], kin.point_world(FOOT, (body.params.leg_lengths[2], 0.0))[1])
    q[1] = ground - low
    return q


# -- leg jump -------------------------------------------------------------------

@dataclass(frozen=True)
class LegJumpSettings:
    arms: tuple = ()
    muscle_names: tuple = ()
    f_max: float = 450.0
    command: LegCommand = LegCommand()
    posture_deg: tuple[float, float, float] = (-50.0, -130.0, 0.0)  # thigh, shank, foot (absolute)
    torso_pitch_deg: float = 20.0
    rig: BeltRig = BeltRig()
    hold_kp: float = 60.0
    hold_kd: float = 3.0
    duration: float = 1.0


def _foot_clearance(body: Body, trace: SimTrace) -> np.ndarray:
    L = body.params.leg_lengths[2]
    out = []
    for q in trace.q:
        kin = body.model.kinematics(q)
        out.append(min(kin.point_world(FOOT, (0.0, 0.0))[1], kin.point_world(FOOT, (L, 0.0))[1]))
    return np.array(out)


def run_leg_jump(body_params: BodyParams, jump: LegJumpSettings, contact: ContactModel = ContactModel(),
                 sim: SimSettings = SimSettings(), meta: dict | None = None):
    routing = pulley_routing(jump.arms, jump.f_max, list(jump.muscle_names) or None)
    body = build_body(body_params, "link", routing=routing)
    pitch = np.deg2rad(jump.torso_pitch_deg)
    q0 = standing_pose(body, pitch, *np.deg2rad(jump.posture_deg), ground=contact.ground_height)
    rig = replace(jump.rig, pitch=pitch, x=q0[0],
                  support_height=q0[1] if jump.rig.support_height is None else jump.rig.support_height)
    ctl = ScheduledController(body, routing, jump.command, hold=q0[body.leg_dofs].copy(), hold_kp=jump.hold_kp,
                              hold_kd=jump.hold_kd)
    trace = simulate(body, ctl, q0, np.zeros(body.n_dof), jump.duration, contact, sim.dt, sim.control_dt,
                     sim.record_every, sim.max_speed, meta, dof_names(body), routing.names, external=rig)
    z = trace.q[:, 1]
    clearance = _foot_clearance(body, trace) - contact.ground_height
    metrics = {
        "torso_lift": float(z.max() - z[0]),
        "foot_lift": float(max(clearance.max(), 0.0)),
        "max_tension": float(trace.tensions.max()) if trace.tensions.size else 0.0,
        "tension_cap": jump.command.cap,
        "peak_power": _peak_power(trace),
    }
    return trace, metrics


def _peak_power(trace: SimTrace) -> float:
    if len(trace.t) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(trace.work_actuator) / trace.dt)))


# -- leg + tail jump --------------------------------------------------------------

@dataclass(frozen=True)
class CombinedSettings:
    arms: tuple = ()
    muscle_names: tuple = ()
    f_max: float = 450.0
    legs: LegCommand = LegCommand(torques=(9.0, 18.0, 2.0), cap=145.0, start=0.5, duration=0.3)
    # initial bend, then straighten during the push, then soften 1 s after it
    tail: TailCommand = TailCommand(((0.0, 40.0, 30.0), (0.5, 25.0, 25.0), (1.5, 15.0, 15.0)))
    posture_deg: tuple[float, float, float] = (-45.0, -135.0, 0.0)
    torso_pitch_deg: float = 30.0
    rig: BeltRig = BeltRig(pitch_stiffness=150.0, pitch_damping=15.0, x_stiffness=500.0, x_damping=100.0)
    hold_kp: float = 60.0
    hold_kd: float = 3.0
    duration: float = 2.5
    tail_model: TailModel = TailModel()


def tail_tip_height(body: Body, q) -> float:
    kin = body.model.kinematics(q)
    if body.tail_kind == "chain":
        return float(kin.point_world(body.tail_links[-1], (body.tail.link_length, 0.0))[1])
    tip = [c for c in body.contacts if c.name.startswith("tail")][-1]
    return float(kin.point_world(tip.link, tip.point)[1])


def combined_initial_state(body: Body, s: CombinedSettings, ground: float):
    pitch = np.deg2rad(s.torso_pitch_deg)
    tail_theta = None
    if body.tail_kind == "chain":
        fu, fl = s.tail.at(0.0)
        # the body-frame bend is the mirror of the wire-frame one
        tail_theta = -closed_form_equilibrium(body.tail, fu, fl)
    return standing_pose(body, pitch, *np.deg2rad(s.posture_deg), ground=ground, tail_theta=tail_theta)


def run_combined(body_params: BodyParams, s: CombinedSettings, tail_kind: str = "chain",
                 contact: ContactModel = ContactModel(), sim: SimSettings = SimSettings(),
                 meta: dict | None = None, locked_shape=None):
    routing = pulley_routing(s.arms, s.f_max, list(s.muscle_names) or None)
    params = replace(body_params, leg_count=2)
    if tail_kind == "locked" and locked_shape is None:
        locked_shape = -closed_form_equilibrium(s.tail_model, *s.tail.at(0.0))
    body = build_body(params, tail_kind, tail=s.tail_model, tail_shape=locked_shape, routing=routing)
    q0 = combined_initial_state(body, s, contact.ground_height)
    pitch = np.deg2rad(s.torso_pitch_deg)
    rig = replace(s.rig, pitch=pitch, x=q0[0],
                  support_height=q0[1] if s.rig.support_height is None else s.rig.support_height)
    ctl = ScheduledController(body, routing, s.legs, s.tail, hold=q0[body.leg_dofs].copy(),
                              hold_kp=s.hold_kp, hold_kd=s.hold_kd)
    trace = simulate(body, ctl, q0, np.zeros(body.n_dof), s.duration, contact, sim.dt, sim.control_dt,
                     sim.record_every, sim.max_speed, meta, dof_names(body), routing.names, external=rig)
    return body, trace, combined_metrics(body, trace, s)


def combined_metrics(body: Body, trace: SimTrace, s: CombinedSettings) -> dict:
    t = trace.t
    push = (t >= s.legs.start) & (t <= s.legs.start + s.legs.duration)
    if not push.any():
        # the run ended before the push: nothing to measure
        return {"pushed": False, "tail_kind": body.tail_kind,
                "max_leg_tension": float(trace.tensions.max()) if trace.tensions.size else 0.0}
    i0 = int(np.argmax(push))
    i1 = int(np.nonzero(push)[0][-1])
    tip = np.array([tail_tip_height(body, q) for q in trace.q])
    hip = np.array([body.model.kinematics(q).point_world(0, (0.0, 0.0))[1] for q in trace.q])
    names = trace.contact_names
    feet = [names.index("heel"), names.index("toe")]
    foot_load = trace.forces[:, feet, 1].sum(axis=1)
    tail_pts = [i for i, n in enumerate(names) if n.startswith("tail")]
    tail_load = trace.forces[:, tail_pts, 1].sum(axis=1)
    after = t > s.legs.start + s.legs.duration
    airborne = after & (foot_load <= 0)
    if airborne.any():
        land = int(np.nonzero(airborne)[0][-1]) + 1 if not airborne[-1] else len(t) - 1
        first_air = int(np.nonzero(airborne)[0][0])
        back = np.nonzero((np.arange(len(t)) > first_air) & (foot_load > 0))[0]
        land = int(back[0]) if len(back) else len(t) - 1
    else:
        land = i1
    total = trace.total_normal_force()
    return {
        "pushed": True,
        "three_point_support_at_push": bool(foot_load[i0] > 0 and tail_load[i0] > 0),
        "tail_tip_rise_during_push": float(tip[i1] - tip[i0]),
        "hip_rise_during_push": float(hip[i1] - hip[i0]),
        "torso_lift": float(trace.q[:, 1].max() - trace.q[i0, 1]),
        "airborne": bool(airborne.any()),
        "landing_time": float(t[land]),
        "peak_landing_force": float(total[land:].max()) if land < len(t) else 0.0,
        "max_leg_tension": float(trace.tensions.max()) if trace.tensions.size else 0.0,
        "tail_kind": body.tail_kind,
    }
