"""Raibert-style hopping control for the whole-body model.

Stance: a virtual spring between the toe and the centre of gravity, plus an
energy-shaping push while the virtual leg extends, plus a small horizontal
velocity servo; the force is mapped to joint torques through the toe
Jacobian, and the hip adds a torso attitude servo. Flight: the toe is placed
by the CG-print (half the distance the COG travels over a stance) plus
velocity feedback, reached through analytic leg IK and computed-torque PD.
Joint torques become muscle tensions through the minimum-norm allocator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .muscle import MuscleRouting, allocate_tensions, muscle_jacobian
from .robot import FOOT, Body, leg_angles_for_toe


class Phase(IntEnum):
    FLIGHT = 0
    STANCE = 1


@dataclass(frozen=True)
class HopperGains:
    spring_stiffness: float = 2500.0  # N/m
    rest_length: float = 0.55  # m, COG to toe
    energy_gain: float = 4.0  # 1/m: newtons per joule of energy deficit
    apex_height: float = 0.62  # m, COG
    target_velocity: float = 0.3  # m/s
    cg_print_gain: float = 1.0
    velocity_gain: float = 0.05  # s
    horizontal_gain: float = 40.0  # N s/m
    attitude_kp: float = 150.0  # N m/rad
    attitude_kd: float = 15.0  # N m s/rad
    target_pitch: float = 0.0
    swing_kp: float = 2500.0  # 1/s^2
    swing_kd: float = 100.0  # 1/s
    swing_acc_limit: float = 400.0  # rad/s^2, per joint
    foot_angle: float = -0.9  # rad, absolute foot angle in flight
    foot_kp: float = 30.0  # N m/rad, stance foot-angle servo (leg null space)
    foot_kd: float = 2.0  # N m s/rad
    tension_cap: float = 450.0
    slew_rate: float = 1e5  # N/s
    nominal_stance_time: float = 0.22
    reach_fraction: float = 0.95
    hysteresis: int = 2
    clearance: float = 0.005  # m, toe must clear this before touchdown is armed

    def __post_init__(self):
        for name in ("spring_stiffness", "energy_gain", "velocity_gain", "horizontal_gain", "attitude_kp",
                     "attitude_kd", "swing_kp", "swing_kd", "swing_acc_limit", "cg_print_gain", "slew_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.tension_cap > 0:
            raise ValueError("tension_cap must be > 0")
        if self.hysteresis < 1:
            raise ValueError("hysteresis must be >= 1")


@dataclass
class PhaseState:
    phase: Phase = Phase.FLIGHT
    time_in_phase: float = 0.0
    last_stance_duration: float | None = None
    pending: int = 0
    hops: int = 0
    last_time: float | None = None
    armed: bool = True

    def advance(self, t: float, want: Phase, hysteresis: int) -> bool:
        """Feed one sample; switch after ``hysteresis`` agreeing samples."""
        if self.last_time is not None:
            self.time_in_phase += t - self.last_time
        self.last_time = t
        if want == self.phase:
            self.pending = 0
            return False
        self.pending += 1
        if self.pending < hysteresis:
            return False
        if self.phase == Phase.STANCE:
            self.last_stance_duration = self.time_in_phase
            self.hops += 1
            self.armed = False
        self.phase = want
        self.time_in_phase = 0.0
        self.pending = 0
        return True


def hop_energy(mass: float, gravity: float, cog_z: float, cog_vz: float) -> float:
    return 0.5 * mass * cog_vz**2 + mass * gravity * cog_z


def stance_force(cog, cog_vel, toe, gains: HopperGains, mass: float, gravity: float) -> np.ndarray:
    """Desired ground force on the robot during stance."""
    cog = np.asarray(cog, dtype=float)
    v = np.asarray(cog_vel, dtype=float)
    r = cog - np.asarray(toe, dtype=float)
    length = float(np.hypot(*r))
    u = r / length
    axial = gains.spring_stiffness * (gains.rest_length - length)
    if float(v @ u) > 0:
        # extension half: top up the energy lost since the last apex
        deficit = mass * gravity * gains.apex_height - hop_energy(mass, gravity, cog[1], v[1])
        axial += gains.energy_gain * deficit
    F = max(axial, 0.0) * u
    F[0] += gains.horizontal_gain * (gains.target_velocity - v[0])
    return F


def flight_foot_target(v_x: float, gains: HopperGains, stance_time: float | None, reach: float) -> float:
    """Horizontal toe offset ahead of the COG for the next touchdown."""
    T = gains.nominal_stance_time if stance_time is None else stance_time
    x = gains.cg_print_gain * v_x * T / 2 + gains.velocity_gain * (v_x - gains.target_velocity)
    lim = gains.reach_fraction * reach
    return float(np.clip(x, -lim, lim))


def computed_torque(body: Body, kin, acc_des) -> np.ndarray:
    """Leg torques producing ``acc_des`` at the leg joints while the base and
    tail move freely under gravity and their passive forces."""
    M = kin.mass_matrix
    b = kin.bias - body.passive_forces(kin.q, kin.qd)
    a = body.leg_dofs
    u = np.setdiff1d(np.arange(body.n_dof), a)
    acc_u = np.linalg.solve(M[np.ix_(u, u)], -b[u] - M[np.ix_(u, a)] @ acc_des)
    return M[np.ix_(a, a)] @ acc_des + M[np.ix_(a, u)] @ acc_u + b[a]


@dataclass
class HoppingController:
    body: Body
    gains: HopperGains = field(default_factory=HopperGains)
    routing: MuscleRouting | None = None
    contact_height: float = 0.0
    state: PhaseState = field(default_factory=PhaseState)

    def __post_init__(self):
        self._f_prev = None
        self._t_prev = None
        self._touchdown_foot = None
        self._mass = self.body.model.total_mass()
        self._g = self.body.model.gravity
        if self.routing is not None and self.gains.tension_cap > self.routing.f_max.min():
            raise ValueError("tension cap exceeds a muscle's f_max")

    # -- phase machine -------------------------------------------------------
    def _update_phase(self, t, kin, forces):
        toe = kin.point_world(FOOT, (self.body.params.leg_lengths[2], 0.0))
        vel = kin.point_velocity(FOOT, (self.body.params.leg_lengths[2], 0.0))
        if self.state.phase == Phase.STANCE:
            # the foot carries load through the toe or heel
            want = Phase.FLIGHT if forces[:2, 1].sum() <= 0 else Phase.STANCE
        else:
            height = toe[1] - self.contact_height
            if height > self.gains.clearance:
                self.state.armed = True
            down = self.state.armed and height <= 0 and vel[1] < 0
            want = Phase.STANCE if down else Phase.FLIGHT
        if self.state.advance(t, want, self.gains.hysteresis) and self.state.phase == Phase.STANCE:
            self._touchdown_foot = float(kin.angle[self.body.model.body_index(FOOT)])

    # -- torque laws ---------------------------------------------------------
    def stance_torques(self, kin) -> np.ndarray:
        g = self.gains
        toe_pt = (self.body.params.leg_lengths[2], 0.0)
        toe = kin.point_world(FOOT, toe_pt)
        F = stance_force(kin.com_position, kin.com_velocity, toe, g, self._mass, self._g)
        # attitude: a force across the COG-toe line gives a moment about the COG
        r = toe - kin.com_position
        moment = -g.attitude_kp * (kin.q[2] - g.target_pitch) - g.attitude_kd * kin.qd[2]
        F = F + moment / (r @ r) * np.array([-r[1], r[0]])
        J = kin.point_jacobian(FOOT, toe_pt)[:, self.body.leg_dofs]
        tau = -J.T @ F
        # the leg has one spare freedom with the toe planted: hold the foot angle
        # through torques that leave the toe force unchanged
        foot = kin.angle[self.body.model.body_index(FOOT)]
        foot_rate = kin.omega[self.body.model.body_index(FOOT)]
        target = self._touchdown_foot if self._touchdown_foot is not None else g.foot_angle
        tau0 = -(g.foot_kp * (foot - target) + g.foot_kd * foot_rate) * np.ones(3)
        N = np.eye(3) - J.T @ np.linalg.solve(J @ J.T, J)
        tau += N @ tau0
        return tau

    def flight_targets(self, kin) -> np.ndarray:
        g = self.gains
        cog, v = kin.com_position, kin.com_velocity
        reach = g.rest_length
        x_f = flight_foot_target(v[0], g, self.state.last_stance_duration, reach)
        z_f = -np.sqrt(max(reach**2 - x_f**2, 0.0))
        hip = kin.point_world(0, (0.0, 0.0))
        return leg_angles_for_toe(self.body, kin.q[2], hip, cog + np.array([x_f, z_f]), g.foot_angle)

    def flight_torques(self, kin) -> np.ndarray:
        g = self.gains
        a = self.body.leg_dofs
        err = self.flight_targets(kin) - kin.q[a]
        err = (err + np.pi) % (2 * np.pi) - np.pi
        acc = np.clip(g.swing_kp * err - g.swing_kd * kin.qd[a], -g.swing_acc_limit, g.swing_acc_limit)
        return computed_torque(self.body, kin, acc)

    # -- tensions --------------------------------------------------------------
    def allocate(self, kin, tau: np.ndarray, t: float):
        """Tensions for one leg and the joint torque they actually produce."""
        n = self.body.params.leg_count
        if self.routing is None:
            return np.zeros(0), tau, True
        G = muscle_jacobian(self.routing, self.body.model, kin)[:, :3]
        cap = np.minimum(self.gains.tension_cap, self.routing.f_max)
        a = allocate_tensions(G, tau / n, cap)
        f = a.f
        if self._f_prev is not None and t > self._t_prev:
            step = self.gains.slew_rate * (t - self._t_prev)
            f = np.clip(f, self._f_prev - step, self._f_prev + step)
            f = np.clip(f, 0.0, cap)
        elif self._f_prev is not None:
            f = self._f_prev
        return f, n * (-G.T @ f), a.feasible

    def __call__(self, t: float, kin, forces):
        self._update_phase(t, kin, forces)
        if self.state.phase == Phase.STANCE:
            tau = self.stance_torques(kin)
        else:
            tau = self.flight_torques(kin)
        f, applied, ok = self.allocate(kin, tau, t)
        self._f_prev, self._t_prev = f, t
        Q = np.zeros(self.body.n_dof)
        Q[self.body.leg_dofs] = applied
        return Q, {"tensions": f, "phase": int(self.state.phase), "feasible": ok, "tau_desired": tau}
