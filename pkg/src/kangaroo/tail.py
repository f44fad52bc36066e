"""Underactuated elastic tail: a serial chain bent by two antagonist wires.

Both wires run through every link at a constant moment arm ``r``, so with
frictionless routing each wire carries one tension along its whole length and
every joint sees the same wire torque ``r (f_upper - f_lower)``. Positive
(counterclockwise) bending curls the tail toward its upper side when the tail
points along +x.

Each joint has a linear torsional spring and a joint limit. Limits are either
"hard" (angles projected onto the box, used for equilibria) or a one-sided
"penalty" spring ``penalty_factor * k`` beyond the limit (used for dynamics
and for the stiffness metric).

The wires themselves are slightly elastic with tension-proportional axial
stiffness ``k_w(f) = wire_stiffness_gain * f``. This does not change any
equilibrium under prescribed tensions, but when the motors hold their
positions it couples the joints through the wires, which is what makes the
tail stiffer under co-tension.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .dynamics import ChainModel, Link, perp
from .integrate import STEPPERS, BlowUpError, check_speed, semi_implicit_euler


class TensionRangeError(ValueError):
    pass


class EquilibriumError(RuntimeError):
    def __init__(self, msg, theta=None, residual=np.inf):
        super().__init__(msg)
        self.theta = theta
        self.residual = residual


@dataclass(frozen=True)
class TailModel:
    n_joints: int = 8
    link_length: float = 0.05
    mass: float = 1.6
    moment_arm: float = 0.035
    stiffness: float = 10.0
    limit: float = float(np.deg2rad(30.0))
    f_max: float = 450.0
    damping: float = 0.1
    penalty_factor: float = 100.0
    wire_stiffness_gain: float = 20.0  # 1/m
    gravity: float = 9.81
    root_angle: float = 0.0

    def __post_init__(self):
        if self.n_joints < 1:
            raise ValueError("n_joints must be >= 1")
        for name in ("link_length", "mass", "moment_arm", "stiffness", "limit", "f_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("damping", "penalty_factor", "wire_stiffness_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def link_mass(self) -> float:
        return self.mass / self.n_joints

    @property
    def length(self) -> float:
        return self.n_joints * self.link_length

    def links(self) -> tuple[Link, ...]:
        return tuple(Link(self.link_mass, self.link_length, name=f"tail{i}") for i in range(self.n_joints))

    def chain(self, gravity_on: bool = True) -> ChainModel:
        """Standalone tail with its root fixed at the origin."""
        return ChainModel(
            self.links(),
            gravity=self.gravity if gravity_on else 0.0,
            base_origin=(0.0, 0.0, self.root_angle),
        )

    @cached_property
    def _chains(self):
        return {True: self.chain(True), False: self.chain(False)}


def check_tensions(model: TailModel, f_upper: float, f_lower: float) -> None:
    for name, f in (("f_upper", f_upper), ("f_lower", f_lower)):
        if not (0.0 <= f <= model.f_max):
            raise TensionRangeError(f"{name}={f} outside [0, {model.f_max}] N")


def tail_wire_torques(model: TailModel, theta, f_upper: float, f_lower: float) -> np.ndarray:
    check_tensions(model, f_upper, f_lower)
    n = np.shape(theta)[0] if np.ndim(theta) else model.n_joints
    return np.full(n, model.moment_arm * (f_upper - f_lower))


def limit_excess(model: TailModel, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    return np.sign(th) * np.maximum(np.abs(th) - model.limit, 0.0)


def tail_spring_torques(model: TailModel, theta) -> np.ndarray:
    """Joint spring torque plus the stiff penalty layer past the limits."""
    th = np.asarray(theta, dtype=float)
    k = model.stiffness
    return -k * th - model.penalty_factor * k * limit_excess(model, th)


def tail_spring_energy(model: TailModel, theta) -> float:
    th = np.asarray(theta, dtype=float)
    k = model.stiffness
    ex = limit_excess(model, th)
    return float(0.5 * k * (th @ th) + 0.5 * model.penalty_factor * k * (ex @ ex))


def closed_form_equilibrium(model: TailModel, f_upper: float, f_lower: float) -> np.ndarray:
    """Gravity-free equilibrium with hard limits: every joint bends equally."""
    check_tensions(model, f_upper, f_lower)
    a = model.moment_arm * (f_upper - f_lower) / model.stiffness
    return np.full(model.n_joints, float(np.clip(a, -model.limit, model.limit)))


def _gravity_bound(model: TailModel, gravity_on: bool) -> float:
    # crude bound on the gravity Hessian: total weight times tail length
    return model.mass * model.gravity * model.length if gravity_on else 0.0


def _relax(force, theta0, L, mu, lo=None, hi=None, tol=1e-10, max_iter=20000):
    """Damped dynamic relaxation (heavy-ball) toward ``force(theta) = 0``.

    Unit fictitious inertia, step and damping from the stiffness bounds
    ``mu <= K <= L``. With ``lo``/``hi`` the angles are projected onto the box
    and clamped coordinates lose their velocity. Converged when the
    projected-gradient force residual drops below ``tol`` (N m).
    """
    sL, smu = np.sqrt(L), np.sqrt(max(mu, 1e-9 * L))
    alpha = 4.0 / (sL + smu) ** 2
    beta = ((sL - smu) / (sL + smu)) ** 2
    th = np.array(theta0, dtype=float)
    v = np.zeros_like(th)
    box = lo is not None

    def proj(x):
        return np.clip(x, lo, hi) if box else x

    res = np.inf
    for it in range(1, max_iter + 1):
        F = force(th)
        res = float(np.abs(proj(th + F / L) - th).max() * L)
        if res < tol:
            return th, res, it
        v = beta * v + alpha * F
        new = proj(th + v)
        if box:
            v = np.where((new <= lo) | (new >= hi), 0.0, new - th)
        th = new
    raise EquilibriumError(f"relaxation did not converge (residual {res:.3g} N m)", th, res)


def _static_force(model: TailModel, chain: ChainModel, torque: Callable, limit_model: str):
    def force(th):
        f = torque(th)
        if limit_model == "hard":
            f = f - model.stiffness * th
        else:
            f = f + tail_spring_torques(model, th)
        if chain.gravity:
            f = f - chain.kinematics(th).gravity_forces
        return f

    return force


def tail_static_equilibrium(
    model: TailModel,
    f_upper: float,
    f_lower: float,
    gravity_on: bool = True,
    limit_model: str = "hard",
    method: str = "auto",
    tol: float = 1e-10,
    theta0=None,
) -> np.ndarray:
    """Joint angles at rest under constant wire tensions.

    ``method="auto"`` uses the closed form when gravity is off and limits are
    hard, and dynamic relaxation otherwise; ``"relaxation"`` forces the
    iterative solver.
    """
    check_tensions(model, f_upper, f_lower)
    if limit_model not in ("hard", "penalty"):
        raise ValueError("limit_model must be 'hard' or 'penalty'")
    if method not in ("auto", "relaxation"):
        raise ValueError("method must be 'auto' or 'relaxation'")
    if method == "auto" and not gravity_on and limit_model == "hard":
        return closed_form_equilibrium(model, f_upper, f_lower)
    chain = model._chains[bool(gravity_on)]
    wire = model.moment_arm * (f_upper - f_lower)
    force = _static_force(model, chain, lambda th: np.full_like(th, wire), limit_model)
    k = model.stiffness
    g = _gravity_bound(model, gravity_on)
    L = k * (1 + (model.penalty_factor if limit_model == "penalty" else 0.0)) + g
    box = (-model.limit, model.limit) if limit_model == "hard" else (None, None)
    th0 = np.zeros(model.n_joints) if theta0 is None else theta0
    th, _, _ = _relax(force, th0, L, k - g, *box, tol=tol)
    return th


def tail_tip(model: TailModel, theta, gravity_on: bool = True) -> np.ndarray:
    chain = model._chains[bool(gravity_on)]
    return chain.kinematics(np.asarray(theta, dtype=float)).link_tip(model.n_joints - 1)


def _probe_direction(model: TailModel, kin) -> np.ndarray:
    tip = kin.link_tip(model.n_joints - 1)
    chord = tip - kin.origin[0]
    if np.linalg.norm(chord) < 1e-3:
        a = kin.angle[-1]
        chord = np.array([np.cos(a), np.sin(a)])
    return perp(chord / np.linalg.norm(chord))


def tail_stiffness_metric(
    model: TailModel, f_upper: float, f_lower: float, probe: float = 1.0, gravity_on: bool = False
) -> float:
    """Tip force over tip displacement for a small probe, motors held.

    The probe pushes the tip perpendicular to the root-to-tip chord. While it
    deflects the tail the wire motors keep their positions, so wire tensions
    change with the elastic wire stretch. Limits use the penalty layer so
    that joints parked on a limit still have a finite stiffness.
    """
    check_tensions(model, f_upper, f_lower)
    chain = model._chains[bool(gravity_on)]
    th0 = tail_static_equilibrium(model, f_upper, f_lower, gravity_on, limit_model="penalty", tol=1e-12)
    kin0 = chain.kinematics(th0)
    tip0 = kin0.link_tip(model.n_joints - 1)
    d = _probe_direction(model, kin0)
    r = model.moment_arm
    kw_u = model.wire_stiffness_gain * f_upper
    kw_l = model.wire_stiffness_gain * f_lower
    s0 = th0.sum()
    last = model.n_joints - 1
    tip_local = (model.link_length, 0.0)

    def wire_torque(th):
        # the upper wire slackens and the lower wire stretches as the tail curls up
        stretch = r * (th.sum() - s0)
        fu = max(f_upper - kw_u * stretch, 0.0)
        fl = max(f_lower + kw_l * stretch, 0.0)
        J = chain.kinematics(th).point_jacobian(last, tip_local)
        return np.full_like(th, r * (fu - fl)) + J.T @ (probe * d)

    force = _static_force(model, chain, wire_torque, "penalty")
    k = model.stiffness
    g = _gravity_bound(model, gravity_on)
    L = k * (1 + model.penalty_factor) + model.n_joints * r**2 * (kw_u + kw_l) + g
    th1, _, _ = _relax(force, th0, L, k - g, tol=1e-12)
    disp = float((tail_tip(model, th1, gravity_on) - tip0) @ d)
    if disp <= 0:
        raise EquilibriumError("probe produced no deflection", th1, disp)
    return probe / disp


def analytic_stiffness(model: TailModel, theta, f_upper: float, f_lower: float) -> float:
    """Linearized gravity-free counterpart of :func:`tail_stiffness_metric`."""
    theta = np.asarray(theta, dtype=float)
    chain = model._chains[False]
    kin = chain.kinematics(theta)
    k = model.stiffness
    in_penalty = np.abs(theta) > model.limit
    K = np.diag(np.where(in_penalty, k * (1 + model.penalty_factor), k))
    kw = model.wire_stiffness_gain * (f_upper + f_lower)
    K = K + model.moment_arm**2 * kw * np.ones_like(K)
    J = kin.point_jacobian(model.n_joints - 1, (model.link_length, 0.0))
    d = _probe_direction(model, kin)
    Jd = J.T @ d
    return 1.0 / float(Jd @ np.linalg.solve(K, Jd))


# -- dynamics -------------------------------------------------------------

@dataclass
class TailState:
    theta: np.ndarray
    theta_dot: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.theta_dot = np.zeros_like(self.theta) if self.theta_dot is None else np.asarray(
            self.theta_dot, dtype=float)


def tail_joint_torques(model: TailModel, theta, theta_dot, f_upper, f_lower, damping=None) -> np.ndarray:
    """Wire, spring (with penalty limits) and viscous joint torques."""
    c = model.damping if damping is None else damping
    return (
        tail_wire_torques(model, theta, f_upper, f_lower)
        + tail_spring_torques(model, theta)
        - c * np.asarray(theta_dot, dtype=float)
    )


def tail_dynamics_step(
    model: TailModel,
    state: TailState,
    f_upper: float,
    f_lower: float,
    dt: float,
    gravity_on: bool = True,
    damping=None,
    max_speed: float = 1e3,
) -> TailState:
    """Advance the standalone tail by one semi-implicit Euler step."""
    chain = model._chains[bool(gravity_on)]
    tau = tail_joint_torques(model, state.theta, state.theta_dot, f_upper, f_lower, damping)
    q, qd, _ = semi_implicit_euler(chain, state.theta, state.theta_dot, tau, dt)
    check_speed(qd, max_speed, state.t + dt)
    return TailState(q, qd, state.t + dt)


@dataclass
class TailTrace:
    t: np.ndarray
    theta: np.ndarray
    tip: np.ndarray
    f_upper: np.ndarray
    f_lower: np.ndarray
    energy: np.ndarray = field(default=None)


def simulate_tail(
    model: TailModel,
    tensions: Callable[[float], tuple[float, float]],
    duration: float,
    dt: float = 1e-4,
    theta0=None,
    gravity_on: bool = True,
    damping=None,
    record_every: int = 10,
    integrator: str = "semi_implicit_euler",
    max_speed: float = 1e3,
) -> TailTrace:
    """Integrate the standalone tail under a tension schedule ``t -> (f_u, f_l)``.

    Tensions are held constant over each step. ``energy`` records kinetic +
    gravity + spring energy minus the work done by the wires so far, which is
    constant without damping.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if integrator not in STEPPERS:
        raise ValueError(f"unknown integrator {integrator!r}")
    chain = model._chains[bool(gravity_on)]
    th = np.zeros(model.n_joints) if theta0 is None else np.array(theta0, dtype=float)
    thd = np.zeros_like(th)
    n = int(round(duration / dt))
    rows_t, rows_th, rows_tip, rows_fu, rows_fl, rows_e = [], [], [], [], [], []
    wire_work = 0.0
    step = STEPPERS[integrator]
    for i in range(n + 1):
        t = i * dt
        fu, fl = tensions(t)
        check_tensions(model, fu, fl)
        if i % record_every == 0 or i == n:
            kin = chain.kinematics(th, thd)
            rows_t.append(t)
            rows_th.append(th.copy())
            rows_tip.append(kin.link_tip(model.n_joints - 1))
            rows_fu.append(fu)
            rows_fl.append(fl)
            rows_e.append(kin.kinetic_energy + kin.potential_energy
                          + tail_spring_energy(model, th) - wire_work)
        if i == n:
            break

        def force(_t, x, v, fu=fu, fl=fl):
            return tail_joint_torques(model, x, v, fu, fl, damping)

        new, thd = step(chain, th, thd, force, dt, t)
        check_speed(thd, max_speed, t + dt)
        wire_work += model.moment_arm * (fu - fl) * float((new - th).sum())
        th = new
    return TailTrace(np.array(rows_t), np.array(rows_th), np.array(rows_tip),
                     np.array(rows_fu), np.array(rows_fl), np.array(rows_e))


__all__ = [
    "BlowUpError",
    "EquilibriumError",
    "TailModel",
    "TailState",
    "TailTrace",
    "TensionRangeError",
    "analytic_stiffness",
    "closed_form_equilibrium",
    "simulate_tail",
    "tail_dynamics_step",
    "tail_joint_torques",
    "tail_spring_energy",
    "tail_spring_torques",
    "tail_static_equilibrium",
    "tail_stiffness_metric",
    "tail_tip",
    "tail_wire_torques",
]
