"""Leap-trajectory muscle analysis for one hind leg.

Pipeline: COG trajectory of a periodic leap -> joint trajectory by inverse
kinematics -> joint torques by inverse dynamics with the toe as a passive
ground pivot and a tail wrench on the torso -> minimum-norm muscle tensions
and muscle velocities.

The analysis chain is rooted at the toe: links are foot (toe -> ankle),
shank (ankle -> knee), thigh (knee -> hip) and torso (from the hip), so the
joint vector is ``(toe, ankle, knee, hip)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ChainModel, DimensionError, Kinematics
from .muscle import MuscleRouting, allocate_tensions, muscle_jacobian, muscle_lengths

TOE, ANKLE, KNEE, HIP = 0, 1, 2, 3
TORSO_LINK = 3
JOINT_NAMES = ("toe", "ankle", "knee", "hip")


class IKError(RuntimeError):
    def __init__(self, msg, theta=None, residual=np.inf):
        super().__init__(msg)
        self.theta = theta
        self.residual = residual


class UnreachableError(IKError):
    pass


class NearSingularError(IKError):
    pass


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class LeapParams:
    horizontal_velocity: float = 2.0
    stance_shift: float = 0.4
    flight_shift: float = 0.6
    torso_pitch: float = np.deg2rad(20.0)
    sample_count: int = 2000
    touchdown_height: float = 0.55
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("horizontal_velocity", "stance_shift", "flight_shift", "touchdown_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.sample_count < 100:
            raise ValueError("sample_count must be >= 100")

    @property
    def stance_time(self) -> float:
        return self.stance_shift / self.horizontal_velocity

    @property
    def flight_time(self) -> float:
        return self.flight_shift / self.horizontal_velocity

    @property
    def takeoff_speed(self) -> float:
        """Vertical COG speed at takeoff, set by the ballistic flight time."""
        return 0.5 * self.gravity * self.flight_time

    @property
    def stance_depth(self) -> float:
        return self.takeoff_speed * self.stance_time / np.pi


@dataclass
class CogTrajectory:
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    xd: np.ndarray
    zd: np.ndarray
    boundary: int  # last stance sample

    @property
    def stance(self) -> slice:
        return slice(0, self.boundary + 1)


def _cog_state(p: LeapParams, t):
    """Piecewise COG state; the stance sine lobe meets the flight parabola
    with matching position and velocity at both ends."""
    t = np.asarray(t, dtype=float)
    v, Ts, vz, g = p.horizontal_velocity, p.stance_time, p.takeoff_speed, p.gravity
    x0 = -0.5 * p.stance_shift
    z0 = p.touchdown_height
    x = x0 + v * t
    xd = np.full_like(t, v)
    stance = t <= Ts
    w = np.pi / Ts
    z_st = z0 - vz / w * np.sin(w * t)
    zd_st = -vz * np.cos(w * t)
    tf = t - Ts
    z_fl = z0 + vz * tf - 0.5 * g * tf**2
    zd_fl = vz - g * tf
    return x, np.where(stance, z_st, z_fl), xd, np.where(stance, zd_st, zd_fl)


def cog_trajectory(params: LeapParams) -> CogTrajectory:
    """One stance + one flight phase, COG x measured from the toe."""
    T = params.stance_time + params.flight_time
    t = np.linspace(0.0, T, params.sample_count)
    x, z, xd, zd = _cog_state(params, t)
    boundary = int(np.searchsorted(t, params.stance_time, side="right") - 1)
    return CogTrajectory(t, x, z, xd, zd, boundary)


# -- inverse kinematics ------------------------------------------------------

def _ik_residual(kin: Kinematics, cog_target, torso_pitch):
    return np.array([
        kin.com_position[0] - cog_target[0],
        kin.com_position[1] - cog_target[1],
        kin.angle[TORSO_LINK] - torso_pitch,
    ])


def _ik_jacobian(kin: Kinematics):
    J = np.zeros((3, kin.model.n_dof))
    J[:2] = kin.com_jacobian
    J[2] = kin.angular_jacobian(TORSO_LINK)
    return J


def _com_hessians(com_jac: np.ndarray) -> np.ndarray:
    """Second derivatives of the COM of a serial chain, shape (2, n, n).

    Column j of the COM Jacobian is perp(D_j) with D_j the mass-weighted
    lever from joint j to the COM of everything beyond it; turning an outer
    joint rotates that lever, so d2(com)/dq_i dq_j = -D_max(i,j).
    """
    D = np.stack([com_jac[1], -com_jac[0]])  # (2, n)
    n = com_jac.shape[1]
    idx = np.maximum.outer(np.arange(n), np.arange(n))
    return -D[:, idx]


def leg_inverse_kinematics(
    model: ChainModel,
    toe_anchor,
    cog_target,
    torso_pitch: float,
    theta0=None,
    posture=None,
    tol=1e-9,
    max_iter=100,
    damping=1e-6,
) -> np.ndarray:
    """Joint angles placing the whole-body COG at ``cog_target``.

    The toe is pinned at ``toe_anchor`` and the torso held at ``torso_pitch``.
    The remaining freedom is spent staying as close as possible to
    ``posture`` (defaults to ``theta0``): the result is the constrained
    nearest point, found by Newton steps on the optimality conditions, with a
    damped least-squares correction while the constraints are still far off.
    """
    toe_anchor = np.asarray(toe_anchor, dtype=float)
    target = np.asarray(cog_target, dtype=float)
    m = replace(model, base_origin=(toe_anchor[0], toe_anchor[1], model.base_origin[2]))
    n = m.n_dof
    th = np.zeros(n) if theta0 is None else np.array(theta0, dtype=float)
    if th.shape != (n,):
        raise DimensionError("theta0 dimension mismatch")
    post = th.copy() if posture is None else np.asarray(posture, dtype=float)
    lam = np.zeros(3)
    K = np.zeros((n + 3, n + 3))
    for _ in range(max_iter):
        kin = m.kinematics(th)
        e = _ik_residual(kin, target, torso_pitch)
        J = _ik_jacobian(kin)
        if np.abs(e).max() > 1e-3:
            # far from the constraint set: plain damped least squares
            step = -J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(3), e)
        else:
            Hc = _com_hessians(J[:2])
            K[:n, :n] = np.eye(n) + np.tensordot(lam[:2], Hc, axes=1)
            K[:n, n:] = J.T
            K[n:, :n] = J
            K[n:, n:] = -damping**2 * np.eye(3)
            rhs = np.concatenate([-(th - post) - J.T @ lam, -e])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            step = sol[:n]
            lam = lam + sol[n:]
        if np.abs(e).max() < tol and np.abs(step).max() < 1e-12:
            return th
        th = th + step
    kin = m.kinematics(th)
    e = _ik_residual(kin, target, torso_pitch)
    res = float(np.abs(e).max())
    if res < tol:
        return th
    if res < 1e-4:
        raise NearSingularError(f"IK stalled near a singularity (residual {res:.3g})", th, res)
    raise UnreachableError(f"COG target unreachable (residual {res:.3g})", th, res)


def joint_trajectory(model: ChainModel, cog: CogTrajectory, params: LeapParams, posture) -> np.ndarray:
    """IK along the stance samples, warm-started sample to sample."""
    thetas = []
    guess = np.asarray(posture, dtype=float)
    for i in range(cog.boundary + 1):
        if i >= 2:
            guess = 2 * thetas[-1] - thetas[-2]
        elif i == 1:
            guess = thetas[-1]
        thetas.append(leg_inverse_kinematics(
            model, (0.0, 0.0), (cog.x[i], cog.z[i]), params.torso_pitch, theta0=guess, posture=posture
        ))
    return np.array(thetas)


def differentiate_trajectory(theta, dt: float):
    """Velocity and acceleration of uniformly sampled joint angles.

    Central differences inside, second-order one-sided differences at the ends.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples to differentiate")
    vel = np.gradient(theta, dt, axis=0, edge_order=2)
    acc = np.empty_like(theta)
    acc[1:-1] = (theta[2:] - 2 * theta[1:-1] + theta[:-2]) / dt**2
    if n >= 4:
        acc[0] = (2 * theta[0] - 5 * theta[1] + 4 * theta[2] - theta[3]) / dt**2
        acc[-1] = (2 * theta[-1] - 5 * theta[-2] + 4 * theta[-3] - theta[-4]) / dt**2
    else:
        acc[0] = acc[1]
        acc[-1] = acc[-2]
    return vel, acc


# -- inverse dynamics with the tail wrench ------------------------------------

def tail_jacobian(kin: Kinematics, tail_attachment) -> np.ndarray:
    """3 x n Jacobian of a torso-fixed point: rows (x, z, rotation)."""
    J = np.zeros((3, kin.model.n_dof))
    J[:2] = kin.point_jacobian(TORSO_LINK, tail_attachment)
    J[2] = kin.angular_jacobian(TORSO_LINK)
    return J


def stance_torques_with_tail(model: ChainModel, theta, theta_dot, theta_ddot, tail_attachment,
                             tail_jac=None):
    """Per-sample hip/knee/ankle torques and the tail wrench.

    Solves ``M qdd + b = [0; tau'] + J_tail^T f_tail``: the toe row fixes the
    tail wrench's toe-axis moment and the minimum-norm wrench with that moment
    is taken. Returns ``(tau, f_tail, residual)`` with ``tau`` over all four
    joints (toe entry zero).
    """
    theta = np.atleast_2d(theta)
    n = theta.shape[0]
    tau = np.zeros_like(theta)
    f_tail = np.zeros((n, 3))
    resid = np.zeros(n)
    for i in range(n):
        kin = model.kinematics(theta[i], theta_dot[i])
        lhs = kin.mass_matrix @ theta_ddot[i] + kin.bias
        J = tail_jacobian(kin, tail_attachment) if tail_jac is None else tail_jac(kin)
        j = J[:, TOE]
        jj = float(j @ j)
        if jj <= 1e-14:
            if abs(lhs[TOE]) > 1e-9 * max(1.0, np.abs(lhs).max()):
                raise SingularSystemError(f"sample {i}: tail wrench cannot act about the toe")
            w = np.zeros(3)
        else:
            w = j * lhs[TOE] / jj
        t = lhs - J.T @ w
        tau[i, 1:] = t[1:]
        f_tail[i] = w
        full = np.concatenate([[0.0], tau[i, 1:]]) + J.T @ w
        resid[i] = np.abs(lhs - full).max() / max(1.0, np.abs(lhs).max())
    return tau, f_tail, resid


@dataclass
class MuscleProfiles:
    f: np.ndarray  # (samples, muscles)
    velocity: np.ndarray  # (samples, muscles), dL/dt
    lengths: np.ndarray
    feasible: np.ndarray  # (samples,) bool
    residual: np.ndarray


def muscle_profiles(routing: MuscleRouting, model: ChainModel, theta, theta_dot, tau) -> MuscleProfiles:
    n = len(theta)
    k = len(routing)
    f = np.zeros((n, k))
    vel = np.zeros((n, k))
    L = np.zeros((n, k))
    ok = np.zeros(n, dtype=bool)
    res = np.zeros(n)
    fmax = routing.f_max
    for i in range(n):
        kin = model.kinematics(theta[i], theta_dot[i])
        G = muscle_jacobian(routing, model, kin)
        L[i] = muscle_lengths(routing, model, kin)
        a = allocate_tensions(G, tau[i], fmax)
        f[i], ok[i], res[i] = a.f, a.feasible, a.residual
        vel[i] = G @ theta_dot[i]
    return MuscleProfiles(f, vel, L, ok, res)


@dataclass
class JumpAnalysis:
    params: LeapParams
    cog: CogTrajectory
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    theta_ddot: np.ndarray
    tau: np.ndarray
    f_tail: np.ndarray
    muscles: MuscleProfiles
    muscle_names: list

    def summary(self) -> dict:
        f = self.muscles.f
        v = self.muscles.velocity
        return {
            "stance_time": self.params.stance_time,
            "flight_time": self.params.flight_time,
            "takeoff_speed": self.params.takeoff_speed,
            "stance_depth": self.params.stance_depth,
            "peak_tension": dict(zip(self.muscle_names, f.max(axis=0).tolist())),
            "peak_speed": dict(zip(self.muscle_names, np.abs(v).max(axis=0).tolist())),
            "peak_torque": dict(zip(JOINT_NAMES[1:], np.abs(self.tau[:, 1:]).max(axis=0).tolist())),
            "infeasible_samples": int((~self.muscles.feasible).sum()),
        }


def analyze_jump(model: ChainModel, routing: MuscleRouting, params: LeapParams, posture,
                 tail_attachment) -> JumpAnalysis:
    cog = cog_trajectory(params)
    theta = joint_trajectory(model, cog, params, posture)
    dt = cog.t[1] - cog.t[0]
    th_d, th_dd = differentiate_trajectory(theta, dt)
    tau, f_tail, _ = stance_torques_with_tail(model, theta, th_d, th_dd, tail_attachment)
    prof = muscle_profiles(routing, model, theta, th_d, tau)
    return JumpAnalysis(params, cog, cog.t[cog.stance], theta, th_d, th_dd, tau, f_tail, prof,
                        routing.names)
