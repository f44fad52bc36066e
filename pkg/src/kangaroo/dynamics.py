"""Planar articulated rigid-body kinematics and dynamics.

Conventions (used everywhere in the package):

* World frame: x horizontal (forward), z vertical (up). Gravity acts along -z.
* Angles and torques are counterclockwise positive. A link's absolute angle is
  its parent's absolute angle plus its mount angle plus its joint angle.
* Each link frame has its origin at the link's joint; the link runs along the
  frame's +x axis, so the link tip is at ``(length, 0)`` in link frame.
* Floating-base models prepend three coordinates ``(x, z, pitch)`` describing
  the base body frame; ``q = [x, z, pitch, theta_1 .. theta_n]``. Fixed-base
  models have ``q = theta``.

The equations of motion are assembled with Kane's method from the geometric
Jacobians of the link centres of mass, which is exact for planar trees:

    M(q) qdd + b(q, qd) = tau + sum_w J_w^T w
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

BASE = -1


class DimensionError(ValueError):
    pass


class SingularMassMatrixError(np.linalg.LinAlgError):
    pass


def perp(v):
    """Rotate planar vector(s) by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Link:
    """One rigid link and the revolute joint that attaches it to its parent.

    ``com`` is the distance of the centre of mass along the link (default
    mid-link) and ``inertia`` the scalar inertia about it (default slender rod
    ``m l^2 / 12``). ``parent=None`` means the previous link (serial chain);
    ``-1`` is the base. ``mount`` is the joint position in the parent frame,
    defaulting to the parent's tip (or the base origin).
    """

    mass: float
    length: float
    com: float | None = None
    inertia: float | None = None
    parent: int | None = None
    mount: tuple[float, float] | None = None
    mount_angle: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.mass < 0:
            raise ValueError(f"link {self.name!r}: mass must be >= 0")
        if self.length <= 0:
            raise ValueError(f"link {self.name!r}: length must be > 0")
        if self.com is None:
            object.__setattr__(self, "com", 0.5 * self.length)
        if self.inertia is None:
            object.__setattr__(self, "inertia", self.mass * self.length**2 / 12.0)
        if self.inertia < 0:
            raise ValueError(f"link {self.name!r}: inertia must be >= 0")


@dataclass(frozen=True)
class BaseBody:
    """Mass properties of a floating base, ``com`` given in the base frame."""

    mass: float
    inertia: float
    com: tuple[float, float] = (0.0, 0.0)
    name: str = "base"


@dataclass(frozen=True)
class ChainModel:
    links: tuple[Link, ...]
    gravity: float = 9.81
    base_kind: str = "fixed"
    base: BaseBody | None = None
    # pose of the base frame for fixed-base models
    base_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if self.base_kind not in ("fixed", "floating"):
            raise ValueError("base_kind must be 'fixed' or 'floating'")
        if self.base_kind == "floating" and self.base is None:
            raise ValueError("floating-base model needs a BaseBody")
        for i, p in enumerate(self.parents):
            if not (-1 <= p < i):
                raise ValueError(f"link {i}: parent {p} must precede it")

    @property
    def floating(self) -> bool:
        return self.base_kind == "floating"

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_base(self) -> int:
        return 3 if self.floating else 0

    @property
    def n_dof(self) -> int:
        return self.n_base + self.n_links

    @cached_property
    def parents(self) -> tuple[int, ...]:
        return tuple(
            (i - 1 if lk.parent is None else lk.parent) for i, lk in enumerate(self.links)
        )

    @cached_property
    def _tables(self):
        """Static index tables: bodies are [base (if floating)] + links."""
        nb = self.n_links + (1 if self.floating else 0)
        off = 1 if self.floating else 0
        nd = self.n_dof
        anc = np.zeros((nb, nd))
        # revolute dof -> driven body, parent body (-1 world)
        rev_dofs = []
        rev_body = []
        rev_parent = []
        if self.floating:
            anc[0, :3] = 1.0
            rev_dofs.append(2)
            rev_body.append(0)
            rev_parent.append(-1)
        for i, p in enumerate(self.parents):
            b = i + off
            pb = p + off if p >= 0 else (0 if self.floating else -1)
            if pb >= 0:
                anc[b] = anc[pb]
            anc[b, self.n_base + i] = 1.0
            rev_dofs.append(self.n_base + i)
            rev_body.append(b)
            rev_parent.append(pb)
        mass = np.array(([self.base.mass] if self.floating else []) + [lk.mass for lk in self.links])
        inertia = np.array(
            ([self.base.inertia] if self.floating else []) + [lk.inertia for lk in self.links]
        )
        mount_x, mount_z, parent_body = [], [], []
        for i, (lk, p) in enumerate(zip(self.links, self.parents)):
            if lk.mount is not None:
                m = lk.mount
            elif p >= 0:
                m = (self.links[p].length, 0.0)
            else:
                m = (0.0, 0.0)
            mount_x.append(float(m[0]))
            mount_z.append(float(m[1]))
            parent_body.append(p + off if p >= 0 else (0 if self.floating else -1))
        com_local = np.array(
            ([tuple(self.base.com)] if self.floating else [])
            + [(lk.com, 0.0) for lk in self.links],
            dtype=float,
        ).reshape(nb, 2)
        Jw = anc * np.isin(np.arange(nd), rev_dofs)[None, :]
        return dict(
            anc_rev=anc[:, rev_dofs],
            mass2=np.repeat(mass, 2),
            rot_inertia=Jw.T @ (inertia[:, None] * Jw),
            mount_x=mount_x,
            mount_z=mount_z,
            mount_angle=[float(lk.mount_angle) for lk in self.links],
            parent_body=parent_body,
            com_local=com_local,
            nb=nb,
            off=off,
            anc=anc,
            rev_dofs=np.array(rev_dofs, dtype=int),
            rev_body=np.array(rev_body, dtype=int),
            rev_parent=np.array(rev_parent, dtype=int),
            mass=mass,
            inertia=inertia,
            is_rev=np.isin(np.arange(nd), rev_dofs),
            anc_links=anc[:, self.n_base:].copy(),
            mount_angle_arr=np.array([float(lk.mount_angle) for lk in self.links]),
            mount_x_arr=np.array(mount_x),
            mount_z_arr=np.array(mount_z),
            parent_body_arr=np.array(parent_body, dtype=int),
            com_x=com_local[:, 0].copy(),
            com_z=com_local[:, 1].copy(),
        )

    def body_index(self, link: int) -> int:
        """Internal body index for a link index (``-1`` = base)."""
        if not (-1 <= link < self.n_links):
            raise IndexError(f"invalid link index {link}")
        if link == BASE:
            # fixed base: -1 marks the static base frame
            return 0 if self.floating else -1
        return link + self._tables["off"]

    def total_mass(self) -> float:
        return float(self._tables["mass"].sum())

    def kinematics(self, q, qd=None) -> "Kinematics":
        return Kinematics(self, q, qd)


@dataclass
class ChainState:
    theta: np.ndarray
    theta_dot: np.ndarray | None = None
    base_pose: np.ndarray | None = None
    base_vel: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if self.theta_dot is None:
            self.theta_dot = np.zeros_like(self.theta)
        self.theta_dot = np.atleast_1d(np.asarray(self.theta_dot, dtype=float))
        if self.theta_dot.shape != self.theta.shape:
            raise DimensionError("theta and theta_dot dimensions differ")
        if self.base_pose is not None:
            self.base_pose = np.asarray(self.base_pose, dtype=float).reshape(3)
            if self.base_vel is None:
                self.base_vel = np.zeros(3)
            self.base_vel = np.asarray(self.base_vel, dtype=float).reshape(3)

    @property
    def q(self) -> np.ndarray:
        if self.base_pose is None:
            return self.theta.copy()
        return np.concatenate([self.base_pose, self.theta])

    @property
    def qd(self) -> np.ndarray:
        if self.base_pose is None:
            return self.theta_dot.copy()
        return np.concatenate([self.base_vel, self.theta_dot])

    @classmethod
    def from_q(cls, model: ChainModel, q, qd=None) -> "ChainState":
        q = np.asarray(q, dtype=float)
        qd = np.zeros_like(q) if qd is None else np.asarray(qd, dtype=float)
        if model.floating:
            return cls(q[3:], qd[3:], q[:3], qd[:3])
        return cls(q, qd)


@dataclass(frozen=True)
class ExternalWrench:
    """Planar wrench applied to a link at a point given in the link frame."""

    link: int
    point: tuple[float, float] = (0.0, 0.0)
    force: tuple[float, float] = (0.0, 0.0)
    torque: float = 0.0


def _as_q(model: ChainModel, state) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(state, ChainState):
        if state.theta.shape != (model.n_links,):
            raise DimensionError(
                f"expected {model.n_links} joint angles, got {state.theta.shape[0]}"
            )
        if model.floating and state.base_pose is None:
            raise DimensionError("floating-base model needs base_pose")
        if not model.floating and state.base_pose is not None:
            raise DimensionError("fixed-base model does not take base_pose")
        return state.q, state.qd
    q = np.atleast_1d(np.asarray(state, dtype=float))
    if q.shape != (model.n_dof,):
        raise DimensionError(f"expected {model.n_dof} coordinates, got {q.shape}")
    return q, np.zeros_like(q)


class Kinematics:
    """Kinematic snapshot of a model at (q, qd); dynamics quantities are lazy."""

    def __init__(self, model: ChainModel, q, qd=None):
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape != (model.n_dof,):
            raise DimensionError(f"expected {model.n_dof} coordinates, got {q.shape}")
        qd = np.zeros_like(q) if qd is None else np.atleast_1d(np.asarray(qd, dtype=float))
        if qd.shape != q.shape:
            raise DimensionError("q and qd dimensions differ")
        self.model = model
        self.q = q
        self.qd = qd
        t = model._tables
        nbase = model.n_base
        if model.floating:
            rx, rz, rth = float(q[0]), float(q[1]), float(q[2])
            rom = float(qd[2])
        else:
            rx, rz, rth = model.base_origin
            rom = 0.0
        # absolute angles, rates and joint origins: sums over ancestor links
        A = t["anc_links"]
        angle = rth + A @ (t["mount_angle_arr"] + q[nbase:])
        omega = rom + A @ qd[nbase:]
        cs = np.cos(angle)
        sn = np.sin(angle)
        pidx = t["parent_body_arr"] + 1
        c0, s0 = np.cos(rth), np.sin(rth)
        pc = np.concatenate(([c0], cs))[pidx]
        ps = np.concatenate(([s0], sn))[pidx]
        mx, mz = t["mount_x_arr"], t["mount_z_arr"]
        nb = t["nb"]
        origin = np.empty((nb, 2))
        origin[:, 0] = rx + A @ (pc * mx - ps * mz)
        origin[:, 1] = rz + A @ (ps * mx + pc * mz)
        lcx, lcz = t["com_x"], t["com_z"]
        com = np.empty((nb, 2))
        com[:, 0] = origin[:, 0] + cs * lcx - sn * lcz
        com[:, 1] = origin[:, 1] + sn * lcx + cs * lcz
        self._root_pos = (rx, rz)
        self._root_angle = rth
        self.origin = origin
        self.angle = angle
        self.omega = omega
        self.com = com
        # revolute pivots and the angular-velocity jumps across them
        rb, rp = t["rev_body"], t["rev_parent"]
        self.pivot = origin[rb]
        om_parent = np.where(rp >= 0, omega[np.maximum(rp, 0)], 0.0)
        self._dom2 = omega[rb] ** 2 - om_parent**2

    # -- point quantities -------------------------------------------------
    def _body_frame(self, body: int):
        if body < 0:
            return np.array(self._root_pos, dtype=float), rot(self._root_angle)
        return self.origin[body], rot(self.angle[body])

    def point_world(self, link: int, point=(0.0, 0.0)) -> np.ndarray:
        b = self.model.body_index(link)
        o, R = self._body_frame(b)
        return o + R @ np.asarray(point, dtype=float)

    def _jac_world_point(self, body: int, p: np.ndarray) -> np.ndarray:
        t = self.model._tables
        nd = self.model.n_dof
        J = np.zeros((2, nd))
        if body < 0:
            return J
        anc = t["anc"][body]
        rd = t["rev_dofs"]
        d = p - self.pivot
        J[:, rd] = (perp(d) * anc[rd][:, None]).T
        if self.model.floating:
            J[0, 0] = 1.0
            J[1, 1] = 1.0
        return J

    def point_jacobian(self, link: int, point=(0.0, 0.0)) -> np.ndarray:
        b = self.model.body_index(link)
        return self._jac_world_point(b, self.point_world(link, point))

    def angular_jacobian(self, link: int) -> np.ndarray:
        b = self.model.body_index(link)
        t = self.model._tables
        if b < 0:
            return np.zeros(self.model.n_dof)
        return t["anc"][b] * t["is_rev"]

    def point_velocity(self, link: int, point=(0.0, 0.0)) -> np.ndarray:
        return self.point_jacobian(link, point) @ self.qd

    def point_bias_acceleration(self, link: int, point=(0.0, 0.0)) -> np.ndarray:
        """Acceleration of a body-fixed point when qdd = 0 (i.e. Jdot qd)."""
        b = self.model.body_index(link)
        return self._bias_acc(b, self.point_world(link, point))

    def _bias_acc(self, body: int, p: np.ndarray) -> np.ndarray:
        if body < 0:
            return np.zeros(2)
        t = self.model._tables
        anc = t["anc"][body][t["rev_dofs"]]
        return -((anc * self._dom2)[:, None] * (p - self.pivot)).sum(axis=0)

    # -- whole-body quantities ---------------------------------------------
    @cached_property
    def _com_jac_xz(self):
        """x and z rows of every body's COM Jacobian, each (bodies, dof)."""
        t = self.model._tables
        anc = t["anc_rev"]
        dx = self.com[:, 0:1] - self.pivot[:, 0]
        dz = self.com[:, 1:2] - self.pivot[:, 1]
        if not self.model.floating:
            return -dz * anc, dx * anc
        nd = self.model.n_dof
        rd = t["rev_dofs"]
        Jx = np.zeros((t["nb"], nd))
        Jz = np.zeros((t["nb"], nd))
        Jx[:, rd] = -dz * anc
        Jz[:, rd] = dx * anc
        Jx[:, 0] = 1.0
        Jz[:, 1] = 1.0
        return Jx, Jz

    @cached_property
    def com_jacobians(self) -> np.ndarray:
        """(bodies, 2, dof) Jacobians of every body's centre of mass."""
        Jx, Jz = self._com_jac_xz
        return np.stack([Jx, Jz], axis=1)

    @cached_property
    def com_bias_acc(self) -> np.ndarray:
        t = self.model._tables
        w = t["anc_rev"] * self._dom2[None, :]
        return w @ self.pivot - w.sum(axis=1)[:, None] * self.com

    @cached_property
    def mass_matrix(self) -> np.ndarray:
        t = self.model._tables
        Jx, Jz = self._com_jac_xz
        m = t["mass"][:, None]
        M = Jx.T @ (m * Jx) + Jz.T @ (m * Jz) + t["rot_inertia"]
        return 0.5 * (M + M.T)

    @cached_property
    def bias(self) -> np.ndarray:
        t = self.model._tables
        Jx, Jz = self._com_jac_xz
        acc = self.com_bias_acc
        m = t["mass"]
        return Jx.T @ (m * acc[:, 0]) + Jz.T @ (m * (acc[:, 1] + self.model.gravity))

    @cached_property
    def gravity_forces(self) -> np.ndarray:
        _, Jz = self._com_jac_xz
        return Jz.T @ (self.model._tables["mass"] * self.model.gravity)

    def wrench_forces(self, wrenches: Sequence[ExternalWrench]) -> np.ndarray:
        """Generalized forces sum J^T w of a set of external wrenches."""
        out = np.zeros(self.model.n_dof)
        for w in wrenches:
            J = self.point_jacobian(w.link, w.point)
            out += J.T @ np.asarray(w.force, dtype=float)
            out += self.angular_jacobian(w.link) * w.torque
        return out

    @cached_property
    def com_position(self) -> np.ndarray:
        m = self.model._tables["mass"]
        return (m[:, None] * self.com).sum(axis=0) / m.sum()

    @cached_property
    def com_jacobian(self) -> np.ndarray:
        m = self.model._tables["mass"]
        Jx, Jz = self._com_jac_xz
        return np.stack([m @ Jx, m @ Jz]) / m.sum()

    @property
    def com_velocity(self) -> np.ndarray:
        return self.com_jacobian @ self.qd

    @cached_property
    def kinetic_energy(self) -> float:
        return 0.5 * float(self.qd @ self.mass_matrix @ self.qd)

    @cached_property
    def potential_energy(self) -> float:
        m = self.model._tables["mass"]
        return float(self.model.gravity * (m * self.com[:, 1]).sum())

    def link_tip(self, link: int) -> np.ndarray:
        return self.point_world(link, (self.model.links[link].length, 0.0))


# -- functional API ---------------------------------------------------------

def mass_matrix(model: ChainModel, theta) -> np.ndarray:
    q, _ = _as_q(model, theta)
    return model.kinematics(q).mass_matrix


def bias_forces(model: ChainModel, state) -> np.ndarray:
    """Coriolis, centrifugal and gravity generalized forces b(q, qd).

    Sign: ``M qdd + b = tau``, so a horizontal pendulum (link along +x, mass m,
    com at l) has ``b = +m g l`` while gravity pulls it clockwise; the joint
    must supply ``tau = b`` to hold it.
    """
    q, qd = _as_q(model, state)
    return model.kinematics(q, qd).bias


def inverse_dynamics(model: ChainModel, state, qdd, wrenches=()) -> np.ndarray:
    q, qd = _as_q(model, state)
    qdd = np.atleast_1d(np.asarray(qdd, dtype=float))
    if qdd.shape != q.shape:
        raise DimensionError("acceleration dimension mismatch")
    kin = model.kinematics(q, qd)
    return kin.mass_matrix @ qdd + kin.bias - kin.wrench_forces(wrenches)


def solve_mass_matrix(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c, low = cho_factor(M, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMassMatrixError("mass matrix is not positive definite") from exc
    d = np.abs(np.diag(c))
    if d.min() <= 1e-9 * max(1.0, d.max()):
        raise SingularMassMatrixError("mass matrix is numerically singular")
    return cho_solve((c, low), rhs, check_finite=False)


def forward_dynamics(model: ChainModel, state, tau, wrenches=()) -> np.ndarray:
    q, qd = _as_q(model, state)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != q.shape:
        raise DimensionError("torque dimension mismatch")
    kin = model.kinematics(q, qd)
    return solve_mass_matrix(kin.mass_matrix, tau + kin.wrench_forces(wrenches) - kin.bias)


def point_kinematics(model: ChainModel, state, link: int, point=(0.0, 0.0)):
    """World position, velocity and 2 x n Jacobian of a link-fixed point."""
    q, qd = _as_q(model, state)
    kin = model.kinematics(q, qd)
    J = kin.point_jacobian(link, point)
    return kin.point_world(link, point), J @ qd, J


def mechanical_energy(model: ChainModel, state) -> float:
    q, qd = _as_q(model, state)
    kin = model.kinematics(q, qd)
    return kin.kinetic_energy + kin.potential_energy


def forward_dynamics_q(model: ChainModel, q, qd, generalized_force, wrenches=()) -> np.ndarray:
    """Forward dynamics on raw coordinate vectors (the simulation hot path)."""
    kin = Kinematics(model, q, qd)
    rhs = generalized_force - kin.bias
    if wrenches:
        rhs = rhs + kin.wrench_forces(wrenches)
    try:
        return np.linalg.solve(kin.mass_matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMassMatrixError("mass matrix is singular") from exc
