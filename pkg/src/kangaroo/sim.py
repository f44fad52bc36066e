"""Fixed-step whole-body simulation with penalty ground contact.

Physics runs on semi-implicit Euler at ``dt`` (default 1e-4 s). A controller
is sampled every ``control_dt`` (default 1e-3 s) and its generalized force is
held in between. Contact is a spring-damper along the ground normal (never
pulling) and a tangential spring to a stick anchor, capped by Coulomb
friction; when the cap is hit the anchor slides.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .dynamics import forward_dynamics_q
from .integrate import BlowUpError, check_speed
from .robot import Body


@dataclass(frozen=True)
class ContactModel:
    ground_height: float = 0.0
    stiffness: float = 5e4
    damping: float = 500.0
    friction: float = 1.0
    tangential_stiffness: float | None = None
    tangential_damping: float | None = None

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("contact stiffness and damping must be >= 0")
        if not 0.0 <= self.friction <= 2.0:
            raise ValueError("friction must be in [0, 2]")

    @property
    def k_t(self) -> float:
        return self.stiffness if self.tangential_stiffness is None else self.tangential_stiffness

    @property
    def c_t(self) -> float:
        return self.damping if self.tangential_damping is None else self.tangential_damping


def contact_forces(contact: ContactModel, pos: np.ndarray, vel: np.ndarray, anchors: np.ndarray):
    """Ground forces on a set of points, shape (n, 2), and updated anchors.

    ``anchors`` holds each point's stick position (NaN when not touching).
    """
    depth = contact.ground_height - pos[:, 1]
    touching = depth > 0
    F = np.zeros_like(pos)
    fn = np.where(touching, contact.stiffness * depth - contact.damping * vel[:, 1], 0.0)
    fn = np.maximum(fn, 0.0)
    anchors = np.where(touching, np.where(np.isnan(anchors), pos[:, 0], anchors), np.nan)
    ft = np.where(touching, -contact.k_t * (pos[:, 0] - anchors) - contact.c_t * vel[:, 0], 0.0)
    cap = contact.friction * fn
    slip = np.abs(ft) > cap
    if slip.any():
        ft = np.where(slip, np.sign(ft) * cap, ft)
        # slide the anchor so the spring alone carries the capped force
        spring = ft + contact.c_t * vel[:, 0]
        moved = pos[:, 0] + spring / contact.k_t if contact.k_t > 0 else pos[:, 0]
        anchors = np.where(slip, moved, anchors)
    F[:, 0] = ft
    F[:, 1] = fn
    return F, anchors


def _points(body: Body, kin):
    pos = np.array([kin.point_world(c.link, c.point) for c in body.contacts])
    J = np.array([kin.point_jacobian(c.link, c.point) for c in body.contacts])
    return pos, J


def mechanical_energy(body: Body, kin) -> float:
    return kin.kinetic_energy + kin.potential_energy + body.passive_energy(kin.q)


@dataclass
class StepResult:
    q: np.ndarray
    qd: np.ndarray
    forces: np.ndarray
    anchors: np.ndarray
    contact_power: float
    passive_power: float


def step(body: Body, q, qd, force, contact: ContactModel, anchors, dt: float, max_speed: float = 1e3,
         t: float = 0.0, external: Callable | None = None) -> StepResult:
    """One semi-implicit Euler step with contact; ``force`` is the actuator
    generalized force (base entries zero). ``external(q, qd)`` adds a passive
    generalized force from outside the robot (rigs, supports)."""
    if not 0 < dt <= 1e-2:
        raise ValueError("dt must be in (0, 1e-2]")
    kin = body.model.kinematics(q, qd)
    pos, J = _points(body, kin)
    vel = J @ qd
    F, anchors = contact_forces(contact, pos, vel, anchors)
    Qc = np.einsum("pk,pkd->d", F, J)
    Qp = body.passive_forces(q, qd)
    Qe = np.zeros_like(Qp) if external is None else np.asarray(external(q, qd), dtype=float)
    rhs = force + Qc + Qp + Qe - kin.bias
    qdd = np.linalg.solve(kin.mass_matrix, rhs)
    qd_new = qd + dt * qdd
    check_speed(qd_new, max_speed, t + dt)
    q_new = q + dt * qd_new
    # work over the step uses the mean of the old and new velocity, which is
    # what the kinetic energy change of the velocity update works out to;
    # joint springs are in the mechanical energy, so only damping counts as work
    Qd = Qp - body.passive_forces(q, np.zeros_like(qd)) + Qe
    vm = 0.5 * (qd + qd_new)
    return StepResult(q_new, qd_new, F, anchors, float(Qc @ vm), float(Qd @ vm))


class Controller(Protocol):
    def __call__(self, t: float, kin, contact_forces: np.ndarray) -> tuple[np.ndarray, dict]: ...


@dataclass
class SimTrace:
    """Uniformly sampled run record; ``columns`` fixes the CSV column order."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    forces: np.ndarray  # (samples, points, 2)
    tensions: np.ndarray  # (samples, muscles)
    tail_tensions: np.ndarray  # (samples, 2)
    phase: np.ndarray  # int codes
    energy: np.ndarray
    work_actuator: np.ndarray
    work_contact: np.ndarray
    work_passive: np.ndarray
    cog: np.ndarray  # (samples, 2)
    cog_velocity: np.ndarray
    contact_names: list
    muscle_names: list
    dof_names: list
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def columns(self) -> list[str]:
        cols = ["t", "phase", "cog_x", "cog_z", "cog_vx", "cog_vz"]
        cols += [f"q_{n}" for n in self.dof_names] + [f"qd_{n}" for n in self.dof_names]
        for c in self.contact_names:
            cols += [f"fx_{c}", f"fz_{c}"]
        cols += [f"f_{m}" for m in self.muscle_names] + ["f_tail_upper", "f_tail_lower"]
        cols += ["energy", "work_actuator", "work_contact", "work_passive"]
        return cols

    def rows(self) -> np.ndarray:
        n = len(self.t)
        return np.column_stack([
            self.t, self.phase, self.cog, self.cog_velocity, self.q, self.qd,
            self.forces.reshape(n, -1), self.tensions, self.tail_tensions,
            self.energy, self.work_actuator, self.work_contact, self.work_passive,
        ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.meta):
            buf.write(f"# {k}: {self.meta[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for row in self.rows():
            w.writerow([f"{v:.9g}" for v in row])
        return buf.getvalue()

    def total_normal_force(self) -> np.ndarray:
        return self.forces[:, :, 1].sum(axis=1)


def simulate(body: Body, controller: Callable, q0, qd0, duration: float, contact: ContactModel = ContactModel(),
             dt: float = 1e-4, control_dt: float = 1e-3, record_every: int = 10, max_speed: float = 1e3,
             meta: dict | None = None, dof_names=None, muscle_names=(), external: Callable | None = None) -> SimTrace:
    """Run ``controller`` against the physics for ``duration`` seconds.

    The controller is called as ``controller(t, kin, forces)`` with the
    current kinematics and the last contact forces, and returns the actuator
    generalized force and an info dict (``tensions``, ``tail_tensions``,
    ``phase``).
    """
    if not 0 < dt <= 1e-2:
        raise ValueError("dt must be in (0, 1e-2]")
    sub = max(1, int(round(control_dt / dt)))
    n = int(round(duration / dt))
    q = np.array(q0, dtype=float)
    qd = np.array(qd0, dtype=float)
    npts = len(body.contacts)
    anchors = np.full(npts, np.nan)
    forces = np.zeros((npts, 2))
    w_act = w_con = w_pas = 0.0
    force = np.zeros(body.n_dof)
    info: dict = {}
    rec = {k: [] for k in ("t", "q", "qd", "F", "f", "ft", "ph", "E", "wa", "wc", "wp", "cog", "cogv")}
    nm = len(muscle_names)
    for i in range(n + 1):
        t = i * dt
        kin = None
        if i % sub == 0 and i < n:
            kin = body.model.kinematics(q, qd)
            force, info = controller(t, kin, forces)
        if i % record_every == 0 or i == n:
            kin = kin or body.model.kinematics(q, qd)
            rec["t"].append(t)
            rec["q"].append(q.copy())
            rec["qd"].append(qd.copy())
            rec["F"].append(forces.copy())
            rec["f"].append(np.asarray(info.get("tensions", np.zeros(nm)), dtype=float))
            rec["ft"].append(np.asarray(info.get("tail_tensions", (0.0, 0.0)), dtype=float))
            rec["ph"].append(int(info.get("phase", 0)))
            rec["E"].append(mechanical_energy(body, kin))
            rec["wa"].append(w_act)
            rec["wc"].append(w_con)
            rec["wp"].append(w_pas)
            rec["cog"].append(kin.com_position)
            rec["cogv"].append(kin.com_velocity)
        if i == n:
            break
        r = step(body, q, qd, force, contact, anchors, dt, max_speed, t, external)
        w_act += dt * float(force @ (0.5 * (qd + r.qd)))
        w_con += dt * r.contact_power
        w_pas += dt * r.passive_power
        q, qd, forces, anchors = r.q, r.qd, r.forces, r.anchors
    names = dof_names or [f"q{i}" for i in range(body.n_dof)]
    return SimTrace(
        np.array(rec["t"]), np.array(rec["q"]), np.array(rec["qd"]), np.array(rec["F"]),
        np.array(rec["f"]).reshape(len(rec["t"]), nm), np.array(rec["ft"]), np.array(rec["ph"]),
        np.array(rec["E"]), np.array(rec["wa"]), np.array(rec["wc"]), np.array(rec["wp"]),
        np.array(rec["cog"]), np.array(rec["cogv"]), [c.name for c in body.contacts], list(muscle_names),
        list(names), dict(meta or {}),
    )


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


FLIGHT_CODE = 0


def apex_and_hop_metrics(trace: SimTrace, flight_code: int = FLIGHT_CODE, rise_speed: float = 1e-6) -> dict:
    """Hop count, apex heights, max tension and peak actuator power.

    An apex is a flight sample where the vertical COG velocity turns
    non-positive after having risen above ``rise_speed``; the threshold keeps
    round-off in a resting trace from counting. Hops are the apexes before
    the torso or tail first touches the ground (a robot bouncing on its body
    is not hopping); ``apexes`` counts them all.
    """
    vz = trace.cog_velocity[:, 1] if len(trace.t) else np.zeros(0)
    flight = np.asarray(trace.phase) == flight_code
    found, armed = [], False
    for i, v in enumerate(vz):
        if v > rise_speed:
            armed = True
        elif armed and v <= 0:
            armed = False
            if flight[i] and i > 0:
                found.append(i)
    idx = np.array(found, dtype=int)
    # refine each apex with the parabola through the neighbouring samples
    times, heights = [], []
    z = trace.cog[:, 1] if len(trace.t) else np.zeros(0)
    for i in idx:
        if 0 < i < len(z) - 1:
            z0, z1, z2 = z[i - 1], z[i], z[i + 1]
            den = z0 - 2 * z1 + z2
            s = 0.5 * (z0 - z2) / den if den < 0 else 0.0
            s = float(np.clip(s, -1.0, 1.0))
            heights.append(float(z1 - 0.25 * (z0 - z2) * s))
            times.append(float(trace.t[i] + s * trace.dt))
        else:
            heights.append(float(z[i]))
            times.append(float(trace.t[i]))
    body_touch = [k for k, name in enumerate(trace.contact_names) if name not in ("heel", "toe")]
    consecutive = len(idx)
    if body_touch and len(trace.t):
        hit = np.nonzero(trace.forces[:, body_touch, 1].max(axis=1) > 0)[0]
        if len(hit):
            consecutive = int(np.sum(idx < hit[0]))
    max_tension = float(trace.tensions.max()) if trace.tensions.size else 0.0
    power = np.abs(np.diff(trace.work_actuator)) / trace.dt if len(trace.t) > 1 else np.zeros(0)
    return {
        "hops": consecutive,
        "apexes": len(idx),
        "apex_times": times,
        "apex_heights": heights,
        "max_tension": max_tension,
        "peak_power": float(power.max()) if power.size else 0.0,
    }
