"""Fixed-step integrators shared by the tail and whole-body simulations.

``semi_implicit_euler`` is the workhorse for contact simulations (cheap and
robust with stiff penalty contacts). It is only first-order accurate for
chains, whose mass matrix depends on the configuration, so energy-accounting
runs use ``heun`` (explicit trapezoid, second order) or ``rk4``.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .dynamics import ChainModel, forward_dynamics_q

ForceFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class BlowUpError(RuntimeError):
    """Raised when a simulated velocity diverges."""

    def __init__(self, msg, t=None, speed=None):
        super().__init__(msg)
        self.t = t
        self.speed = speed


def check_speed(qd, limit: float, t: float | None = None) -> None:
    speed = float(np.sqrt(qd @ qd))
    if not np.isfinite(speed) or speed > limit:
        raise BlowUpError(f"velocity norm {speed:.3g} exceeds {limit:g} at t={t}", t, speed)


def semi_implicit_euler(model: ChainModel, q, qd, force, dt: float, wrenches=()):
    """One symplectic-Euler step: velocity first, then position with the new velocity."""
    qdd = forward_dynamics_q(model, q, qd, force, wrenches)
    qd_new = qd + dt * qdd
    return q + dt * qd_new, qd_new, qdd


def heun(model: ChainModel, q, qd, force_fn: ForceFn, dt: float, t: float = 0.0):
    a1 = forward_dynamics_q(model, q, qd, force_fn(t, q, qd))
    q1 = q + dt * qd
    v1 = qd + dt * a1
    a2 = forward_dynamics_q(model, q1, v1, force_fn(t + dt, q1, v1))
    return q + 0.5 * dt * (qd + v1), qd + 0.5 * dt * (a1 + a2)


def rk4(model: ChainModel, q, qd, force_fn: ForceFn, dt: float, t: float = 0.0):
    def acc(tt, x, v):
        return forward_dynamics_q(model, x, v, force_fn(tt, x, v))

    h2 = 0.5 * dt
    k1v = acc(t, q, qd)
    k2x = qd + h2 * k1v
    k2v = acc(t + h2, q + h2 * qd, k2x)
    k3x = qd + h2 * k2v
    k3v = acc(t + h2, q + h2 * k2x, k3x)
    k4x = qd + dt * k3v
    k4v = acc(t + dt, q + dt * k3x, k4x)
    q_new = q + dt / 6 * (qd + 2 * k2x + 2 * k3x + k4x)
    qd_new = qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return q_new, qd_new


def _semi_implicit(model, q, qd, force_fn, dt, t=0.0):
    q, qd, _ = semi_implicit_euler(model, q, qd, force_fn(t, q, qd), dt)
    return q, qd


STEPPERS = {"semi_implicit_euler": _semi_implicit, "heun": heun, "rk4": rk4}


def integrate(
    model: ChainModel,
    q0,
    qd0,
    force_fn: ForceFn,
    dt: float,
    duration: float,
    method: str = "semi_implicit_euler",
    record_every: int = 1,
    max_speed: float = 1e3,
):
    """Fixed-step integration; returns sampled ``(t, q, qd)`` arrays."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    try:
        step = STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown integrator {method!r}; choose from {sorted(STEPPERS)}") from None
    q = np.array(q0, dtype=float)
    qd = np.array(qd0, dtype=float)
    n = int(round(duration / dt))
    ts, qs, qds = [], [], []
    for i in range(n + 1):
        t = i * dt
        if i % record_every == 0 or i == n:
            ts.append(t)
            qs.append(q.copy())
            qds.append(qd.copy())
        if i == n:
            break
        q, qd = step(model, q, qd, force_fn, dt, t)
        check_speed(qd, max_speed, t + dt)
    return np.array(ts), np.array(qs), np.array(qds)
