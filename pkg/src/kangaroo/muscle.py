"""Wire (muscle) routing, muscle-length Jacobian and tension allocation.

A muscle is a frictionless polyline through via points fixed in link frames,
optionally plus constant-moment-arm pulley wraps at joints. Wires only pull,
so joint torques are ``tau = -G^T f`` with ``G = dL/dtheta`` and ``f >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .dynamics import ChainModel, ChainState, DimensionError, Kinematics


@dataclass(frozen=True)
class Muscle:
    name: str
    # (link index, (x, z) in link frame); link -1 is the base
    path: tuple[tuple[int, tuple[float, float]], ...]
    f_max: float
    # (joint index, signed arm): adds arm * theta_joint to the length
    pulleys: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "path", tuple((int(l), (float(p[0]), float(p[1]))) for l, p in self.path)
        )
        object.__setattr__(self, "pulleys", tuple((int(j), float(r)) for j, r in self.pulleys))
        if len(self.path) < 2:
            raise ValueError(f"muscle {self.name!r}: path needs at least 2 points")
        if not self.f_max > 0:
            raise ValueError(f"muscle {self.name!r}: f_max must be > 0")


@dataclass(frozen=True)
class MuscleRouting:
    muscles: tuple[Muscle, ...]

    def __post_init__(self):
        object.__setattr__(self, "muscles", tuple(self.muscles))

    def __len__(self):
        return len(self.muscles)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.muscles]

    @property
    def f_max(self) -> np.ndarray:
        return np.array([m.f_max for m in self.muscles])

    def validate(self, model: ChainModel) -> None:
        for m in self.muscles:
            for link, _ in m.path:
                if not (-1 <= link < model.n_links):
                    raise IndexError(f"muscle {m.name!r}: invalid link {link}")
            for j, _ in m.pulleys:
                if not (0 <= j < model.n_links):
                    raise IndexError(f"muscle {m.name!r}: invalid pulley joint {j}")

    def crossing_mask(self, model: ChainModel) -> np.ndarray:
        """(muscles, joints) True where the muscle spans the joint."""
        anc = model._tables["anc"][:, model.n_base:]
        mask = np.zeros((len(self.muscles), model.n_links), dtype=bool)
        for i, m in enumerate(self.muscles):
            rows = []
            for link, _ in m.path:
                b = model.body_index(link)
                rows.append(anc[b] if b >= 0 else np.zeros(model.n_links))
            rows = np.array(rows) > 0
            mask[i] = rows.any(axis=0) & ~rows.all(axis=0)
            for j, _ in m.pulleys:
                mask[i, j] = True
        return mask


def _kin(model: ChainModel, state) -> Kinematics:
    if isinstance(state, Kinematics):
        return state
    if isinstance(state, ChainState):
        return model.kinematics(state.q, state.qd)
    return model.kinematics(state)


def muscle_lengths(routing: MuscleRouting, model: ChainModel, state) -> np.ndarray:
    routing.validate(model)
    kin = _kin(model, state)
    q = kin.q[model.n_base:]
    L = np.zeros(len(routing))
    for i, m in enumerate(routing.muscles):
        pts = np.array([kin.point_world(link, p) for link, p in m.path])
        L[i] = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        for j, r in m.pulleys:
            L[i] += r * q[j]
    return L


def muscle_jacobian(routing: MuscleRouting, model: ChainModel, state) -> np.ndarray:
    """G = dL/dtheta, shape (muscles, joints); base coordinates excluded."""
    routing.validate(model)
    kin = _kin(model, state)
    nb = model.n_base
    G = np.zeros((len(routing), model.n_links))
    for i, m in enumerate(routing.muscles):
        pts = [kin.point_world(link, p) for link, p in m.path]
        Js = [kin.point_jacobian(link, p)[:, nb:] for link, p in m.path]
        for s in range(len(pts) - 1):
            d = pts[s + 1] - pts[s]
            n = np.linalg.norm(d)
            if n > 0:
                G[i] += (d / n) @ (Js[s + 1] - Js[s])
        for j, r in m.pulleys:
            G[i, j] += r
    return np.where(routing.crossing_mask(model), G, 0.0)


def muscle_velocities(G: np.ndarray, theta_dot) -> np.ndarray:
    return G @ np.asarray(theta_dot, dtype=float)


def tension_to_torque(G, f) -> np.ndarray:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if G.shape[0] != f.shape[0]:
        raise DimensionError(f"G has {G.shape[0]} muscles, f has {f.shape[0]}")
    return -G.T @ f


# -- tension allocation -------------------------------------------------------

@dataclass
class Allocation:
    """Result of a tension allocation.

    ``f`` always lies in the box. When ``feasible`` is False it is the box
    point whose torque is nearest (least squares) to the request, and
    ``residual`` is that torque error (infinity norm).
    """

    f: np.ndarray
    feasible: bool
    residual: float
    iterations: int = 0
    status: str = field(default="")

    def __post_init__(self):
        if not self.status:
            self.status = "OPTIMAL" if self.feasible else "INFEASIBLE"


def _row_basis(A: np.ndarray, b: np.ndarray, rtol=1e-12):
    """Replace A x = b by an equivalent full-row-rank system (if consistent)."""
    if A.shape[0] == 0:
        return A, b
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = int((s > rtol * max(1.0, s[0])).sum()) if s.size else 0
    return s[:r, None] * Vt[:r], U[:, :r].T @ b


def _solve_eqp(H, c, A, b, x, state):
    """Minimize over the free variables with working-set variables held."""
    F = state == 0
    W = ~F
    nF = int(F.sum())
    m = A.shape[0]
    HF = H[F]
    AF = A[:, F]
    K = np.zeros((nF + m, nF + m))
    K[:nF, :nF] = HF[:, F]
    K[:nF, nF:] = AF.T
    K[nF:, :nF] = AF
    rhs = np.concatenate([-c[F] - HF[:, W] @ x[W], b - A[:, W] @ x[W]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    xs = x.copy()
    xs[F] = sol[:nF]
    return xs, sol[nF:]


def _independent_working_set(A, candidates):
    """Largest prefix-greedy subset of bound indices keeping A_F full row rank."""
    n = A.shape[1]
    m = A.shape[0]
    chosen = []
    for i in candidates:
        trial = np.ones(n, dtype=bool)
        trial[chosen + [i]] = False
        if m == 0 or (trial.sum() >= m and np.linalg.matrix_rank(A[:, trial]) == m):
            chosen.append(i)
    return chosen


def _box_active_set(H, c, A, b, lo, hi, x, max_iter=200, tol=1e-12):
    """Primal active-set method for a strictly convex QP with box bounds.

    ``x`` must be feasible for the box (and approximately for A x = b).
    Ties among blocking or released constraints go to the lowest index.
    """
    n = len(x)
    x = np.clip(x, lo, hi)
    state = np.zeros(n, dtype=int)  # 0 free, -1 at lower, +1 at upper
    at_lo = [i for i in range(n) if x[i] <= lo[i]]
    at_hi = [i for i in range(n) if x[i] >= hi[i] and i not in at_lo]
    for i in _independent_working_set(A, sorted(at_lo + at_hi)):
        state[i] = -1 if i in at_lo else 1
    scale = max(1.0, np.abs(hi[np.isfinite(hi)]).max(initial=1.0))
    for it in range(1, max_iter + 1):
        xs, nu = _solve_eqp(H, c, A, b, x, state)
        p = xs - x
        if np.abs(p).max() <= tol * scale:
            x = xs
            g = H @ x + c + (A.T @ nu if A.shape[0] else 0.0)
            mult = np.where(state == -1, g, np.where(state == 1, -g, np.inf))
            j = int(np.argmin(mult))
            if mult[j] >= -1e-10 * max(1.0, np.abs(g).max()):
                return np.clip(x, lo, hi), it
            state[j] = 0
            continue
        alpha, block = 1.0, -1
        for i in np.flatnonzero(state == 0):
            if p[i] < 0:
                a = (lo[i] - x[i]) / p[i]
            elif p[i] > 0:
                a = (hi[i] - x[i]) / p[i]
            else:
                continue
            if a < alpha:
                alpha, block = max(a, 0.0), i
        x = x + alpha * p
        if block >= 0:
            state[block] = -1 if p[block] < 0 else 1
            x[block] = lo[block] if p[block] < 0 else hi[block]
    return np.clip(x, lo, hi), max_iter


def allocate_tensions(G, tau_desired, f_max, feas_tol=1e-7) -> Allocation:
    """Minimum-norm wire tensions realizing a joint torque.

    Solves ``min ||f||^2  s.t.  -G^T f = tau_desired,  0 <= f <= f_max`` with a
    two-phase primal active-set method. Phase 1 finds the box point nearest to
    the torque request in least squares; if its torque error exceeds
    ``feas_tol * max(1, |tau|)`` the request is reported infeasible and that
    nearest point is returned. Otherwise phase 2 minimizes the norm.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    tau = np.atleast_1d(np.asarray(tau_desired, dtype=float))
    n_mus, n_j = G.shape
    if tau.shape != (n_j,):
        raise DimensionError(f"tau has {tau.shape[0]} entries, G has {n_j} joints")
    ub = np.broadcast_to(np.asarray(f_max, dtype=float), (n_mus,)).copy()
    if np.any(ub <= 0):
        raise ValueError("f_max must be positive")
    A = -G.T
    b = tau
    lo = np.zeros(n_mus)
    scale = max(1.0, np.abs(tau).max())

    # phase 1: nearest achievable torque (tiny ridge term picks the least-norm tie)
    eps = 1e-12 * max(1.0, np.linalg.norm(A, 2) ** 2)
    H1 = A.T @ A + eps * np.eye(n_mus)
    c1 = -A.T @ b
    f1, it1 = _box_active_set(H1, c1, np.zeros((0, n_mus)), np.zeros(0), lo, ub, lo.copy())
    res1 = float(np.abs(A @ f1 - b).max()) if n_j else 0.0
    if res1 > feas_tol * scale:
        return Allocation(f1, False, res1, it1)

    # phase 2: minimum norm on the feasible set
    Ar, br = _row_basis(A, b)
    f2, it2 = _box_active_set(np.eye(n_mus), np.zeros(n_mus), Ar, br, lo, ub, f1)
    res2 = float(np.abs(A @ f2 - b).max()) if n_j else 0.0
    return Allocation(f2, True, res2, it1 + it2)


def kkt_residual(G, tau_desired, f_max, f, active_tol=1e-9) -> float:
    """Stationarity residual of ``min ||f||^2`` at ``f``.

    Finds the best representation of the gradient ``2 f`` as a combination of
    the equality rows (any sign) and the active bound normals (correct sign
    only) and returns the infinity norm of what remains, relative to
    ``max(1, |2f|)``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    f = np.asarray(f, dtype=float)
    ub = np.broadcast_to(np.asarray(f_max, dtype=float), f.shape)
    n = f.size
    A = -G.T
    cols = [A.T, -A.T]
    tol = active_tol * max(1.0, ub.max())
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if f[i] <= tol:
            cols.append(e[:, None])
        if f[i] >= ub[i] - tol:
            cols.append(-e[:, None])
    B = np.hstack(cols)
    _, rnorm = nnls(B, 2 * f, maxiter=50 * B.shape[1])
    return rnorm / max(1.0, 2 * np.abs(f).max())
