"""Acceptance criteria, one test each.

Every test records a one-line verdict with its measured numbers; the lines
are printed together at the end of the pytest run (see conftest) and when
this file is run as a script.
"""
import json
import time

import numpy as np
import pytest

from kangaroo.cli import COMMANDS, main
from kangaroo.config import analysis_setup, load_config
from kangaroo.dynamics import (BaseBody, ChainModel, ChainState, Link, forward_dynamics, inverse_dynamics,
                               mechanical_energy, point_kinematics)
from kangaroo.integrate import integrate
from kangaroo.jump_analysis import analyze_jump
from kangaroo.muscle import allocate_tensions, kkt_residual
from kangaroo.tail import TailModel, tail_static_equilibrium

from oracles import box_residual_lower_bound, brute_force_qp

VERDICTS = {}


def record(n, name, ok, detail):
    VERDICTS[n] = f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}"
    assert ok, VERDICTS[n]


@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    """Every CLI command on the shipped config, twice, with wall times."""
    root = tmp_path_factory.mktemp("accept")
    runs = {}
    for rep in ("a", "b"):
        for cmd in COMMANDS:
            out = root / rep / cmd
            t0 = time.perf_counter()
            code = main([cmd, "--out", str(out)])
            runs[(rep, cmd)] = (code, time.perf_counter() - t0, out)
    return runs


def test_1_analysis_pattern():
    cfg = load_config()
    t0 = time.perf_counter()
    res = analyze_jump(*analysis_setup(cfg))
    elapsed = time.perf_counter() - t0
    peaks = np.sort(res.muscles.f.max(axis=0))
    speed = float(np.abs(res.muscles.velocity).max())
    three = int(np.sum((peaks >= 400) & (peaks <= 1000)))
    ok = three == 3 and peaks[0] < 0.1 * peaks[-1] and 0.5 <= speed <= 1.5 and elapsed < 5.0
    record(1, "analysis pattern", ok,
           f"peaks {np.round(peaks, 1).tolist()} N, peak speed {speed:.2f} m/s, {elapsed:.2f} s")


def test_2_hopping(cli_runs):
    code, elapsed, out = cli_runs[("a", "simulate-hop")]
    s = json.loads((out / "summary.json").read_text())
    peaks = s["stance_peak_tensions"]
    ok = (code == 0 and s["hops"] >= 3 and s["max_tension"] <= 450.0 and len(peaks) == 4
          and min(peaks) > 50.0 and elapsed < 30.0)
    record(2, "hopping", ok,
           f"{s['hops']} consecutive hops, max tension {s['max_tension']:.1f} N, "
           f"stance peaks {np.round(peaks, 1).tolist()} N, {elapsed:.1f} s")


def test_3_tail_closed_form():
    model = TailModel(gravity=0.0)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        fu, fl = rng.uniform(0.0, model.f_max, 2)
        th = tail_static_equilibrium(model, fu, fl, gravity_on=False, method="relaxation")
        ref = np.clip(model.moment_arm * (fu - fl) / model.stiffness, -np.deg2rad(30), np.deg2rad(30))
        worst = max(worst, float(np.abs(th - ref).max()))
    case = tail_static_equilibrium(model, 40.0, 30.0, gravity_on=False, method="relaxation")
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and np.allclose(case, 0.035, atol=1e-6) and elapsed < 1.0
    record(3, "tail closed form", ok,
           f"max error {worst:.1e} rad, (40, 30) N -> {case.mean():.4f} rad, {elapsed:.2f} s")


def test_4_allocator():
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst_res = worst_kkt = worst_obj = 0.0
    feas = infeas = wrong = 0
    for _ in range(500):
        G = rng.uniform(-0.06, 0.06, (4, 3))
        fmax = rng.uniform(100, 1000, 4)
        tau = -G.T @ (rng.uniform(0, 1, 4) * fmax) if rng.random() < 0.7 else rng.uniform(-60, 60, 3)
        a = allocate_tensions(G, tau, fmax)
        ref, ref_obj = brute_force_qp(-G.T, tau, fmax)
        if a.feasible:
            feas += 1
            if ref is None:
                wrong += 1
                continue
            worst_res = max(worst_res, float(np.abs(tau + G.T @ a.f).max()))
            worst_kkt = max(worst_kkt, kkt_residual(G, tau, fmax, a.f))
            worst_obj = max(worst_obj, abs(a.f @ a.f - ref_obj) / max(ref_obj, 1e-12))
        else:
            infeas += 1
            if ref is not None or box_residual_lower_bound(-G.T, tau, fmax) <= 1e-7:
                wrong += 1
    elapsed = time.perf_counter() - t0
    ok = wrong == 0 and worst_res <= 1e-6 and worst_kkt <= 1e-6 and worst_obj <= 1e-4 and elapsed < 10.0
    record(4, "QP allocator", ok,
           f"{feas} feasible / {infeas} infeasible, {wrong} misclassified, residual {worst_res:.1e}, "
           f"KKT {worst_kkt:.1e}, objective rel err {worst_obj:.1e}, {elapsed:.1f} s")


def _floating_tree():
    base = BaseBody(mass=12.0, inertia=0.5, com=(0.05, 0.02))
    links = (Link(0.3, 0.2, parent=-1, mount=(0.1, -0.05), mount_angle=-1.2), Link(0.5, 0.28), Link(0.4, 0.2),
             Link(1.6, 0.4, parent=-1, mount=(-0.3, 0.0), mount_angle=np.pi))
    return ChainModel(links, base_kind="floating", base=base)


def test_5_dynamics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    model = _floating_tree()
    h = 1e-6
    jac_err = 0.0
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, model.n_dof)
        for link in range(-1, model.n_links):
            pt = rng.uniform(-0.2, 0.2, 2)
            _, _, J = point_kinematics(model, ChainState.from_q(model, q), link, pt)
            for k in range(model.n_dof):
                e = np.eye(model.n_dof)[k] * h
                pp, _, _ = point_kinematics(model, ChainState.from_q(model, q + e), link, pt)
                pm, _, _ = point_kinematics(model, ChainState.from_q(model, q - e), link, pt)
                jac_err = max(jac_err, float(np.abs(J[:, k] - (pp - pm) / (2 * h)).max()))
    rt_err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 6))
        chain = ChainModel(tuple(Link(m, l) for m, l in zip(rng.uniform(0.1, 3, n), rng.uniform(0.1, 0.6, n))))
        s = ChainState(rng.uniform(-3, 3, n), rng.uniform(-3, 3, n))
        tau0 = rng.uniform(-20, 20, n)
        tau = inverse_dynamics(chain, s, forward_dynamics(chain, s, tau0))
        rt_err = max(rt_err, float(np.abs(tau - tau0).max() / max(1.0, np.abs(tau0).max())))
    swing = ChainModel((Link(0.3, 0.2), Link(0.5, 0.28)))
    zero = np.zeros(2)
    _, Q, QD = integrate(swing, [0.3, -0.5], zero, lambda t, q, qd: zero, 1e-4, 10.0, method="heun",
                         record_every=100)
    E = np.array([mechanical_energy(swing, ChainState(q, qd)) for q, qd in zip(Q, QD)])
    floor = mechanical_energy(swing, ChainState([-np.pi / 2, 0.0], zero))
    drift = float(np.abs(E - E[0]).max() / (E[0] - floor))
    elapsed = time.perf_counter() - t0
    ok = jac_err <= 1e-5 and rt_err <= 1e-8 and drift < 1e-3 and elapsed < 30.0
    record(5, "dynamics verification", ok,
           f"Jacobian FD {jac_err:.1e}, ID/FD roundtrip {rt_err:.1e}, energy drift {drift:.1e} over 10 s, "
           f"{elapsed:.1f} s")


def test_6_determinism(cli_runs):
    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    same, codes = [], []
    for cmd in COMMANDS:
        a, b = cli_runs[("a", cmd)], cli_runs[("b", cmd)]
        codes += [a[0], b[0]]
        ta, tb = tree(a[2]), tree(b[2])
        same.append(bool(ta) and ta == tb)
    ok = all(same) and not any(codes)
    record(6, "determinism", ok, f"{sum(same)}/{len(same)} commands byte-identical across two runs")


def test_7_combined(cli_runs):
    code, elapsed, out = cli_runs[("a", "combined-jump")]
    s = json.loads((out / "summary.json").read_text())
    el, lk = s["elastic"], s["locked"]
    ok = (code == 0 and el["three_point_support_at_push"] and el["tail_tip_rise_during_push"] > 0
          and el["hip_rise_during_push"] > 0 and el["airborne"] and s["softer_landing"] and elapsed < 60.0)
    record(7, "combined leg and tail jump", ok,
           f"tail tip +{el['tail_tip_rise_during_push'] * 100:.1f} cm during push, peak landing force "
           f"{el['peak_landing_force']:.0f} N elastic vs {lk['peak_landing_force']:.0f} N locked, {elapsed:.1f} s")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
