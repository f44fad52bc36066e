from dataclasses import dataclass, replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kangaroo.config import ConfigError, config_from_dict, hop_settings
from kangaroo.dynamics import BaseBody, ChainModel
from kangaroo.harness import run_scenario
from kangaroo.integrate import BlowUpError
from kangaroo.robot import BodyParams, ContactPoint, build_body
from kangaroo.scenarios import run_hop
from kangaroo.sim import ContactModel, SimTrace, apex_and_hop_metrics, contact_forces, simulate, step


@dataclass
class Ball:
    """A lone floating body touching the ground at its centre."""

    model: ChainModel
    contacts: tuple = (ContactPoint("ball", -1, (0.0, 0.0)),)

    @property
    def n_dof(self):
        return 3

    def passive_forces(self, q, qd):
        return np.zeros(3)

    def passive_energy(self, q):
        return 0.0


def ball(gravity=9.81):
    return Ball(ChainModel((), gravity=gravity, base_kind="floating", base=BaseBody(1.0, 0.01)))


def idle(t, kin, forces):
    return np.zeros(len(kin.q)), {}


def test_ball_rebounds_below_drop_height():
    b = ball()
    tr = simulate(b, idle, [0.0, 0.1, 0.0], np.zeros(3), 0.6, ContactModel(stiffness=1e5, damping=200.0))
    z = tr.q[:, 1]
    bounce = np.argmax(tr.forces[:, 0, 1] > 0)
    assert bounce > 0
    after = z[bounce:]
    assert after.max() < 0.1
    # it does leave the ground again
    assert after.max() > 0.0


def test_nothing_acting_means_nothing_moves():
    body = build_body(BodyParams(gravity=0.0))
    q0 = np.zeros(body.n_dof)
    q0[1] = 5.0
    q0[3:6] = [0.3, -1.0, 1.2]
    tr = simulate(body, idle, q0, np.zeros(body.n_dof), 0.2)
    assert np.all(tr.q == q0)
    assert np.all(tr.qd == 0)
    assert np.all(tr.forces == 0)


def test_step_rejects_bad_dt():
    b = ball()
    with pytest.raises(ValueError):
        step(b, np.zeros(3), np.zeros(3), np.zeros(3), ContactModel(), np.full(1, np.nan), 0.0)
    with pytest.raises(ValueError):
        step(b, np.zeros(3), np.zeros(3), np.zeros(3), ContactModel(), np.full(1, np.nan), 0.02)


def test_blow_up_detected():
    b = ball(gravity=0.0)
    with pytest.raises(BlowUpError):
        simulate(b, lambda t, kin, f: (np.array([1e6, 0.0, 0.0]), {}), [0.0, 1.0, 0.0], np.zeros(3), 0.1)


def test_contact_model_validation():
    with pytest.raises(ValueError):
        ContactModel(stiffness=-1.0)
    with pytest.raises(ValueError):
        ContactModel(friction=2.5)


coords = st.floats(-0.05, 0.05, allow_nan=False)
speeds = st.floats(-5.0, 5.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(coords, coords, speeds, speeds), min_size=1, max_size=6),
       st.floats(0.0, 2.0), st.one_of(st.just(0.0), st.floats(1.0, 1e5)), st.floats(0.0, 2e3))
def test_contact_complementarity(points, mu, k, c):
    pts = np.array(points)
    model = ContactModel(stiffness=k, damping=c, friction=mu)
    F, anchors = contact_forces(model, pts[:, :2], pts[:, 2:], np.full(len(pts), np.nan))
    above = pts[:, 1] >= 0
    assert np.all(F[:, 1] >= 0)
    assert np.all(F[above] == 0)
    assert np.all(np.isnan(anchors[above]))
    assert np.all(np.abs(F[:, 0]) <= mu * F[:, 1] + 1e-9)


def _trace(t, z, phase):
    n = len(t)
    vz = np.gradient(z, t)
    zeros = np.zeros(n)
    return SimTrace(t, np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 2, 2)), np.zeros((n, 0)),
                    np.zeros((n, 2)), np.asarray(phase), zeros, zeros, zeros, zeros,
                    np.column_stack([zeros, z]), np.column_stack([zeros, vz]), ["heel", "toe"], [],
                    ["x", "z", "pitch"])


def test_stationary_trace_has_no_hops():
    t = np.arange(0, 1, 1e-3)
    m = apex_and_hop_metrics(_trace(t, np.full_like(t, 0.5), np.zeros(len(t), int)))
    assert m["hops"] == 0
    assert m["apex_heights"] == []


@settings(max_examples=50, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(0.31, 0.69))
def test_parabola_apex_recovered(h, tc):
    g = 9.81
    t = np.round(np.arange(0, 1, 1e-3), 12)
    z = h - 0.5 * g * (t - tc) ** 2
    # exact velocity, so the sign change sits at the true apex sample
    tr = _trace(t, z, np.zeros(len(t), int))
    tr.cog_velocity[:, 1] = -g * (t - tc)
    m = apex_and_hop_metrics(tr)
    assert m["hops"] == 1
    assert m["apex_heights"][0] == pytest.approx(h, abs=1e-12)
    assert m["apex_times"][0] == pytest.approx(tc, abs=1e-9)


def test_apex_outside_flight_is_ignored():
    t = np.arange(0, 1, 1e-3)
    tr = _trace(t, 0.5 - 4.9 * (t - 0.5) ** 2, np.ones(len(t), int))
    assert apex_and_hop_metrics(tr)["hops"] == 0


# -- end-to-end hopping -----------------------------------------------------------

@pytest.fixture(scope="module")
def hop_run():
    cfg = config_from_dict({})
    return run_scenario(cfg, "hop")


def test_default_hopper_hops_within_cap(hop_run):
    trace, m = hop_run
    assert m["hops"] >= 3
    assert m["cap_respected"]
    assert m["max_tension"] <= 450.0
    assert min(m["stance_peak_tensions"]) > 50.0


def test_hop_trace_timestamps_uniform(hop_run):
    trace, _ = hop_run
    d = np.diff(trace.t)
    assert np.all(d > 0)
    assert np.allclose(d, d[0], rtol=0, atol=1e-12)
    assert trace.meta["config_hash"] and trace.meta["seed"] == 0


def test_energy_accounting_per_hop(hop_run):
    trace, m = hop_run
    idx = [int(np.argmin(np.abs(trace.t - a))) for a in m["apex_times"]]
    work = trace.work_actuator + trace.work_contact + trace.work_passive
    for a, b in zip(idx[:-1], idx[1:]):
        gross = sum(abs(w[b] - w[a]) for w in (trace.work_actuator, trace.work_contact, trace.work_passive))
        err = (trace.energy[b] - trace.energy[a]) - (work[b] - work[a])
        assert abs(err) <= 0.01 * gross


def test_halving_dt_keeps_apexes(hop_run):
    _, coarse = hop_run
    cfg = config_from_dict({})
    fine_sim = replace(cfg.sim.build(), dt=5e-5, record_every=20)
    hop = replace(hop_settings(cfg), duration=2.0)
    _, fine = run_hop(cfg.body.build(cfg.gravity), hop, cfg.contact.build(), fine_sim)
    n = len(fine["apex_heights"])
    assert n >= 2
    a = np.array(coarse["apex_heights"][:n])
    b = np.array(fine["apex_heights"])
    assert np.all(np.abs(a - b) / a < 0.02)


def test_zero_gains_no_hops():
    zero = {k: 0.0 for k in ("spring_stiffness", "energy_gain", "horizontal_gain", "attitude_kp", "attitude_kd",
                             "swing_kp", "swing_kd", "foot_kp", "foot_kd", "velocity_gain", "cg_print_gain")}
    cfg = config_from_dict({"hopper": {"gains": zero, "duration": 1.0}})
    _, m = run_scenario(cfg, "hop")
    assert m["hops"] == 0


def test_same_config_same_csv():
    cfg = config_from_dict({"leg_jump": {"duration": 0.3}})
    a, _ = run_scenario(cfg, "leg-jump")
    b, _ = run_scenario(cfg, "leg-jump")
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().startswith("# config_hash:")


def test_leg_jump_lifts_torso():
    trace, m = run_scenario(config_from_dict({}), "leg-jump")
    assert m["torso_lift"] > 0.05
    assert m["max_tension"] <= m["tension_cap"] + 1e-9
    # pre, push, post in order
    assert list(dict.fromkeys(trace.phase.tolist())) == [0, 1, 2]


def test_unknown_scenario():
    with pytest.raises(ValueError):
        run_scenario(config_from_dict({}), "cartwheel")


def test_bad_config_field_path():
    with pytest.raises(ConfigError, match="contact.friction"):
        config_from_dict({"contact": {"friction": 3.0}})
