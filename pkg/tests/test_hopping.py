from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kangaroo.config import config_from_dict, hop_settings, leg_arms
from kangaroo.hopping import (HopperGains, HoppingController, Phase, PhaseState, computed_torque,
                              flight_foot_target, hop_energy, stance_force)
from kangaroo.robot import FOOT, build_body, pulley_routing
from kangaroo.scenarios import hop_initial_state, run_hop

M, G = 15.0, 9.81


def test_hop_energy():
    assert hop_energy(2.0, 10.0, 0.5, 3.0) == pytest.approx(0.5 * 2 * 9 + 2 * 10 * 0.5)


def test_stance_force_equilibrium_is_zero():
    g = HopperGains(target_velocity=0.4)
    z = g.apex_height
    F = stance_force((0.0, z), (0.4, 0.0), (0.0, z - g.rest_length), g, M, G)
    assert F == pytest.approx([0.0, 0.0], abs=1e-12)


def test_compressed_leg_pushes_axially():
    g = HopperGains(target_velocity=0.0)
    toe = np.array([0.1, 0.0])
    cog = toe + 0.45 * np.array([-0.6, 0.8])
    # moving toward the toe: compression half, no energy term
    F = stance_force(cog, (0.06, -0.08), toe, g, M, G)
    u = (cog - toe) / np.linalg.norm(cog - toe)
    spring = g.spring_stiffness * (g.rest_length - 0.45)
    assert F == pytest.approx(spring * u - g.horizontal_gain * 0.06 * np.array([1.0, 0.0]))
    Fa = stance_force(cog, (0.0, -0.1), toe, replace(g, horizontal_gain=0.0), M, G)
    assert Fa == pytest.approx(spring * u)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.2, 0.7), st.floats(-1.2, 1.2), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.0, 2.0))
def test_leg_never_pulls(length, angle, vx, vz, z0):
    toe = np.array([0.0, z0])
    u = np.array([np.sin(angle), np.cos(angle)])
    F = stance_force(toe + length * u, (vx, vz), toe, replace(HopperGains(), horizontal_gain=0.0), M, G)
    assert F @ u >= -1e-9
    assert abs(F[0] * u[1] - F[1] * u[0]) < 1e-9 * max(1.0, np.linalg.norm(F))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.3, 0.54), st.floats(0.01, 2.0), st.floats(0.1, 0.5))
def test_energy_term_only_while_extending(length, speed, z):
    g = replace(HopperGains(), horizontal_gain=0.0)
    toe = np.array([0.0, 0.0])
    cog = np.array([0.0, length])
    deficit = M * G * g.apex_height - hop_energy(M, G, length, speed)
    up = stance_force(cog, (0.0, speed), toe, g, M, G)[1]
    down = stance_force(cog, (0.0, -speed), toe, g, M, G)[1]
    spring = g.spring_stiffness * (g.rest_length - length)
    assert down == pytest.approx(spring)
    assert up == pytest.approx(max(spring + g.energy_gain * deficit, 0.0))


def test_neutral_point():
    g = HopperGains(target_velocity=0.5)
    assert flight_foot_target(0.5, g, 0.2, 1.0) == pytest.approx(0.5 * 0.2 / 2)
    # before the first stance the nominal stance time is used
    assert flight_foot_target(0.5, g, None, 1.0) == pytest.approx(0.5 * g.nominal_stance_time / 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 2).flatmap(lambda m: st.sampled_from([m, -m])), st.floats(0.0, 1.0))
def test_faster_than_target_steps_further(dv, target):
    g = HopperGains(target_velocity=target, velocity_gain=0.1)
    neutral = target * 0.2 / 2
    x = flight_foot_target(target + dv, g, 0.2, 10.0)
    assert np.sign(x - neutral) == np.sign(dv)


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100), st.floats(0.1, 1.0))
def test_placement_clamped_to_reach(vx, reach):
    g = HopperGains()
    assert abs(flight_foot_target(vx, g, 0.2, reach)) <= 0.95 * reach + 1e-12


def test_phase_hysteresis():
    s = PhaseState()
    assert not s.advance(0.000, Phase.STANCE, 2)
    # a lone disagreeing sample is forgotten
    assert not s.advance(0.001, Phase.FLIGHT, 2)
    assert not s.advance(0.002, Phase.STANCE, 2)
    assert s.advance(0.003, Phase.STANCE, 2)
    assert s.phase == Phase.STANCE
    for t in (0.1, 0.2):
        s.advance(t, Phase.STANCE, 2)
    s.advance(0.201, Phase.FLIGHT, 2)
    assert s.advance(0.202, Phase.FLIGHT, 2)
    assert s.hops == 1
    assert s.last_stance_duration == pytest.approx(0.202 - 0.003)
    assert not s.armed


@pytest.mark.parametrize("field,value", [("spring_stiffness", -1.0), ("swing_kd", -1.0), ("tension_cap", 0.0),
                                         ("hysteresis", 0)])
def test_gain_validation(field, value):
    with pytest.raises(ValueError):
        HopperGains(**{field: value})


def _controller(**gains):
    cfg = config_from_dict({})
    arms, names, f_max = leg_arms(cfg)
    routing = pulley_routing(arms, f_max, list(names))
    body = build_body(cfg.body.build(cfg.gravity), routing=routing)
    g = replace(HopperGains(), **gains)
    return body, routing, HoppingController(body, g, routing)


def test_cap_above_muscle_limit_rejected():
    cfg = config_from_dict({})
    arms, names, _ = leg_arms(cfg)
    routing = pulley_routing(arms, 300.0, list(names))
    body = build_body(cfg.body.build(cfg.gravity), routing=routing)
    with pytest.raises(ValueError):
        HoppingController(body, HopperGains(tension_cap=450.0), routing)


def test_mid_flight_on_target_is_bias_only():
    body, _, ctl = _controller()
    q, qd = hop_initial_state(body, ctl.gains, 0.8)
    qd[:] = 0.0
    # the target depends on the COG, which moves with the leg: iterate to the fixed point
    for _ in range(30):
        kin = body.model.kinematics(q, qd)
        q[body.leg_dofs] = ctl.flight_targets(kin)
    kin = body.model.kinematics(q, qd)
    assert ctl.flight_targets(kin) == pytest.approx(q[body.leg_dofs], abs=1e-9)
    bias = computed_torque(body, kin, np.zeros(3))
    assert ctl.flight_torques(kin) == pytest.approx(bias, abs=1e-9)
    _, info = ctl(0.0, kin, np.zeros((len(body.contacts), 2)))
    assert info["phase"] == Phase.FLIGHT
    assert info["tau_desired"] == pytest.approx(bias, abs=1e-9)


def test_repeat_call_at_same_time_is_identical():
    body, _, ctl = _controller()
    q, qd = hop_initial_state(body, ctl.gains, 0.8)
    kin = body.model.kinematics(q, qd)
    forces = np.zeros((len(body.contacts), 2))
    Q1, i1 = ctl(0.5, kin, forces)
    Q2, i2 = ctl(0.5, kin, forces)
    assert np.array_equal(Q1, Q2)
    assert np.array_equal(i1["tensions"], i2["tensions"])


def test_tensions_respect_cap_and_slew():
    body, routing, ctl = _controller(slew_rate=2000.0, tension_cap=300.0)
    q, qd = hop_initial_state(body, ctl.gains, 0.8)
    kin = body.model.kinematics(q, qd)
    rng = np.random.default_rng(3)
    prev = None
    for k in range(50):
        tau = rng.normal(scale=60.0, size=3)
        f, applied, _ = ctl.allocate(kin, tau, k * 1e-3)
        assert np.all(f >= 0) and np.all(f <= 300.0 + 1e-9)
        if prev is not None:
            assert np.all(np.abs(f - prev) <= 2000.0 * 1e-3 + 1e-9)
        ctl._f_prev, ctl._t_prev = f, k * 1e-3
        prev = f


@pytest.fixture(scope="module")
def short_hop():
    cfg = config_from_dict({"hopper": {"duration": 1.3}})
    body = build_body(cfg.body.build(cfg.gravity))
    return body, hop_settings(cfg).gains, *run_hop(cfg.body.build(cfg.gravity), hop_settings(cfg),
                                                   cfg.contact.build(), cfg.sim.build())


def test_energy_term_raises_push_on_deficit(short_hop):
    body, g, trace, _ = short_hop
    spring_only = replace(g, energy_gain=0.0)
    mass = body.model.total_mass()
    checked = 0
    for q, qd, ph in zip(trace.q, trace.qd, trace.phase):
        if ph != Phase.STANCE:
            continue
        kin = body.model.kinematics(q, qd)
        toe = kin.point_world(FOOT, (body.params.leg_lengths[2], 0.0))
        cog, v = kin.com_position, kin.com_velocity
        u = (cog - toe) / np.linalg.norm(cog - toe)
        deficit = mass * G * g.apex_height - hop_energy(mass, G, cog[1], v[1])
        full = stance_force(cog, v, toe, g, mass, G) @ u
        base = stance_force(cog, v, toe, spring_only, mass, G) @ u
        if v @ u > 0 and deficit > 0 and base > 0:
            assert full > base
            checked += 1
        elif v @ u <= 0:
            assert full == pytest.approx(base)
    assert checked > 10


def test_phases_alternate(short_hop):
    _, _, trace, m = short_hop
    changes = np.flatnonzero(np.diff(trace.phase))
    assert len(changes) >= 2
    assert set(trace.phase.tolist()) == {0, 1}
    assert m["hops"] >= 1
