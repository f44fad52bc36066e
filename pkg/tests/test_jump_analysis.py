import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cumulative_trapezoid

from kangaroo.config import analysis_setup, load_config
from kangaroo.dynamics import ChainState, bias_forces
from kangaroo.jump_analysis import (
    ANKLE,
    KNEE,
    TORSO_LINK,
    IKError,
    LeapParams,
    NearSingularError,
    SingularSystemError,
    UnreachableError,
    _cog_state,
    analyze_jump,
    cog_trajectory,
    differentiate_trajectory,
    leg_inverse_kinematics,
    muscle_profiles,
    stance_torques_with_tail,
)
from kangaroo.muscle import muscle_lengths

MODEL, ROUTING, PARAMS, POSTURE, TAIL_AT = analysis_setup(load_config())


@pytest.fixture(scope="module")
def analysis():
    return analyze_jump(MODEL, ROUTING, PARAMS, POSTURE, TAIL_AT)


def test_leap_timing():
    p = LeapParams(2.0, 0.4, 0.6)
    assert p.stance_time == pytest.approx(0.2)
    assert p.flight_time == pytest.approx(0.3)
    assert p.takeoff_speed == pytest.approx(1.4715)
    assert p.stance_depth == pytest.approx(0.0937, abs=5e-5)


def test_stance_depth_by_integrating_velocity():
    p = LeapParams(2.0, 0.4, 0.6, sample_count=20001)
    cog = cog_trajectory(p)
    st_ = cog.stance
    z = p.touchdown_height + cumulative_trapezoid(cog.zd[st_], cog.t[st_], initial=0.0)
    assert p.touchdown_height - z.min() == pytest.approx(0.0937, abs=5e-5)
    np.testing.assert_allclose(z, cog.z[st_], atol=1e-8)


def test_horizontal_velocity_constant_in_stance():
    cog = cog_trajectory(PARAMS)
    assert np.abs(cog.xd[cog.stance] - PARAMS.horizontal_velocity).max() <= 1e-9
    assert np.abs(np.diff(cog.x[cog.stance]) - PARAMS.horizontal_velocity * np.diff(cog.t[cog.stance])).max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.05, 1.0), st.floats(0.01, 2.0), st.floats(0.3, 1.0))
def test_phase_boundaries_are_continuous(v, s_st, s_fl, h):
    p = LeapParams(v, s_st, s_fl, touchdown_height=h)
    Ts, T = p.stance_time, p.stance_time + p.flight_time
    eps = 1e-12
    a = np.array(_cog_state(p, np.array([Ts]))).ravel()
    b = np.array(_cog_state(p, np.array([Ts + eps]))).ravel()
    assert np.abs(a - b).max() <= 1e-9
    # the flight ends where the next stance begins
    start = np.array(_cog_state(p, np.array([0.0]))).ravel()
    end = np.array(_cog_state(p, np.array([T]))).ravel()
    assert end[1] == pytest.approx(start[1], abs=1e-9)
    assert end[3] == pytest.approx(start[3], abs=1e-9)


def test_vanishing_flight_gives_level_stance():
    p = LeapParams(2.0, 0.4, 1e-9)
    cog = cog_trajectory(p)
    assert p.takeoff_speed < 1e-7
    assert np.ptp(cog.z) < 1e-8


def test_leap_params_validation():
    with pytest.raises(ValueError):
        LeapParams(sample_count=2)
    with pytest.raises(ValueError):
        LeapParams(horizontal_velocity=0.0)


def cog_and_pitch(theta):
    kin = MODEL.kinematics(theta)
    return kin.com_position, kin.angle[TORSO_LINK]


def test_ik_roundtrip_random_targets():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        truth = POSTURE + rng.uniform(-0.2, 0.2, 4)
        target, pitch = cog_and_pitch(truth)
        th = leg_inverse_kinematics(MODEL, (0.0, 0.0), target, pitch, theta0=POSTURE)
        com, ang = cog_and_pitch(th)
        worst = max(worst, np.abs(com - target).max())
        assert ang == pytest.approx(pitch, abs=1e-9)
    assert worst < 1e-6


def test_ik_respects_toe_anchor():
    truth = POSTURE + 0.05
    target, pitch = cog_and_pitch(truth)
    shifted = target + np.array([0.3, 0.0])
    th = leg_inverse_kinematics(MODEL, (0.3, 0.0), shifted, pitch, theta0=POSTURE)
    np.testing.assert_allclose(th, leg_inverse_kinematics(MODEL, (0, 0), target, pitch, theta0=POSTURE),
                               atol=1e-9)


def test_straight_leg_at_full_extension():
    pitch = np.deg2rad(20.0)
    straight = np.array([np.pi / 2, 0.0, 0.0, pitch - np.pi / 2])
    target, _ = cog_and_pitch(straight)
    try:
        th = leg_inverse_kinematics(MODEL, (0.0, 0.0), target, pitch, theta0=POSTURE, max_iter=200)
    except NearSingularError as exc:
        th = exc.theta
    assert abs(th[KNEE]) < 1e-2 and abs(th[ANKLE]) < 1e-2


def test_unreachable_target():
    with pytest.raises(UnreachableError) as info:
        leg_inverse_kinematics(MODEL, (0.0, 0.0), (0.0, 2.0), 0.3, theta0=POSTURE)
    assert isinstance(info.value, IKError) and info.value.residual > 1e-3


def test_stance_crouches_then_extends(analysis):
    # toe-to-hip distance shortens to a minimum inside the stance, then recovers
    hip = np.array([MODEL.kinematics(th).link_tip(2) for th in analysis.theta])
    leg = np.hypot(hip[:, 0], hip[:, 1])
    k = int(np.argmin(leg))
    n = len(leg)
    assert 0.25 * n < k < 0.75 * n
    assert np.all(np.diff(leg[: k - 5]) < 0) and np.all(np.diff(leg[k + 5:]) > 0)
    assert leg[0] - leg[k] > 0.1 and leg[-1] - leg[k] > 0.05
    # knee flexion peaks inside the stance
    knee = np.abs(analysis.theta[:, KNEE])
    j = int(np.argmax(knee))
    assert 0.25 * n < j < 0.75 * n
    assert knee[j] > knee[0] + 0.5 and knee[j] > knee[-1] + 0.3


def test_differentiate_constant_and_ramp():
    t = np.linspace(0, 1, 50)
    th = np.column_stack([np.full_like(t, 0.3), 2.0 * t - 1.0])
    v, a = differentiate_trajectory(th, t[1] - t[0])
    np.testing.assert_allclose(v, np.column_stack([np.zeros_like(t), np.full_like(t, 2.0)]), atol=1e-12)
    np.testing.assert_allclose(a, 0.0, atol=1e-9)


def test_differentiate_sine_against_analytic():
    w = 2 * np.pi
    t = np.linspace(0, 1, 1000)
    v, a = differentiate_trajectory(np.sin(w * t)[:, None], t[1] - t[0])
    assert np.abs(v[:, 0] - w * np.cos(w * t)).max() < 1e-4 * w
    assert np.abs(a[1:-1, 0] + w**2 * np.sin(w * t[1:-1])).max() < 1e-4 * w**2


def test_differentiate_quadratic_exact():
    t = np.linspace(0, 1, 7)
    v, a = differentiate_trajectory((3 * t**2 - t)[:, None], t[1] - t[0])
    np.testing.assert_allclose(v[:, 0], 6 * t - 1, atol=1e-10)
    np.testing.assert_allclose(a[:, 0], 6.0, atol=1e-8)


def test_differentiate_needs_three_samples():
    with pytest.raises(ValueError):
        differentiate_trajectory(np.zeros((2, 3)), 0.1)


def test_static_crouch_balances_gravity():
    th = np.atleast_2d(POSTURE)
    zero = np.zeros_like(th)
    tau, w, res = stance_torques_with_tail(MODEL, th, zero, zero, TAIL_AT)
    kin = MODEL.kinematics(th[0])
    from kangaroo.jump_analysis import tail_jacobian

    J = tail_jacobian(kin, TAIL_AT)
    np.testing.assert_allclose(tau[0] + J.T @ w[0], bias_forces(MODEL, ChainState(th[0])), atol=1e-10)
    assert tau[0, 0] == 0 and res[0] <= 1e-12


def test_zero_tail_jacobian_is_singular():
    th = np.atleast_2d(POSTURE)
    zero = np.zeros_like(th)
    with pytest.raises(SingularSystemError):
        stance_torques_with_tail(MODEL, th, zero, zero, TAIL_AT, tail_jac=lambda kin: np.zeros((3, 4)))


def test_equation_residual_along_trajectory(analysis):
    _, _, res = stance_torques_with_tail(MODEL, analysis.theta, analysis.theta_dot, analysis.theta_ddot,
                                         TAIL_AT)
    assert res.max() <= 1e-8


def test_knee_torque_peak_exceeds_ankle(analysis):
    peak = np.abs(analysis.tau).max(axis=0)
    assert peak[KNEE] > peak[ANKLE]
    assert np.all(np.isfinite(analysis.tau))


def test_muscle_velocity_matches_length_differences(analysis):
    dt = analysis.t[1] - analysis.t[0]
    L = analysis.muscles.lengths
    fd = (L[2:] - L[:-2]) / (2 * dt)
    assert np.abs(fd - analysis.muscles.velocity[1:-1]).max() < 1e-4
    L0 = muscle_lengths(ROUTING, MODEL, ChainState(analysis.theta[0]))
    np.testing.assert_allclose(L[0], L0)


def test_no_motion_no_muscle_velocity():
    th = np.tile(POSTURE, (3, 1))
    zero = np.zeros_like(th)
    tau, _, _ = stance_torques_with_tail(MODEL, th, zero, zero, TAIL_AT)
    prof = muscle_profiles(ROUTING, MODEL, th, zero, tau)
    assert np.all(prof.velocity == 0)


def test_wire_power_equals_joint_power(analysis):
    m = analysis.muscles
    ok = m.feasible
    assert ok.all()
    wire = np.sum(m.f * -m.velocity, axis=1)
    joint = np.sum(analysis.tau * analysis.theta_dot, axis=1)
    scale = np.sum(np.abs(analysis.tau * analysis.theta_dot), axis=1) + 1e-9
    assert np.abs(wire - joint).max() / scale.max() <= 1e-6


def test_pipeline_is_deterministic(analysis):
    again = analyze_jump(MODEL, ROUTING, PARAMS, POSTURE, TAIL_AT)
    assert np.array_equal(again.theta, analysis.theta)
    assert np.array_equal(again.muscles.f, analysis.muscles.f)
    assert again.summary() == analysis.summary()


def test_default_routing_pattern(analysis):
    peaks = np.sort(analysis.muscles.f.max(axis=0))
    assert np.all((peaks[1:] >= 400) & (peaks[1:] <= 1000))
    assert peaks[0] < 0.1 * peaks[-1]
    assert 0.5 <= np.abs(analysis.muscles.velocity).max() <= 1.5
