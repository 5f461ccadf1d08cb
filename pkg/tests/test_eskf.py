import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeroio import geometry
from aeroio.eskf import (
    BA,
    BG,
    CHI2_3_999,
    POS,
    TH,
    VEL,
    AeroInversePredictor,
    FilterConfig,
    NavState,
    ProcessNoise,
    TruthVelocityPredictor,
    attitude_from_accel,
    error_transition,
    inject,
    nees,
    propagate,
    propagate_mean,
    run_filter,
    state_error,
    update_velocity,
)
from aeroio.exceptions import InnovationGateRejected
from aeroio.harness.metrics import compute_metrics
from aeroio.harness.io import Track
from aeroio.sensor_sim import NoiseConfig, TrajectorySpec, generate_trajectory, simulate, synthesize_sensors

G = np.array([0.0, 0.0, -9.81])


def random_state(rng):
    return NavState(geometry.exp_map(rng.normal(size=3)), 3 * rng.normal(size=3), 10 * rng.normal(size=3),
                    0.1 * rng.normal(size=3), 0.01 * rng.normal(size=3))


def test_hover_state_is_stationary():
    x = NavState(np.eye(3), np.zeros(3), np.array([1.0, 2.0, 3.0]))
    P = np.eye(15) * 1e-3
    for _ in range(500):
        x, P = propagate(x, P, np.zeros(3), np.array([0, 0, 9.81]), 0.005)
    np.testing.assert_array_equal(x.v, np.zeros(3))
    np.testing.assert_array_equal(x.p, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(x.R, np.eye(3))


def test_trace_grows_under_propagation():
    x = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    P = np.eye(15) * 1e-4
    for _ in range(20):
        x, P2 = propagate(x, P, np.zeros(3), np.array([0, 0, 9.81]), 0.01)
        assert np.trace(P2) > np.trace(P)
        P = P2


def test_single_step_matches_straight_line_integrator():
    rng = np.random.default_rng(0)
    x = random_state(rng)
    gyro, accel, dt = rng.normal(size=3), rng.normal(size=3) + [0, 0, 9.81], 0.01
    # independent transcription of the strapdown step
    w = (gyro - x.bg) * dt
    th = np.linalg.norm(w)
    K = geometry.hat(w / th)
    dR = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K
    a_w = x.R @ (accel - x.ba) + G
    out = propagate_mean(x, gyro, accel, dt)
    np.testing.assert_allclose(out.R, x.R @ dR, atol=1e-12)
    np.testing.assert_allclose(out.v, x.v + a_w * dt, atol=1e-12)
    np.testing.assert_allclose(out.p, x.p + x.v * dt + 0.5 * a_w * dt**2, atol=1e-12)
    np.testing.assert_array_equal(out.ba, x.ba)
    np.testing.assert_array_equal(out.bg, x.bg)


def test_propagate_rejects_bad_input():
    x = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        propagate(x, np.eye(15), [np.nan, 0, 0], [0, 0, 9.81], 0.01)
    with pytest.raises(ValueError):
        propagate(x, np.eye(15), [0, 0, 0], [0, 0, 9.81], 0.1)
    with pytest.raises(ValueError):
        propagate(x, np.eye(15), [0, 0, 0], [0, 0, 9.81], 0.0)


def linearization_ratio(rng, dt=0.005):
    x = random_state(rng)
    gyro, accel = rng.normal(size=3), 3 * rng.normal(size=3) + [0, 0, 9.81]
    A, _ = error_transition(x, gyro, accel, dt)
    x_next = propagate_mean(x, gyro, accel, dt)
    u = rng.normal(size=15)
    u /= np.linalg.norm(u)
    res = []
    for eps in (1e-3, 1e-4):
        dx = eps * u
        moved = propagate_mean(inject(x, dx), gyro, accel, dt)
        res.append(np.linalg.norm(state_error(moved, x_next) - A @ dx))
    return res[0] / res[1]


def test_linearization_residual_is_second_order():
    rng = np.random.default_rng(1)
    ratios = [linearization_ratio(rng) for _ in range(20)]
    assert 50 <= min(ratios) and max(ratios) <= 200


def test_inject_and_state_error_are_inverse():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    dx = 0.1 * rng.normal(size=15)
    np.testing.assert_allclose(state_error(inject(x, dx), x), dx, atol=1e-12)


def test_zero_innovation_keeps_state_and_shrinks_trace():
    rng = np.random.default_rng(3)
    x = random_state(rng)
    P = np.diag(rng.uniform(1e-4, 1e-1, 15))
    x2, P2 = update_velocity(x, P, x.R.T @ x.v, [0.01, 0.01, 0.01])
    np.testing.assert_allclose(x2.v, x.v, atol=1e-15)
    np.testing.assert_allclose(x2.R, x.R, atol=1e-15)
    assert np.trace(P2) < np.trace(P)


def test_huge_measurement_noise_suppresses_update():
    rng = np.random.default_rng(4)
    x = random_state(rng)
    P = np.diag(rng.uniform(1e-3, 1e-1, 15))
    z = x.R.T @ x.v + np.array([0.3, -0.2, 0.1])
    big, _ = update_velocity(x, P, z, 1e9 * np.ones(3), gate=None)
    unit, _ = update_velocity(x, P, z, np.ones(3), gate=None)
    change_big = np.linalg.norm(state_error(big, x))
    change_unit = np.linalg.norm(state_error(unit, x))
    assert change_big < 1e-6 * change_unit


def test_scalar_filter_reduction():
    x = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    p, r, z = 0.4, 0.1, 0.7
    P = np.zeros((15, 15))
    P[3, 3] = p
    x2, P2 = update_velocity(x, P, [z, 0, 0], [r, 1.0, 1.0], gate=None)
    gain = p / (p + r)
    assert x2.v[0] == pytest.approx(gain * z, abs=1e-15)
    assert P2[3, 3] == pytest.approx(p * r / (p + r), abs=1e-15)
    P2[3, 3] = 0
    np.testing.assert_allclose(P2, 0.0, atol=1e-15)


def test_gate_rejects_outlier_without_changing_state():
    x = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    P = np.eye(15) * 1e-4
    with pytest.raises(InnovationGateRejected) as info:
        update_velocity(x, P, [10.0, 0, 0], [1e-3] * 3)
    assert info.value.statistic > CHI2_3_999


@given(st.integers(0, 10_000))
def test_joseph_update_never_increases_trace(seed):
    rng = np.random.default_rng(seed)
    x = random_state(rng)
    L = rng.normal(size=(15, 15)) * 0.1
    P = L @ L.T + 1e-6 * np.eye(15)
    _, P2 = update_velocity(x, P, x.R.T @ x.v + 0.01 * rng.normal(size=3), rng.uniform(1e-3, 1, 3), gate=None)
    assert np.trace(P2) <= np.trace(P) + 1e-12
    np.testing.assert_allclose(P2, P2.T, atol=1e-12)


def test_covariance_stays_symmetric_psd_over_many_cycles():
    rng = np.random.default_rng(5)
    x = NavState(np.eye(3), np.zeros(3), np.zeros(3))
    P = np.eye(15) * 1e-2
    q = ProcessNoise()
    for k in range(2000):
        gyro = 0.3 * rng.normal(size=3)
        accel = rng.normal(size=3) + [0, 0, 9.81]
        x, P = propagate(x, P, gyro, accel, 0.005, q)
        if k % 5 == 0:
            x, P = update_velocity(x, P, x.R.T @ x.v + 0.05 * rng.normal(size=3), [0.01] * 3, gate=None)
    assert np.max(np.abs(P - P.T)) < 1e-9
    assert np.linalg.eigvalsh(P).min() >= -1e-10


def test_nees_matches_definition():
    rng = np.random.default_rng(6)
    x = random_state(rng)
    dx = 0.01 * rng.normal(size=15)
    P = np.diag(rng.uniform(1e-4, 1e-2, 15))
    assert nees(inject(x, dx), x, P) == pytest.approx(np.sum(dx**2 / np.diag(P)), rel=1e-9)


def test_attitude_from_accel_levels_gravity():
    R = geometry.exp_map([0.2, -0.1, 0.0])
    f = R.T @ np.array([0, 0, 9.81])
    R0 = attitude_from_accel(f)
    np.testing.assert_allclose(R0 @ f, [0, 0, 9.81], atol=1e-12)


def test_stationary_sequence_has_no_velocity_drift(coeffs):
    seq = simulate(TrajectorySpec("hover", 5.0, 200.0), coeffs)
    res = run_filter(seq, None, FilterConfig(init="truth"))
    np.testing.assert_array_equal(res.v, 0.0)


def test_truth_predictor_on_noiseless_data_tracks_position(coeffs):
    seq = simulate(TrajectorySpec("random_smooth", 60.0, 200.0, speed=3.0, seed=1), coeffs)
    res = run_filter(seq, TruthVelocityPredictor(1e-10, seed=0), FilterConfig(init="truth"))
    assert np.linalg.norm(res.p[-1] - seq.truth.p[-1]) < 1e-3
    assert res.n_updates > 1000 and res.n_skipped == 0


def test_dead_reckoning_error_grows_superlinearly(coeffs):
    noise = NoiseConfig(sigma_a=0.05, sigma_g=0.002, sigma_ba=0.002, sigma_bg=2e-4,
                        initial_bias_a=(0.05, -0.03, 0.02), seed=2)
    seq = simulate(TrajectorySpec("random_smooth", 60.0, 100.0, speed=3.0, seed=3), coeffs, noise)
    res = run_filter(seq, None, FilterConfig(init="truth"))
    err = np.linalg.norm(res.p - seq.truth.p, axis=1)
    n = len(err)
    assert err[-1] / err[n // 2] > 2.5  # doubling the time more than doubles the error


def test_slow_updates_lose_to_fast_updates(coeffs):
    noise = NoiseConfig(sigma_a=0.05, sigma_g=0.002, sigma_ba=0.002, sigma_bg=2e-4, seed=8)
    ates = {}
    for rate in (0.1, 20.0):
        vals = []
        for seed in range(3):
            seq = simulate(TrajectorySpec("random_smooth", 40.0, 100.0, speed=3.0, seed=seed), coeffs,
                           NoiseConfig(**{**noise.__dict__, "seed": seed}))
            cfg = FilterConfig(update_rate=rate, init="truth",
                               process_noise=ProcessNoise.from_noise_config(noise, seq.dt))
            res = run_filter(seq, TruthVelocityPredictor(0.01, seed=seed), cfg)
            vals.append(compute_metrics(Track.from_filter(res), Track.from_sequence(seq)).ate)
        ates[rate] = np.mean(vals)
    assert ates[0.1] > ates[20.0]


def test_aero_predictor_reading_matches_truth_on_clean_data(clean_seq, coeffs):
    pred = AeroInversePredictor(coeffs, n_average=1)
    pred.reset(clean_seq)
    k = 300
    x = NavState(clean_seq.truth.R[k], clean_seq.truth.v[k], clean_seq.truth.p[k])
    v, var = pred.predict(k, x, np.eye(15) * 1e-6)
    np.testing.assert_allclose(v, clean_seq.truth.body_velocity[k], atol=1e-8)
    assert np.all(var > 0)


def test_block_layout():
    assert [s.start for s in (TH, VEL, POS, BA, BG)] == [0, 3, 6, 9, 12]
