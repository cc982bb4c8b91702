import logging
import math
import pickle
from dataclasses import replace

import numpy as np
import pytest

from modules.analysis import check_output_rate_identity, check_premise_identity
from modules.cache import PilotCache
from modules.config import load_preset
from modules.plants import PlantModel
from modules.simulation import (
    DivergenceError,
    ErrorDerivativeEstimator,
    ScenarioConfig,
    add_noise,
    integrate_step,
    noise_std,
    pilot_signal_rms,
    run_scenario,
)
from modules.smlc import CLAMP_Q, ZERO_PAD

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def _decay_plant() -> PlantModel:
    return PlantModel(name='decay', state_dim=1, order_n=2, g=1.0, derivative=lambda t, x, u, d: -x + u)


def _scenario2(**changes) -> ScenarioConfig:
    values = {'snr_db': None}
    values.update(changes)
    return replace(load_preset('scenario2'), **values)


@pytest.fixture(scope='module')
def fine_run():
    """1 s noise-free regulation run at dt = 1e-4 with wide membership functions."""
    return run_scenario(_scenario2(dt=1e-4, horizon=1.0, input_range=3.0))


@pytest.fixture(scope='module')
def regulation_run():
    """20 s noise-free scenario2 preset run."""
    return run_scenario(_scenario2())


@pytest.fixture(scope='module')
def scenario1_run():
    """60 s scenario1 preset run."""
    return run_scenario(load_preset('scenario1'))


@pytest.fixture(scope='module')
def noisy_run():
    """40 s scenario2 run at 50 dB, with the pilot RMS that scaled its noise."""
    cfg = replace(load_preset('scenario2'), horizon=40.0)
    rms = pilot_signal_rms(cfg)
    return cfg, rms, run_scenario(cfg, rms=rms)


def test_rk4_single_step_accuracy():
    x = integrate_step(_decay_plant(), np.array([1.0]), 0.0, 0.0, 0.01)
    assert x[0] == pytest.approx(math.exp(-0.01), abs=1e-10)


def test_rk4_holds_control_constant():
    x = integrate_step(_decay_plant(), np.array([1.0]), 1.0, 0.0, 0.01)
    assert x[0] == pytest.approx(1.0, abs=1e-12)


def test_rk4_non_finite_state_raises():
    plant = PlantModel(name='blowup', state_dim=1, order_n=2, g=1.0, derivative=lambda t, x, u, d: np.array([np.inf]))
    with pytest.raises(DivergenceError) as excinfo:
        integrate_step(plant, np.array([0.0]), 0.0, 0.0, 0.01, step=7)
    assert excinfo.value.step == 7


def test_divergence_error_pickles():
    err = pickle.loads(pickle.dumps(DivergenceError('boom', 3, None)))
    assert str(err) == 'boom'
    assert err.step == 3


def test_noise_std_from_snr():
    assert noise_std([1.0], 50.0) == pytest.approx([10 ** -2.5])
    assert noise_std([2.0, 0.5], 20.0) == pytest.approx([0.2, 0.05])


def test_noise_off_is_identity_and_draws_nothing():
    rng = np.random.default_rng(3)
    before = rng.bit_generator.state
    x = np.array([0.3, -0.4])
    assert np.array_equal(add_noise(x, None, [1.0, 1.0], rng), x)
    assert np.array_equal(add_noise(x, math.inf, [1.0, 1.0], rng), x)
    assert rng.bit_generator.state == before


def test_noise_is_seeded():
    x = np.zeros(2)
    a = add_noise(x, 30.0, [1.0, 1.0], np.random.default_rng(5))
    b = add_noise(x, 30.0, [1.0, 1.0], np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, x)


def test_estimator_second_derivative_of_quadratic():
    dt = 0.01
    estimator = ErrorDerivativeEstimator(3, dt)
    for i in range(20):
        t = i * dt
        err, padded = estimator.estimate(t ** 2, 2 * t)
        assert padded == (i == 0)
        if i > 0:
            assert err.e_ddot == pytest.approx(2.0, abs=1e-9)
    assert err.order == 3


def test_estimator_second_order_keeps_extra_derivative():
    estimator = ErrorDerivativeEstimator(2, 0.1)
    estimator.estimate(0.0, 1.0)
    err, padded = estimator.estimate(0.1, 1.5)
    assert err.order == 2
    assert not padded
    assert err.e_ddot == pytest.approx(5.0)


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        _scenario2(dt=0.0)
    with pytest.raises(ValueError):
        _scenario2(horizon=-1.0)
    with pytest.raises(ValueError):
        _scenario2(alpha0=0.0)
    for snr in (math.nan, -math.inf):
        with pytest.raises(ValueError):
            _scenario2(snr_db=snr)
    assert _scenario2(snr_db=math.inf).snr_db is None
    assert _scenario2(horizon=1.0, dt=1e-4).step_count == 10000


def test_zero_horizon_gives_single_record():
    trace = run_scenario(_scenario2(horizon=0.0))
    assert len(trace) == 1
    assert trace.t[0] == 0.0
    assert trace.x_true[0] == pytest.approx([1.0, -1.0])
    assert trace.clamp_flags[0] & ZERO_PAD


def test_record_count_and_time_grid(fine_run):
    assert len(fine_run) == 10001
    assert fine_run.t[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(fine_run.t), 1e-4)


def test_runs_are_deterministic():
    cfg = replace(load_preset('scenario2'), horizon=0.5)
    first = run_scenario(cfg)
    second = run_scenario(cfg)
    assert np.array_equal(first.x_meas, second.x_meas)
    assert np.array_equal(first.u, second.u)
    third = run_scenario(replace(cfg, seed=cfg.seed + 1))
    assert not np.array_equal(first.x_meas, third.x_meas)


def test_noisy_run_measures_with_noise():
    cfg = replace(load_preset('scenario2'), horizon=0.2)
    trace = run_scenario(cfg, rms=[1.0, 1.0])
    residual = trace.x_meas - trace.x_true
    assert np.all(np.abs(residual[:, 0]) < 10 * 10 ** -2.5)
    assert np.any(residual != 0)


def test_adaptation_is_monotone_and_frozen_in_deadzone(fine_run):
    dk = np.diff(fine_run.k)
    dalpha = np.diff(fine_run.alpha)
    assert np.all(dk >= 0)
    assert np.all(dalpha >= 0)
    dead = fine_run.deadzone[:-1] == 1
    assert np.all(dk[dead] == 0)
    assert np.all(dalpha[dead] == 0)


def test_firing_strengths_stay_normalized(fine_run):
    assert np.max(np.abs(fine_run.firing_sums - 1.0)) < 1e-12


def test_output_rate_identity(fine_run):
    stats = check_output_rate_identity(fine_run, 1e-4)
    logger.info(f'Output-rate identity: {stats.as_dict()}')
    assert stats.samples > 5000
    assert stats.median < 0.05


def test_output_rate_error_shrinks_with_step():
    fine = check_output_rate_identity(run_scenario(_scenario2(dt=1e-4, horizon=0.5, input_range=3.0)), 1e-4)
    coarse = check_output_rate_identity(run_scenario(_scenario2(dt=2e-4, horizon=0.5, input_range=3.0)), 2e-4)
    assert fine.median < coarse.median


def test_premise_identity(fine_run):
    stats = check_premise_identity(fine_run, 1e-4)
    for family, family_stats in stats.items():
        logger.info(f'Premise identity {family}: {family_stats.as_dict()}')
        assert family_stats.median < 0.01


def test_regulation_without_noise(regulation_run):
    trace = regulation_run
    late = trace.t > 15.0
    assert np.all(np.abs(trace.x_true[late, 0]) < 0.05)
    assert np.all(np.abs(trace.x_true[late, 1]) < 0.05)
    assert trace.k[-1] > trace.k[0]


def test_acc_short_run_records_three_states():
    cfg = replace(load_preset('scenario1'), horizon=0.2)
    trace = run_scenario(cfg)
    assert len(trace) == 21
    assert trace.x_true.shape == (21, 3)
    assert trace.ref[0] == pytest.approx([0.0, 1.0, 0.0, 0.0])
    assert trace.disturbance[0] == pytest.approx(1.0)
    frame = trace.to_frame()
    assert list(frame.columns[:7]) == ['t', 'x1', 'x2', 'x3', 'm1', 'm2', 'm3']


def test_degenerate_firing_reported_as_divergence():
    cfg = _scenario2(n_mfs=1, input_range=1e-3)
    with pytest.raises(DivergenceError) as excinfo:
        run_scenario(cfg)
    assert excinfo.value.step == 0
    assert len(excinfo.value.trace) == 0


def test_pilot_cache_key_ignores_noise_fields():
    cache = PilotCache()
    cfg = load_preset('scenario2')
    assert cache.scenario_key(cfg) == cache.scenario_key(replace(cfg, seed=9, snr_db=30.0))
    assert cache.scenario_key(cfg) != cache.scenario_key(replace(cfg, horizon=5.0))
    cache.set(cache.scenario_key(cfg), [1.0, 2.0])
    assert cache.get(cache.scenario_key(cfg)) == [1.0, 2.0]
    assert cache.get_stats()['hits'] == 1


def test_measured_snr_matches_request():
    t = np.arange(10 ** 6) * 1e-3
    signal = math.sqrt(2.0) * np.sin(2 * math.pi * t)
    noisy = add_noise(signal, 50.0, [1.0], np.random.default_rng(11))
    noise = noisy - signal
    measured = 20 * math.log10(math.sqrt(np.mean(signal ** 2)) / math.sqrt(np.mean(noise ** 2)))
    assert measured == pytest.approx(50.0, abs=0.5)
    assert abs(np.mean(noise)) < 1e-5


def test_network_starts_at_configured_output(regulation_run, scenario1_run):
    assert regulation_run.u_n[0] == pytest.approx(0.0, abs=1e-9)
    assert scenario1_run.u_n[0] == pytest.approx(-2.0, abs=1e-9)


def test_q_denominator_stays_off_the_clamp(regulation_run):
    clamped = (regulation_run.clamp_flags[1:] & CLAMP_Q) != 0
    assert not np.any(clamped), f'q clamp fired on {np.count_nonzero(clamped)} steps'
    assert np.all(np.isfinite(regulation_run.q))


def test_zero_q_denominator_start_sits_on_the_clamp():
    trace = run_scenario(_scenario2(horizon=2.0, qden0=0.0))
    clamped = (trace.clamp_flags & CLAMP_Q) != 0
    assert np.mean(clamped) > 0.9


def test_scenario1_tracks_with_small_conventional_term(scenario1_run):
    trace = scenario1_run
    assert len(trace) == 6001
    t = trace.t
    last20 = t > t[-1] - 20.0
    mean_error = float(np.mean(np.abs(trace.e[last20])))
    scale = float(np.mean(np.abs(trace.xd[last20])))
    logger.info(f'Scenario1 trailing mean |e| {mean_error:.3g} against reference scale {scale:.3g}')
    assert mean_error < 0.01 * scale

    last30 = t > t[-1] - 30.0
    uc_late = float(np.mean(np.abs(trace.u_c[last30])))
    u_late = float(np.mean(np.abs(trace.u[last30])))
    uc_start = float(np.max(np.abs(trace.u_c[t < 1.0])))
    logger.info(f'Scenario1 trailing |u_c| {uc_late:.3g}, |u| {u_late:.3g}, first-second peak |u_c| {uc_start:.3g}')
    assert uc_late < 0.2 * u_late
    assert uc_late < 0.1 * uc_start


def test_noisy_regulation_residual_within_noise(noisy_run):
    cfg, rms, trace = noisy_run
    std = noise_std(rms, cfg.snr_db)
    late = trace.t > trace.t[-1] - 10.0
    residual = math.sqrt(float(np.mean(trace.x_true[late, 0] ** 2)))
    logger.info(f'Noisy scenario2 trailing RMS(x1) {residual:.3g}, injected std {std[0]:.3g}')
    assert residual < 5 * std[0]


@pytest.mark.parametrize('run', ['fine_run', 'regulation_run', 'scenario1_run', 'noisy_run'])
def test_adaptation_and_normalization_hold_on_every_run(run, request):
    trace = request.getfixturevalue(run)
    if isinstance(trace, tuple):
        trace = trace[-1]
    dk = np.diff(trace.k)
    dalpha = np.diff(trace.alpha)
    dead = trace.deadzone[:-1] == 1
    assert np.all(dk >= 0) and np.all(dalpha >= 0)
    assert np.all(dk[dead] == 0) and np.all(dalpha[dead] == 0)
    assert np.max(np.abs(trace.firing_sums - 1.0)) < 1e-12


if __name__ == '__main__':
    pytest.main([__file__])
