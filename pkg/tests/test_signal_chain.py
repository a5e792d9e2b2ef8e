import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from donorpair.errors import ContractViolation, DegenerateDataError, InsufficientDataError, NotMeasurableError
from donorpair.signal_chain import (
    LN9,
    RISE_TIME,
    TraceParams,
    blip_durations_batch,
    bandwidth_from_rise_time,
    count_blips,
    count_blips_batch,
    detect_blips,
    exponential_detection_probability,
    filter_for_detection,
    filtered_levels,
    fit_tunnel_in_time,
    fit_tunnel_in_time_mle,
    rise_time,
    single_blip_detection,
    synthesize_samples,
    synthesize_trace,
    threshold_duration,
    tunnel_in_rate_for_detection,
)
from donorpair.tunneling import IONIZE, NEUTRALIZE, ChargeSpinConfig, Event, EventTimeline, trajectory_rngs

OCC, ION = ChargeSpinConfig(True, "T+"), ChargeSpinConfig(False, "↑")
QUIET = TraceParams(noise_sigma=0.0)


def timeline(intervals, read_duration=1e-3, seed=0):
    events = []
    for a, b in intervals:
        events.append(Event(a, IONIZE, OCC, ION))
        events.append(Event(b, NEUTRALIZE, ION, OCC))
    return EventTimeline(events, seed, OCC, OCC, read_duration)


def trace_of(intervals, tp=QUIET, read_duration=1e-3, seed=0):
    return synthesize_trace(timeline(intervals, read_duration, seed), tp, np.random.default_rng(seed))


def test_constants():
    assert QUIET.rise_time == pytest.approx(RISE_TIME)
    assert QUIET.filter_time_constant == pytest.approx(RISE_TIME / LN9)
    assert bandwidth_from_rise_time(RISE_TIME) == pytest.approx(52.2e3, rel=1e-3)


def test_empty_timeline_is_flat():
    tr = trace_of([])
    assert tr.samples.size == 1000
    assert np.all(tr.samples == QUIET.i_off)
    assert count_blips(tr) == 0


def test_filter_matches_analytic_step_response():
    tp = QUIET.replace(sample_rate=10e6)
    t_on, t_off = 100.37e-6, 180.91e-6
    y = trace_of([(t_on, t_off)], tp, read_duration=400e-6).samples
    t = np.arange(y.size) / tp.sample_rate
    tau = tp.filter_time_constant
    rise = np.where(t >= t_on, -np.expm1(-(t - t_on) / tau), 0.0)
    peak = -math.expm1(-(t_off - t_on) / tau)
    ref = np.where(t >= t_off, peak * np.exp(-(t - t_off) / tau), rise)
    assert np.max(np.abs(y - ref)) < 1e-12


def test_rise_time_of_saturated_blip():
    tp = QUIET.replace(sample_rate=20e6)
    tr = trace_of([(100.013e-6, 300e-6)], tp, read_duration=500e-6)
    (blip,) = detect_blips(tr)
    rt = rise_time(tr, blip)
    assert rt == pytest.approx(LN9 * tp.filter_time_constant, rel=0.02)
    assert rt == pytest.approx(6.7e-6, rel=0.02)


def test_rise_time_unfiltered_within_one_sample():
    tp = QUIET.replace(filter_time_constant=0.0)
    tr = trace_of([(100.3e-6, 200e-6)], tp)
    (blip,) = detect_blips(tr)
    assert rise_time(tr, blip) <= 1.0 / tp.sample_rate


def test_short_blip_rise_time_not_measurable():
    tr = trace_of([(100e-6, 110e-6)])
    (blip,) = detect_blips(tr)
    with pytest.raises(NotMeasurableError):
        rise_time(tr, blip)


def test_typical_blip_detected_with_duration():
    tr = trace_of([(200e-6, 232.8e-6)])
    blips = detect_blips(tr)
    assert len(blips) == 1
    assert blips[0].duration == pytest.approx(32.8e-6, rel=0.2)


def test_short_blip_below_threshold_missed():
    tp = QUIET.replace(filter_time_constant=3.05e-6)
    assert count_blips(trace_of([(200e-6, 202e-6)], tp)) == 0


def _random_timelines(tp, n, seed):
    rng = np.random.default_rng(seed)
    gap = 5 * tp.filter_time_constant + 2e-6
    timelines, expected = [], []
    for i in range(n):
        k = int(rng.integers(0, 6))
        # intervals and gaps both longer than 5 filter time constants, all inside the window
        edges = np.cumsum(gap + rng.exponential(30e-6, 2 * k + 1))
        while edges[-1] > 0.95e-3:
            edges = np.cumsum(gap + rng.exponential(30e-6, 2 * k + 1))
        timelines.append(timeline([(edges[2 * j], edges[2 * j + 1]) for j in range(k)], seed=seed + i))
        expected.append(k)
    return timelines, np.array(expected)


@pytest.mark.parametrize("sigma", [0.0, 0.03])
def test_round_trip_count_random_timelines(sigma):
    tp = TraceParams(noise_sigma=sigma)
    tls, expected = _random_timelines(tp, 1000, 2024)
    assert np.array_equal(count_blips_batch(synthesize_samples(tls, tp), tp.level), expected)


def test_round_trip_at_five_percent_noise_only_overcounts():
    # without hysteresis, noise on a filtered edge occasionally re-crosses the threshold
    tp = TraceParams(noise_sigma=0.05)
    tls, expected = _random_timelines(tp, 1000, 2024)
    got = count_blips_batch(synthesize_samples(tls, tp), tp.level)
    assert np.all(got >= expected)
    assert np.mean(got != expected) < 0.02


def test_batch_helpers_match_single_trace():
    tp = TraceParams(noise_sigma=0.05)
    tls = [timeline([(1e-4, 1.5e-4), (4e-4, 4.4e-4)], seed=s) for s in range(5)]
    samples = synthesize_samples(tls, tp)
    for tl, row in zip(tls, samples):
        tr = synthesize_trace(tl, tp, trajectory_rngs(tl.seed)[1])
        assert np.allclose(tr.samples, row)
        assert count_blips(tr) == 2
    durs = blip_durations_batch(samples, tp.level, tp.sample_rate)
    assert durs.size == 10 and np.all(durs > 3e-5)


def test_detection_monotone_in_duration():
    tp = TraceParams(noise_sigma=0.1)
    d = np.linspace(0.5e-6, 12e-6, 24)
    p = single_blip_detection(d, tp, n_trials=400, seed=1)
    assert np.all(np.diff(p) >= 0)


@settings(max_examples=10)
@given(st.floats(0.5e-6, 3e-6), st.floats(1.0, 4.0))
def test_detection_monotone_in_filter(tau, factor):
    slow = QUIET.replace(filter_time_constant=tau * factor)
    fast = QUIET.replace(filter_time_constant=tau)
    assert exponential_detection_probability(slow, 1 / 32.8e-6, 64) <= exponential_detection_probability(
        fast, 1 / 32.8e-6, 64
    ) + 1e-12


def test_detection_crosses_half_near_threshold_duration():
    tp = QUIET
    d0 = threshold_duration(tp)
    assert d0 == pytest.approx(tp.filter_time_constant * math.log(2))
    dt = 1 / tp.sample_rate
    p = single_blip_detection([d0 - dt, d0 + 2 * dt], tp, n_trials=2000)
    assert p[0] < 0.5 < p[1]


def _mc_exponential_detection(tp, gamma_in, n, seed):
    rng = np.random.default_rng(seed)
    start = 50e-6 + rng.random(n) / tp.sample_rate
    length = rng.exponential(1 / gamma_in, n)
    nsamp = int((50e-6 + length.max() + 20 * tp.filter_time_constant) * tp.sample_rate) + 2
    y = filtered_levels(np.stack([start, start + length], 1), np.tile([1.0, -1.0], (n, 1)), nsamp, tp)
    return np.mean(np.any(y > tp.level, axis=1))


@pytest.mark.parametrize("p", [0.5, 0.7, 0.9])
def test_exponential_detection_analytic_vs_mc(p):
    gamma_in = tunnel_in_rate_for_detection(p, QUIET)
    n = 20_000
    mc = _mc_exponential_detection(QUIET, gamma_in, n, seed=int(p * 100))
    assert abs(mc - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_filter_for_detection_hits_target():
    gamma_in = 1 / 32.8e-6
    tp = filter_for_detection(0.6, QUIET, gamma_in)
    assert exponential_detection_probability(tp, gamma_in) == pytest.approx(0.6, abs=1e-6)
    assert tp.noise_sigma == 0.0
    with pytest.raises(ContractViolation):
        filter_for_detection(1.0, QUIET, gamma_in)


def test_false_positive_rate_of_noise_only_traces():
    tp = TraceParams(noise_sigma=0.1)
    rng = np.random.default_rng(77)
    n, hits = 20_000, 0
    for _ in range(n // 2000):
        noise = rng.normal(0.0, tp.noise_sigma, (2000, 1000))
        hits += int(np.count_nonzero(count_blips_batch(noise, tp.level)))
    assert hits / n < 1e-3


# ------------------------------------------------------------------ fitting


@pytest.fixture(scope="module")
def exp_durations():
    return np.random.default_rng(5).exponential(32.8e-6, 5000)


def test_fit_recovers_tunnel_time(exp_durations):
    fit = fit_tunnel_in_time(exp_durations, 5e-6)
    assert 31e-6 <= fit.tau <= 35e-6
    assert fit.sigma_tau > 0 and fit.n_used < exp_durations.size
    tau, sig = fit_tunnel_in_time_mle(exp_durations, 19.14e-6)
    assert abs(tau - 32.8e-6) < 3 * sig


def test_fit_invariant_to_cut(exp_durations):
    a = fit_tunnel_in_time(exp_durations, 5e-6, min_duration_cut=20e-6)
    b = fit_tunnel_in_time(exp_durations, 5e-6, min_duration_cut=40e-6)
    assert abs(a.tau - b.tau) <= 2 * math.hypot(a.sigma_tau, b.sigma_tau)


def test_fit_stable_under_bin_doubling(exp_durations):
    a = fit_tunnel_in_time(exp_durations, 5e-6, min_duration_cut=20e-6)
    b = fit_tunnel_in_time(exp_durations, 10e-6, min_duration_cut=20e-6)
    assert abs(a.tau - b.tau) <= 2 * max(a.sigma_tau, b.sigma_tau)


def test_fit_rejects_bad_data():
    with pytest.raises(InsufficientDataError):
        fit_tunnel_in_time(np.random.default_rng(0).exponential(32.8e-6, 10), 5e-6)
    with pytest.raises(DegenerateDataError):
        fit_tunnel_in_time(np.full(200, 40e-6), 5e-6)
    with pytest.raises(ContractViolation):
        fit_tunnel_in_time(np.ones(200), 0.0)


def test_trace_params_validation():
    with pytest.raises(ContractViolation):
        TraceParams(threshold=1.5)
    with pytest.raises(ContractViolation):
        TraceParams(i_on=0.0)
    assert QUIET.digest() != QUIET.replace(threshold=0.6).digest()
