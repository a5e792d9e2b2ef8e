import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from donorpair.analysis import (
    _hypoexp_cdf,
    binomial_sigma,
    calibrate_gamma_out,
    completion_probability,
    inject_detection,
    initial_state,
    predicted_parallel_proportion,
    readout,
    run_experiment,
    spectrum_scan,
    stage,
    subgroup_stats,
    spin_up_proportion,
)
from donorpair.config import ExperimentConfig
from donorpair.errors import ConfigError, ContractViolation, InvalidParameterError
from donorpair.spin_model import NuclearConfig
from donorpair.tunneling import TunnelingParams

DD, DU = NuclearConfig.DOWN_DOWN, NuclearConfig.DOWN_UP


def small_cfg(n=1000, nuclear=DD, **experiment):
    cfg = dataclasses.replace(ExperimentConfig(), nuclear=nuclear)
    return cfg.with_section("experiment", repetitions=n, subgroup_size=100, **experiment)


# ------------------------------------------------------------------ statistics


def test_constant_counts():
    s = subgroup_stats([2] * 1000, 100)
    assert s.mean == 2 and s.sigma == 0
    assert len(s.subgroup_means) == 10
    assert s.count_histogram == {2: 1000}


def test_ten_thousand_counts_in_hundred_groups():
    s = subgroup_stats(np.zeros(10_000, dtype=int), 100)
    assert len(s.subgroup_means) == 100 and s.n_traces == 10_000


@given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.integers(1, 10))
def test_stats_identities(chunk, group):
    counts = (chunk * group)[: len(chunk) * group]
    s = subgroup_stats(counts, group)
    assert s.mean == pytest.approx(np.mean(s.subgroup_means), abs=1e-12)
    assert sum(s.count_histogram.values()) == len(counts)
    assert s.sigma >= 0


def test_subgroup_sigma_matches_population_oracle():
    rng = np.random.default_rng(4)
    counts = rng.poisson(1.3, 10_000)
    s = subgroup_stats(counts, 100)
    assert s.sigma == pytest.approx(counts.std() / 10, rel=0.2)


def test_indivisible_counts_rejected():
    with pytest.raises(ConfigError):
        subgroup_stats([1] * 101, 10)
    with pytest.raises(ConfigError):
        subgroup_stats([], 10)


def test_spin_up_proportion_edges():
    assert spin_up_proportion([0, 0, 0]) == 0
    assert spin_up_proportion([1, 2, 5]) == 1
    assert spin_up_proportion([0, 1, 2, 0]) == 0.5
    with pytest.raises(ContractViolation):
        spin_up_proportion([])


def test_predicted_parallel_proportion():
    assert predicted_parallel_proportion(0.60) == pytest.approx(0.84, abs=1e-12)
    assert predicted_parallel_proportion(0.0) == 0.0
    assert predicted_parallel_proportion(1.0) == 1.0
    for bad in (-0.1, 1.1, math.nan):
        with pytest.raises(InvalidParameterError):
            predicted_parallel_proportion(bad)


@given(st.floats(0, 1))
def test_enhancement_never_lowers_proportion(p):
    assert predicted_parallel_proportion(p) >= p - 1e-15


# ------------------------------------------------------------------ pipeline


def test_stage_tag_added_once():
    with pytest.raises(ContractViolation) as info:
        with stage("outer"):
            with stage("inner"):
                raise ContractViolation("boom")
    assert info.value.stage == "inner"
    assert str(info.value).startswith("[inner]")


def test_unknown_recipe_is_tagged_config_error():
    cfg = small_cfg(nuclear=DU).with_section("initial", state="TX")
    with pytest.raises(ConfigError) as info:
        run_experiment(cfg)
    assert info.value.stage == "prepare"


def test_ideal_detection_counts():
    cfg = small_cfg(detection="ideal").with_section("tunneling", electron_temperature=0.0, read_duration=20e-3)
    res = run_experiment(cfg.with_section("initial", state="Tplus"))
    assert res.stats.count_histogram == {2: 1000}
    res = run_experiment(cfg.with_section("initial", state="Tminus"))
    assert res.stats.count_histogram == {0: 1000}


def test_anti_parallel_up_preparation_flips_electron_one_only():
    cfg = small_cfg(nuclear=DU)
    up = initial_state("up", cfg.donor, DU)
    assert up.probability("↑↓") >= 0.99


@pytest.mark.parametrize("p", [0.5, 0.7, 0.9])
def test_mc_matches_contrast_formula(p):
    n = 10_000
    cfg = inject_detection(small_cfg(n), p)
    res = readout(initial_state("Tplus", cfg.donor, DD), cfg)
    expected = predicted_parallel_proportion(p)
    assert abs(res.stats.spin_up_proportion - expected) <= 3 * binomial_sigma(expected, n)


@pytest.mark.parametrize("p", [0.3, 0.6])
def test_anti_parallel_proportion_is_p_and_parallel_is_higher(p):
    n = 4000
    cfg = inject_detection(small_cfg(n), p)
    par = readout(initial_state("Tplus", cfg.donor, DD), cfg).stats.spin_up_proportion
    anti_cfg = dataclasses.replace(cfg, nuclear=DU)
    anti = readout(initial_state("up", cfg.donor, DU), anti_cfg).stats.spin_up_proportion
    assert abs(anti - p) <= 3 * binomial_sigma(p, n)
    assert par > anti


def test_injection_modes():
    cfg = small_cfg()
    dur = inject_detection(cfg, 0.6)
    assert dur.trace.noise_sigma == 0 and dur.tunneling.electron_temperature == 0
    assert dur.tunneling.gamma_in > cfg.tunneling.gamma_in
    bw = inject_detection(cfg, 0.6, via="bandwidth")
    assert bw.trace.filter_time_constant > cfg.trace.filter_time_constant
    with pytest.raises(ConfigError):
        inject_detection(cfg, 0.6, via="magic")


def test_spectrum_far_detuned_floor_and_peak():
    cfg = inject_detection(small_cfg(1000), 0.6).with_section(
        "spectrum", offsets="-40e6,0,40e6", span=4e6, sweep_duration=60e-6)
    points = spectrum_scan(cfg)
    assert [round(pt.offset) for pt in points] == [-40_000_000, 0, 40_000_000]
    assert points[0].proportion == 0 and points[2].proportion == 0
    assert abs(points[1].proportion - 0.84) <= 3 * binomial_sigma(0.84, 1000)


def test_spectrum_rejects_non_finite():
    with pytest.raises(ContractViolation):
        spectrum_scan(small_cfg(100).with_section("experiment", subgroup_size=10), [math.inf])


# ------------------------------------------------------------------ calibration pieces


def test_hypoexponential_cdf():
    assert _hypoexp_cdf([2.0], 1.0) == pytest.approx(1 - math.exp(-2))
    a, b, t = 3.0, 5.0, 0.4
    expected = 1 - (b * math.exp(-a * t) - a * math.exp(-b * t)) / (b - a)
    assert _hypoexp_cdf([a, b], t) == pytest.approx(expected)


def test_gamma_out_calibration_meets_completion():
    cfg = small_cfg()
    tp = cfg.tunneling
    g = calibrate_gamma_out(tp, cfg.donor, DD, 0.99)
    assert completion_probability(g, tp, cfg.donor, DD) == pytest.approx(0.99, abs=1e-6)
    assert completion_probability(0.9 * g, tp, cfg.donor, DD) < 0.99
    with pytest.raises(ContractViolation):
        calibrate_gamma_out(TunnelingParams(read_duration=1e-6), cfg.donor, DD, 0.99)
