import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pixel_stats, streak_hits
from pnfc import rng as rngmod
from pnfc.photonstats import (CoherenceParams, decompose_correlations, lag1_fluctuation_correlation,
                              lag1_product, mu_product_scan, verify_vanishing)
from pnfc.rainsim import RainParams, SimConfig, streak_intensity, streak_length, synth_stack


def test_lag1_product_examples():
    assert lag1_product([3.0] * 7) == 9.0
    assert lag1_product([1, 0, 1, 0]) == 0.0
    assert lag1_product([1, 2, 3]) == 4.0
    with pytest.raises(ValueError):
        lag1_product([1.0])


def test_lag1_fluctuation_examples():
    assert lag1_fluctuation_correlation([5.0] * 10) == 0.0
    a, n = 3.0, 41
    x = [a * (-1) ** k for k in range(n)]
    assert lag1_fluctuation_correlation(x) == pytest.approx(pixel_stats(x)[2], rel=1e-12)
    assert lag1_fluctuation_correlation(x) == pytest.approx(-a * a, rel=0.05)
    with pytest.raises(ValueError):
        lag1_fluctuation_correlation([1.0, 2.0])


def test_iid_fluctuation_vanishes():
    x = rngmod.substream(0).standard_normal(10_000)
    assert abs(lag1_fluctuation_correlation(x)) <= 3 * x.var() / math.sqrt(x.size)


def test_stable_plus_noise_keeps_constant_squared():
    c = 50.0
    noise = rngmod.substream(1).standard_normal(10_000)
    x = c + noise
    # var(x_k x_{k+1}) ~ 2 c^2 sigma^2 for the product of two noisy samples
    se = math.sqrt(2 * c * c / x.size)
    assert abs(lag1_product(x) - c * c) <= 3 * se


dyadic = st.integers(-2**20, 2**20).map(lambda i: i / 1024)


@given(st.lists(dyadic, min_size=2, max_size=40), st.integers(-8, 8))
def test_lag1_scale_equivariance(xs, e):
    alpha = 2.0 ** e
    assert lag1_product([alpha * v for v in xs]) == alpha * alpha * lag1_product(xs)


def test_decompose_no_rain(scene32, dry_config):
    stack, trace = synth_stack(scene32, dry_config, 12, 20.0, seed=0)
    rep = decompose_correlations(trace, stack, (5, 7))
    s = trace.S[0, 5, 7]
    assert rep.ff.value == 0 and rep.dd.value == 0
    assert all(e.value == 0 for e in rep.cross_terms.values())
    assert rep.ss.value == s * s


def test_decompose_components_sum(scene32, config):
    stack, trace = synth_stack(scene32, config, 30, 20.0, seed=3)
    for pixel in [(0, 0), (10, 20), (31, 31)]:
        rep = decompose_correlations(trace, stack, pixel)
        assert rep.component_sum() == pytest.approx(rep.g_total, rel=1e-9)
        assert set(rep.cross_terms) == {"sf", "sd", "fd"}


def test_decompose_rejects_misaligned(scene32, config):
    stack, trace = synth_stack(scene32, config, 5, 20.0, seed=0)
    short, _ = synth_stack(scene32, config, 4, 20.0, seed=0)
    with pytest.raises(ValueError):
        decompose_correlations(trace, short, (0, 0))


def test_streak_product_matches_hit_rate(scene32):
    config = SimConfig(rain=replace(RainParams(), drops_per_frame=30.0))
    T, n, pixel = 20.0, 2000, (16, 12)
    stack, trace = synth_stack(scene32, config, n, T, seed=5)
    level = streak_intensity(config.rain, T) * T
    hits = []
    for frame in trace.drops:
        lengths = [streak_length(config.optics, config.rain, d.depth, T) for d in frame]
        hits.append(streak_hits(frame, lengths, pixel))
    rate = level * math.fsum(hits) / n
    rep = decompose_correlations(trace, stack, pixel)
    assert rep.dd.stderr > 0
    assert rep.dd.within(rate * rate)


def test_vanishing_no_rain_passes(scene32, dry_config):
    stack, trace = synth_stack(scene32, dry_config, 30, 20.0, 33.0, seed=0)
    verdict = verify_vanishing(trace, stack)
    assert verdict.pixel_pass_rate == 1.0 and verdict.block_pass_rate == 1.0
    assert verdict.passed


def test_vanishing_default_rainy_stack(scene32, config):
    config = replace(config, jitter_reference_ms=20.0)
    stack, trace = synth_stack(scene32, config, 30, 20.0, 33.0, seed=0)
    verdict = verify_vanishing(trace, stack)
    assert verdict.block_pass_rate >= 0.99
    rows = verdict.rows()
    assert len(rows) == 16 + 1 and rows[-1]["scope"] == "aggregate"


def test_correlated_fog_fails_on_fog_term(scene32):
    # a 3-sigma lag-1 test has little power at N = 30; 300 frames make the failure decisive
    config = SimConfig(coherence_time_ms=330.0)
    stack, trace = synth_stack(scene32, config, 300, 20.0, 33.0, seed=0)
    coherence = CoherenceParams(330.0, 33.0)
    assert coherence.correlated
    verdict = verify_vanishing(trace, stack, coherence)
    assert verdict.correlated_regime
    assert not verdict.passed
    assert verdict.pixels.ff_pass.mean() < 0.05


def test_mu_scan_single_row(config):
    rows, slope = mu_product_scan([20.0], config, n_samples=500)
    assert len(rows) == 1 and slope is None


def test_mu_scan_slope(config):
    rows, slope = mu_product_scan([10.0, 20.0, 40.0, 80.0], config, n_samples=10_000)
    assert all(0 < r["mu_fluct_product"] < 1 for r in rows)
    assert abs(slope + 1.0) <= 0.2


def test_mu_scan_rejects_bad_T(config):
    with pytest.raises(ValueError):
        mu_product_scan([], config)
    with pytest.raises(ValueError):
        mu_product_scan([20.0, -1.0], config)
