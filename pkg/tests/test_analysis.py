from __future__ import annotations

import math

import numpy as np
import pytest

from nvarray.analysis import (FitFailure, G2Curve, _dip_shape, background_correct, estimate_count, fit_poisson,
                              is_single_emitter, single_emitter_intensity, yield_from_statistics)
from nvarray.photonics import CorrelationHistogram


def histogram(values_raw, norm=100.0, rho=1.0, width=1.0, nb=200):
    edges = (np.arange(-nb, nb + 2) - 0.5) * width
    counts = np.rint(np.asarray(values_raw, dtype=float) * norm).astype(np.int64)
    return CorrelationHistogram(edges, counts, norm, rho)


def curve_with(g0, err):
    c = G2Curve(np.zeros(3), np.zeros(3), np.zeros(3), 1.0, np.zeros(3))
    c.g2_zero, c.g2_zero_error = g0, err
    return c


def synthetic(n, rho, norm, seed, rate=0.05 + 1 / 12, nb=200):
    """Poisson coincidences for N identical emitters with signal fraction rho."""
    tau = np.arange(-nb, nb + 1, dtype=float)
    g2 = 1 - _dip_shape(tau, 1 / rate, 1.0) / n
    lam = norm * (1 - rho ** 2 + rho ** 2 * g2)
    counts = np.random.default_rng(seed).poisson(lam)
    edges = (np.arange(-nb, nb + 2) - 0.5)
    return CorrelationHistogram(edges, counts, norm, rho)


def test_identity_at_rho_one():
    h = histogram(np.linspace(0.2, 1.2, 401))
    c = background_correct(h, rho=1.0, fit=False)
    assert np.array_equal(c.values, c.raw) and np.array_equal(c.raw, h.counts / 100.0)


def test_correction_examples():
    h = histogram(np.full(401, 0.36), norm=1e4)
    assert background_correct(h, rho=0.8, fit=False).values == pytest.approx(np.zeros(401), abs=1e-12)
    h = histogram(np.ones(401))
    assert background_correct(h, rho=0.8, fit=False).values == pytest.approx(np.ones(401))


def test_correction_errors():
    h = histogram(np.ones(401))
    with pytest.raises(ValueError):
        background_correct(h, rho=0.0)
    with pytest.raises(ValueError):
        background_correct(h, rho=1.2)
    with pytest.raises(ValueError):
        background_correct(histogram(np.zeros(401)), rho=0.5)


@pytest.mark.parametrize("rho", [0.5, 0.8, 1.0])
@pytest.mark.parametrize("n", [1, 2, 5])
def test_round_trip(rho, n):
    c = background_correct(synthetic(n, rho, 400.0, seed=int(100 * rho) + n))
    assert abs(c.g2_zero - (1 - 1 / n)) < 3 * c.g2_zero_error
    # noise may dip below zero only within a few errors
    assert np.all(c.values >= -3 * c.errors)


def test_fit_error_is_calibrated():
    pulls = []
    for seed in range(40):
        c = background_correct(synthetic(2, 0.8, 200.0, seed))
        pulls.append((c.g2_zero - 0.5) / c.g2_zero_error)
    assert 0.6 < np.std(pulls) < 1.5 and abs(np.mean(pulls)) < 0.6


def test_fit_failure():
    with pytest.raises(FitFailure):
        background_correct(CorrelationHistogram(np.array([-0.5, 0.5]), np.array([5]), 5.0, 1.0))


def test_estimate_examples():
    e = estimate_count(curve_with(0.0, 0.02), 1e5, 1e5)
    assert (e.n_hat, e.n_g2, e.confidence) == (1, 1, "agree")
    e = estimate_count(curve_with(0.5, 0.02), 2e5, 1e5)
    assert (e.n_hat, e.n_g2) == (2, 2)


def test_estimate_rules():
    e = estimate_count(curve_with(0.8, 0.02), 2e5, 1e5)  # N_g 5 vs N_I 2
    assert e.n_hat == 2 and "discrepant" in e.flags
    e = estimate_count(curve_with(0.8, 0.3), 2e5, 1e5)
    assert e.n_hat == 2 and e.confidence == "g2-imprecise"
    e = estimate_count(curve_with(1.3, 0.05), 3e5, 1e5)
    assert e.n_hat == 3 and "unphysical-g2" in e.flags and e.method == "intensity"
    e = estimate_count(None, 3.1e5, 1e5, background_intensity=0.2e5)
    assert e.n_hat == 3 and "no-g2" in e.flags
    e = estimate_count(None, 0.2e5, 1e5)
    assert e.n_hat == 0 and "below-threshold" in e.flags
    with pytest.raises(ValueError):
        estimate_count(None, 1.0, 0.0)


def test_estimate_scale_invariance():
    g = np.random.default_rng(0)
    for _ in range(50):
        s, single, bg = g.uniform(0, 6e5), g.uniform(5e4, 2e5), g.uniform(0, 5e4)
        k = g.uniform(1e-3, 1e3)
        assert estimate_count(None, s, single, bg).n_intensity == estimate_count(None, k * s, k * single,
                                                                               k * bg).n_intensity


def test_single_emitter_classifier():
    assert is_single_emitter(curve_with(0.1, 0.1))
    assert not is_single_emitter(curve_with(0.4, 0.1))
    assert is_single_emitter(curve_with(0.4, 0.1), n_sigma=0)


def test_single_emitter_intensity_mode():
    g = np.random.default_rng(1)
    ints = list(g.normal(1e5, 3e3, 40)) + list(g.normal(2e5, 5e3, 40))
    curves = [curve_with(0.05, 0.05)] * 40 + [curve_with(0.5, 0.05)] * 40
    assert single_emitter_intensity(ints, curves) == pytest.approx(1e5, rel=0.05)
    with pytest.raises(ValueError):
        single_emitter_intensity([1.0], [None])


def test_poisson_known_sample():
    counts = np.random.default_rng(2).poisson(3.5, 10_000)
    f = fit_poisson(counts)
    assert f.mle_mean == counts.mean()
    assert abs(f.mle_mean - 3.5) < 3 * math.sqrt(3.5 / 1e4)
    assert f.p_value > 0.01 and 0 <= f.p_value <= 1
    assert sum(o for _, o, _ in f.bins) == 10_000
    assert min(e for _, _, e in f.bins) >= 5


def test_poisson_acceptance_rate():
    g = np.random.default_rng(3)
    passed = sum(fit_poisson(g.poisson(3.5, 1000)).p_value > 0.01 for _ in range(100))
    assert passed >= 95


def test_poisson_rejects_uniform():
    assert fit_poisson(np.random.default_rng(4).integers(0, 8, 10_000)).p_value < 0.01


def test_poisson_degenerate():
    f = fit_poisson(np.zeros(49, dtype=int))
    assert f.mle_mean == 0 and f.degenerate and f.p_value == 1.0
    with pytest.raises(ValueError):
        fit_poisson([])
    with pytest.raises(ValueError):
        fit_poisson([1, -1])


def test_poisson_dof():
    counts = np.random.default_rng(5).poisson(3.5, 2000)
    free, fixed = fit_poisson(counts), fit_poisson(counts, mean=3.5)
    assert free.dof == len(free.bins) - 2 and fixed.dof == len(fixed.bins) - 1


def test_yield_examples():
    assert round(yield_from_statistics(3.52, 50.27), 3) == 0.070
    assert yield_from_statistics(0.0, 12.0) == 0.0
    assert round(yield_from_statistics(7.04, 50.27), 3) == 0.140
    with pytest.raises(ValueError):
        yield_from_statistics(1.0, 0.0)
