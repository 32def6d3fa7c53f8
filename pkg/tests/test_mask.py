from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from nvarray.analysis import fit_poisson
from nvarray.mask import (ApertureMask, classify_entries, classify_entry, expected_ions_per_aperture,
                          sample_aperture_counts, sample_entry_points, sample_masked_entries)


def test_mask_validation():
    with pytest.raises(ValueError):
        ApertureMask(aperture_diameter=2000, pitch=2000)
    with pytest.raises(ValueError):
        ApertureMask(resist_thickness=0)
    with pytest.raises(ValueError):
        ApertureMask(rows=0)


def test_classify_examples():
    m = ApertureMask()
    assert classify_entry(m, (4000.0, 2000.0)) == ("open", (1, 2))
    assert classify_entry(m, (1000.0, 1000.0)) == ("masked", None)
    assert classify_entry(m, (39.9, 0.0))[0] == "open"
    assert classify_entry(m, (40.0, 0.0))[0] == "masked"
    # outside the grid
    assert classify_entry(m, (-2000.0, 0.0)) == ("masked", None)
    with pytest.raises(ValueError):
        classify_entry(m, (math.nan, 0.0))


def test_open_fraction_monte_carlo():
    m = ApertureMask(rows=1, cols=1)
    g = np.random.default_rng(5)
    n = 2_000_000
    x = g.uniform(-1000, 1000, n)
    y = g.uniform(-1000, 1000, n)
    frac = classify_entries(m, x, y)[0].mean()
    p = math.pi * 40 ** 2 / 2000 ** 2
    assert p == pytest.approx(1.2566e-3, rel=1e-4)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_expected_ions():
    assert expected_ions_per_aperture(ApertureMask(), 1e12) == pytest.approx(math.pi * (40e-7) ** 2 * 1e12)
    assert round(expected_ions_per_aperture(ApertureMask(), 1e12), 2) == 50.27
    assert round(expected_ions_per_aperture(ApertureMask(aperture_diameter=160), 1e12), 2) == 201.06
    assert expected_ions_per_aperture(ApertureMask(), 0.0) == 0.0
    with pytest.raises(ValueError):
        expected_ions_per_aperture(ApertureMask(), -1.0)


def test_entry_points_geometry_and_determinism():
    m = ApertureMask()
    e = sample_entry_points(m, 1e12, 3)
    cx, cy = m.center(e.row, e.col)
    assert np.all(np.hypot(e.x - cx, e.y - cy) < m.radius)
    e2 = sample_entry_points(m, 1e12, 3)
    assert np.array_equal(e.x, e2.x) and np.array_equal(e.row, e2.row)
    assert len(sample_entry_points(m, 0.0, 3)) == 0
    # aperture streams do not depend on the grid size
    big = sample_entry_points(ApertureMask(rows=7, cols=7), 1e12, 3)
    small = sample_entry_points(ApertureMask(rows=1, cols=7), 1e12, 3)
    first = big.row == 0
    assert np.array_equal(big.x[first], small.x)


def test_counts_poisson():
    m = ApertureMask(rows=100, cols=100)
    counts = sample_aperture_counts(m, 1e12, 11)
    lam = expected_ions_per_aperture(m, 1e12)
    assert abs(counts.mean() - lam) < 3 * math.sqrt(lam / counts.size)
    assert fit_poisson(counts, mean=lam).p_value > 0.01
    # the entry sampler uses the same per-aperture streams
    e = sample_entry_points(ApertureMask(rows=2, cols=100), 1e12, 11)
    assert np.array_equal(np.bincount(e.row * 100 + e.col, minlength=200), counts[:200])


def test_masked_entries():
    m = ApertureMask()
    x, y = sample_masked_entries(m, 5000, 2)
    assert len(x) == 5000
    assert not classify_entries(m, x, y)[0].any()
    xmin, xmax, ymin, ymax = m.extent
    assert x.min() >= xmin and x.max() <= xmax and y.min() >= ymin and y.max() <= ymax
    # uniform over the extent
    assert stats.kstest((x - xmin) / (xmax - xmin), "uniform").pvalue > 1e-3
