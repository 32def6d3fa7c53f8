from __future__ import annotations

import numpy as np
import pytest

from nvarray.analysis import fit_poisson
from nvarray.formation import NV_MINUS, NV_ZERO, YieldModel, expected_mean_emitters, form_nv
from nvarray.mask import ApertureMask
from nvarray.transport import ImplantResult


def synthetic_implant(counts, cols, seed=0, extra_carbon=True):
    """ImplantResult with ``counts[k]`` nitrogen rests in aperture k (plus masked and carbon decoys)."""
    g = np.random.default_rng(seed)
    counts = np.asarray(counts)
    k = np.repeat(np.arange(len(counts)), counts)
    n = len(k)
    species = np.full(n, 7)
    row, col = np.divmod(k, cols)
    masked = np.zeros(n, bool)
    if extra_carbon:
        # carbon rests and nitrogen stopped in the resist must never convert
        m = len(counts)
        species = np.concatenate([species, np.full(m, 6), np.full(m, 7)])
        row = np.concatenate([row, np.arange(m) // cols, np.full(m, -1)])
        col = np.concatenate([col, np.arange(m) % cols, np.full(m, -1)])
        masked = np.concatenate([masked, np.zeros(m, bool), np.ones(m, bool)])
    size = len(species)
    zi = np.zeros(0, dtype=np.int64)
    return ImplantResult(species, row, col, g.normal(0, 10, size), g.normal(0, 10, size),
                         g.normal(30, 9, size), masked, zi, zi, np.zeros((0, 3)), np.zeros(0, np.int32), zi,
                         grid=(len(counts) // cols, cols))


def test_model_validation():
    with pytest.raises(ValueError):
        YieldModel(base_yield=1.5)
    with pytest.raises(ValueError):
        YieldModel(nv_minus_fraction=-0.1)
    with pytest.raises(ValueError):
        YieldModel(single_emitter_rate=0)


def test_yield_zero_and_one():
    counts = np.random.default_rng(1).poisson(50, 100)
    res = synthetic_implant(counts, 10)
    assert all(s.n_emitters == 0 for s in form_nv(res, YieldModel(base_yield=0.0), 5))
    full = form_nv(res, YieldModel(base_yield=1.0), 5)
    assert [s.n_emitters for s in full] == list(counts)
    assert [s.n_implanted for s in full] == list(counts)


def test_positions_are_parent_rests():
    counts = np.random.default_rng(2).poisson(20, 25)
    res = synthetic_implant(counts, 5)
    parents = {(r, c, x, y, z) for r, c, x, y, z, s, m in
               zip(res.row, res.col, res.x, res.y, res.z, res.species, res.masked) if s == 7 and not m}
    for spot in form_nv(res, YieldModel(base_yield=0.3), 3):
        for x, y, z in zip(spot.x, spot.y, spot.z):
            assert (spot.row, spot.col, x, y, z) in parents


@pytest.mark.parametrize("lam,p", [(50.27, 0.07), (20.0, 0.3), (100.0, 0.02)])
def test_poisson_thinning(lam, p):
    counts = np.random.default_rng(int(lam)).poisson(lam, 10_000)
    res = synthetic_implant(counts, 100, extra_carbon=False)
    emitters = np.array([s.n_emitters for s in form_nv(res, YieldModel(base_yield=p), 17)])
    assert abs(emitters.mean() - lam * p) < 3 * np.sqrt(lam * p / emitters.size)
    assert fit_poisson(emitters, mean=lam * p).p_value > 0.01


def test_charge_and_brightness():
    counts = np.full(400, 50)
    res = synthetic_implant(counts, 20, extra_carbon=False)
    spots = form_nv(res, YieldModel(base_yield=0.5, nv_minus_fraction=0.9, single_emitter_rate=1e5), 8)
    charges = [q for s in spots for q in s.charge]
    assert set(charges) <= {NV_MINUS, NV_ZERO}
    frac = charges.count(NV_MINUS) / len(charges)
    assert abs(frac - 0.9) < 3 * np.sqrt(0.09 / len(charges))
    b = np.concatenate([s.brightness for s in spots])
    # mean-preserving lognormal, sigma 0.1
    assert abs(b.mean() / 1e5 - 1) < 3 * 0.1 / np.sqrt(len(b))
    assert np.std(np.log(b)) == pytest.approx(0.1, rel=0.05)


def test_determinism_and_order():
    counts = np.random.default_rng(3).poisson(50, 49)
    res = synthetic_implant(counts, 7)
    a = form_nv(res, YieldModel(), 11)
    b = form_nv(res, YieldModel(), 11)
    assert [s.index for s in a] == [divmod(k, 7) for k in range(49)]
    assert all(np.array_equal(x.x, y.x) and np.array_equal(x.brightness, y.brightness) for x, y in zip(a, b))


def test_vacancy_boost_raises_yield():
    counts = np.full(100, 50)
    res = synthetic_implant(counts, 10, extra_carbon=False)
    # one vacancy cluster at every N rest
    sel = res.species == 7
    res.vac_row, res.vac_col = res.row[sel], res.col[sel]
    res.vac_xyz = np.column_stack([res.x[sel], res.y[sel], res.z[sel]])
    res.vac_count = np.full(int(sel.sum()), 2, dtype=np.int32)
    res.vac_species = np.full(int(sel.sum()), 7)
    base = sum(s.n_emitters for s in form_nv(res, YieldModel(base_yield=0.05), 2))
    boosted = sum(s.n_emitters for s in form_nv(res, YieldModel(base_yield=0.05, vacancy_boost=1.0), 2))
    assert boosted > 2 * base


def test_expected_mean_emitters():
    m = ApertureMask()
    assert round(expected_mean_emitters(1e12, m, YieldModel()), 2) == 3.52
    assert round(expected_mean_emitters(4e12, m, YieldModel()), 2) == 14.07
    assert expected_mean_emitters(1e12, m, YieldModel(base_yield=0.0)) == 0.0
