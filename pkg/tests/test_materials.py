from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import constants

from nvarray.materials import (C12, N14, Element, LayerStack, Material, builtin_material, electronic_stopping,
                               electronic_stopping_power, element, lss_coefficient, zbl_screening,
                               zbl_screening_length)


def test_element_validation():
    with pytest.raises(ValueError):
        Element("X", 0, 1.0)
    with pytest.raises(ValueError):
        Element("X", 1, 0.0)
    assert N14.atomic_number == 7 and C12.atomic_number == 6


def test_diamond_number_density(diamond):
    # 3.51 g/cm^3 / 12.011 u
    expected = 3.51 / 12.011 * constants.Avogadro
    assert diamond.number_density == pytest.approx(expected, rel=1e-12)
    assert diamond.number_density == pytest.approx(1.76e23, rel=2e-3)


def test_pmma_mean_mass(pmma):
    assert pmma.mean_atomic_mass == pytest.approx((5 * 12.011 + 8 * 1.008 + 2 * 15.999) / 15, rel=1e-12)
    fr = dict((el.symbol, f) for el, f in pmma.components)
    assert fr == pytest.approx({"C": 5 / 15, "H": 8 / 15, "O": 2 / 15})
    assert pmma.mass_density == 1.19


def test_unknown_material():
    with pytest.raises(ValueError, match="unknown material"):
        builtin_material("silicon")
    with pytest.raises(ValueError):
        element("Xx")


def test_material_invariants():
    c = element("C")
    with pytest.raises(ValueError):
        Material("bad", ((c, 0.5),), 1.0, 10.0)
    with pytest.raises(ValueError):
        Material("bad", ((c, 1.0),), 0.0, 10.0)
    with pytest.raises(ValueError):
        Material("bad", ((c, 1.0),), 1.0, 0.0)
    Material("ok", ((c, 0.5), (element("H"), 0.5 + 5e-10)), 1.0, 10.0)


def test_layer_stack(diamond, pmma):
    st = LayerStack(((pmma, 200.0), (pmma, 50.0)), diamond)
    assert list(st.boundaries) == [0.0, 200.0, 250.0]
    assert st.material_at(10.0) is pmma
    assert st.material_at(260.0) is diamond
    assert st.substrate_depth == 250.0
    with pytest.raises(ValueError):
        LayerStack(((pmma, 0.0),), diamond)


def lss_oracle(z1, m1, z2, energy_kev):
    """Lindhard-Scharff from first principles: xi_e 8 pi e^2 a0 Z1 Z2 / Z * v / v0."""
    e2 = constants.e ** 2 / (4 * math.pi * constants.epsilon_0)  # J m
    a0 = constants.physical_constants["Bohr radius"][0]
    zeff = (z1 ** (2 / 3) + z2 ** (2 / 3)) ** 1.5
    v = math.sqrt(2 * energy_kev * 1e3 * constants.e / (m1 * constants.atomic_mass))
    v0 = constants.c * constants.fine_structure
    s = z1 ** (1 / 6) * 8 * math.pi * e2 * a0 * z1 * z2 / zeff * v / v0  # J m^2
    return s / constants.e * 1e4 * 1e15  # eV cm^2 / 1e15 atoms


def test_stopping_against_first_principles(diamond):
    got = electronic_stopping(diamond, N14, 20.0)
    # the 1.212 prefactor is a rounded constant, so agreement is at the 0.5 % level
    assert got == pytest.approx(lss_oracle(7, N14.atomic_mass, 6, 20.0), rel=5e-3)


def test_stopping_golden(diamond):
    assert electronic_stopping(diamond, N14, 20.0) == pytest.approx(14.486905855950775, rel=1e-12)


def test_stopping_scaling(diamond):
    e = np.linspace(0.5, 100.0, 60)
    s = [electronic_stopping(diamond, N14, x) for x in e]
    assert np.all(np.diff(s) > 0)
    assert electronic_stopping(diamond, N14, 40.0) == pytest.approx(2 * electronic_stopping(diamond, N14, 10.0))
    with pytest.raises(ValueError):
        electronic_stopping(diamond, N14, 0.0)


def test_bragg_additivity(pmma):
    total = sum(f * lss_coefficient(N14, el) for el, f in pmma.components) * math.sqrt(20.0)
    assert electronic_stopping(pmma, N14, 20.0) == pytest.approx(total, rel=1e-14)
    # linear stopping power uses the number density
    assert electronic_stopping_power(pmma, N14, 20.0) == pytest.approx(
        total * 1e-15 * pmma.number_density * 1e-7)


def test_zbl_screening():
    assert zbl_screening(0.0) == pytest.approx(1.0, abs=1e-12)
    # direct sum of the four exponentials at x = 1
    phi1 = (0.18175 * math.exp(-3.1998) + 0.50986 * math.exp(-0.94229)
            + 0.28022 * math.exp(-0.4029) + 0.02817 * math.exp(-0.20162))
    assert zbl_screening(1.0) == pytest.approx(phi1, rel=1e-14)
    x = np.linspace(0, 30, 301)
    assert np.all(np.diff(zbl_screening(x)) < 0)
    with pytest.raises(ValueError):
        zbl_screening(-0.1)


def test_screening_length():
    a = zbl_screening_length(7, 6)
    assert a == pytest.approx(0.88534 * 0.0529177210903 / (7 ** 0.23 + 6 ** 0.23))
    assert 0.01 < a < 0.02
