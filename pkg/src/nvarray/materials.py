"""Target materials, layered stacks and stopping quantities.

Units used throughout the package: lengths in nm, ion energies in keV at the
public interface (eV inside the transport kernel), densities in g/cm^3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

AVOGADRO = 6.02214076e23
BOHR_RADIUS_NM = 0.0529177210903
# e^2 / (4 pi eps0) in eV nm
COULOMB_EV_NM = 1.43996448

# 4-exponential universal screening function
ZBL_COEFFS = (0.18175, 0.50986, 0.28022, 0.02817)
ZBL_EXPONENTS = (3.19980, 0.94229, 0.40290, 0.20162)

# Lindhard-Scharff prefactor in eV A^2 for E in eV and M1 in amu
_LSS_PREFACTOR = 1.212
# eV A^2 -> eV cm^2 / 1e15 atoms
_A2_TO_SRIM_UNITS = 0.1


@dataclass(frozen=True)
class Element:
    symbol: str
    atomic_number: int
    atomic_mass: float

    def __post_init__(self):
        if self.atomic_number < 1:
            raise ValueError(f"atomic_number must be >= 1, got {self.atomic_number}")
        if not self.atomic_mass > 0:
            raise ValueError(f"atomic_mass must be positive, got {self.atomic_mass}")


# Natural-abundance masses for target constituents.
ELEMENTS = {
    "H": Element("H", 1, 1.008),
    "B": Element("B", 5, 10.81),
    "C": Element("C", 6, 12.011),
    "N": Element("N", 7, 14.007),
    "O": Element("O", 8, 15.999),
    "F": Element("F", 9, 18.998),
    "Si": Element("Si", 14, 28.085),
}

# Isotopic projectiles delivered by the CN- beam.
N14 = Element("N", 7, 14.003074)
C12 = Element("C", 6, 12.0)


def element(symbol: str) -> Element:
    try:
        return ELEMENTS[symbol]
    except KeyError:
        raise ValueError(f"unknown element {symbol!r}; known: {sorted(ELEMENTS)}") from None


@dataclass(frozen=True)
class Material:
    """A homogeneous amorphous target.

    ``components`` holds ``(Element, atomic_fraction)`` pairs; fractions must
    sum to one.
    """

    name: str
    components: tuple[tuple[Element, float], ...]
    mass_density: float
    displacement_energy: float
    binding_energy: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((el, float(f)) for el, f in self.components))
        if not self.components:
            raise ValueError("material needs at least one component")
        total = sum(f for _, f in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"{self.name}: fractions sum to {total!r}, expected 1")
        if any(f <= 0 for _, f in self.components):
            raise ValueError(f"{self.name}: fractions must be positive")
        if not self.mass_density > 0:
            raise ValueError(f"{self.name}: mass_density must be positive")
        if not self.displacement_energy > 0:
            raise ValueError(f"{self.name}: displacement_energy must be positive")
        if self.binding_energy < 0:
            raise ValueError(f"{self.name}: binding_energy must be non-negative")

    @property
    def mean_atomic_mass(self) -> float:
        return sum(el.atomic_mass * f for el, f in self.components)

    @property
    def number_density(self) -> float:
        """Atoms per cm^3."""
        return self.mass_density * AVOGADRO / self.mean_atomic_mass

    @property
    def atoms_per_nm3(self) -> float:
        return self.number_density * 1e-21

    @classmethod
    def from_stoichiometry(cls, name, counts: dict[str, float], mass_density,
                           displacement_energy, binding_energy=3.0) -> "Material":
        total = sum(counts.values())
        comps = tuple((element(sym), n / total) for sym, n in counts.items())
        return cls(name, comps, mass_density, displacement_energy, binding_energy)


DEFAULT_DISPLACEMENT_EV = {"diamond": 50.0, "pmma": 25.0}
DEFAULT_BINDING_EV = 3.0


def builtin_material(name: str, displacement_energy: float | None = None,
                     binding_energy: float | None = None) -> Material:
    key = name.lower()
    if key not in DEFAULT_DISPLACEMENT_EV:
        raise ValueError(f"unknown material {name!r}; built-ins are diamond, pmma")
    ed = DEFAULT_DISPLACEMENT_EV[key] if displacement_energy is None else displacement_energy
    eb = DEFAULT_BINDING_EV if binding_energy is None else binding_energy
    if key == "diamond":
        return Material.from_stoichiometry("diamond", {"C": 1}, 3.51, ed, eb)
    # C5H8O2 repeat unit
    return Material.from_stoichiometry("pmma", {"C": 5, "H": 8, "O": 2}, 1.19, ed, eb)


@dataclass(frozen=True)
class LayerStack:
    """Finite layers (material, thickness in nm) above a semi-infinite substrate."""

    layers: tuple[tuple[Material, float], ...] = field(default_factory=tuple)
    substrate: Material = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple((m, float(t)) for m, t in self.layers))
        if self.substrate is None:
            raise ValueError("LayerStack needs a substrate")
        for m, t in self.layers:
            if not t > 0:
                raise ValueError(f"layer {m.name} has non-positive thickness {t}")

    @property
    def materials(self) -> list[Material]:
        return [m for m, _ in self.layers] + [self.substrate]

    @property
    def boundaries(self) -> np.ndarray:
        """Depths of layer tops, including the substrate top; first entry is 0."""
        return np.concatenate([[0.0], np.cumsum([t for _, t in self.layers])])

    @property
    def substrate_depth(self) -> float:
        return float(self.boundaries[-1])

    def material_at(self, depth: float) -> Material:
        if depth < 0:
            raise ValueError("depth above the surface")
        idx = int(np.searchsorted(self.boundaries, depth, side="right")) - 1
        return self.materials[idx]


def lss_coefficient(ion: Element, target: Element) -> float:
    """Lindhard-Scharff k_L such that S_e = k_L * sqrt(E[keV]).

    Returned in eV cm^2 / 1e15 atoms per sqrt(keV).
    """
    z1, z2 = ion.atomic_number, target.atomic_number
    k_ev = (_LSS_PREFACTOR * z1 ** (7 / 6) * z2
            / ((z1 ** (2 / 3) + z2 ** (2 / 3)) ** 1.5 * math.sqrt(ion.atomic_mass)))
    # sqrt(E[eV]) = sqrt(1000) * sqrt(E[keV])
    return k_ev * _A2_TO_SRIM_UNITS * math.sqrt(1000.0)


def electronic_stopping(material: Material, ion: Element, energy: float) -> float:
    """Electronic stopping cross-section in eV cm^2 / 1e15 atoms at ``energy`` keV."""
    if not energy > 0:
        raise ValueError(f"energy must be positive, got {energy}")
    k = sum(f * lss_coefficient(ion, el) for el, f in material.components)
    return k * math.sqrt(energy)


def electronic_stopping_power(material: Material, ion: Element, energy: float) -> float:
    """Linear electronic stopping dE/dx in eV/nm."""
    # (eV cm^2 / 1e15) * atoms/cm^3 -> eV/cm; /1e7 -> eV/nm
    return electronic_stopping(material, ion, energy) * 1e-15 * material.number_density * 1e-7


def zbl_screening(reduced_radius):
    """Universal (ZBL) screening function Phi(x); accepts scalars or arrays."""
    x = np.asarray(reduced_radius, dtype=float)
    if np.any(x < 0):
        raise ValueError("reduced radius must be non-negative")
    phi = sum(c * np.exp(-d * x) for c, d in zip(ZBL_COEFFS, ZBL_EXPONENTS))
    return float(phi) if phi.ndim == 0 else phi


def zbl_screening_length(z1: int, z2: int) -> float:
    """Universal screening length in nm."""
    return 0.88534 * BOHR_RADIUS_NM / (z1 ** 0.23 + z2 ** 0.23)
