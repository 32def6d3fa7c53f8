"""Binary-collision kinematics under the universal screened potential.

Angles are centre-of-mass angles. The kernels work in reduced units: distances
in screening lengths and the reduced (Lindhard) energy ``eps``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .materials import COULOMB_EV_NM, ZBL_COEFFS, ZBL_EXPONENTS, Element, zbl_screening_length

_C0, _C1, _C2, _C3 = ZBL_COEFFS
_D0, _D1, _D2, _D3 = ZBL_EXPONENTS

# Biersack-Haggmark fit constants for the universal potential
_MAGIC_C1 = 0.99229
_MAGIC_C2 = 0.011615
_MAGIC_C3 = 0.0071222
_MAGIC_C4 = 9.3066
_MAGIC_C5 = 14.813

DEFAULT_QUADRATURE_ORDER = 32


class QuadratureFailure(RuntimeError):
    pass


@njit(cache=True)
def _phi(x):
    return (_C0 * math.exp(-_D0 * x) + _C1 * math.exp(-_D1 * x)
            + _C2 * math.exp(-_D2 * x) + _C3 * math.exp(-_D3 * x))


@njit(cache=True)
def _dphi(x):
    return -(_C0 * _D0 * math.exp(-_D0 * x) + _C1 * _D1 * math.exp(-_D1 * x)
             + _C2 * _D2 * math.exp(-_D2 * x) + _C3 * _D3 * math.exp(-_D3 * x))


@njit(cache=True)
def closest_approach(eps, b):
    """Reduced distance of closest approach; NaN if the root is not bracketed.

    Root of h(x) = 1 - Phi(x)/(x eps) - b^2/x^2, which is increasing and
    concave for x > 0, so safeguarded Newton converges in a handful of steps.
    """
    inv = 1.0 / eps
    # unscreened Coulomb turning point bounds the root from above
    hi = 0.5 * (inv + math.sqrt(inv * inv + 4.0 * b * b)) * (1.0 + 1e-12) + 1e-300
    if 1.0 - _phi(hi) * inv / hi - (b / hi) ** 2 < 0.0:
        return math.nan
    lo = 0.0
    # h(b) < 0, and for large b the root sits just above b
    x = b if b > 0.5 * hi else hi
    for _ in range(200):
        ph = _phi(x)
        h = 1.0 - ph * inv / x - (b / x) ** 2
        if h > 0.0:
            hi = x
        else:
            lo = x
        dh = (ph - x * _dphi(x)) * inv / (x * x) + 2.0 * b * b / (x * x * x)
        xn = x - h / dh
        if abs(xn - x) <= 1e-13 * x:
            return xn
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi)
        x = xn
    return x


def mehler_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Positive Gauss-Chebyshev nodes u_j and sqrt(1 - u_j^2) for an even ``order``."""
    w = (2 * np.arange(1, order // 2 + 1) - 1) * np.pi / (2 * order)
    return np.cos(w), np.sin(w)


@njit(cache=True)
def theta_gauss_mehler(eps, b, nodes_u, nodes_s):
    """Centre-of-mass angle from the scattering integral, Gauss-Mehler rule.

    With u = x0/x the integral becomes int_0^1 du / sqrt(F(x0/u)); the
    1/sqrt(1-u^2) weight absorbs the turning-point singularity.
    """
    if b <= 0.0:
        return math.pi
    x0 = closest_approach(eps, b)
    if not (x0 > 0.0):
        return math.nan
    s = 0.0
    for j in range(nodes_u.shape[0]):
        x = x0 / nodes_u[j]
        f = 1.0 - _phi(x) / (x * eps) - (b / x) ** 2
        s += nodes_s[j] / math.sqrt(f)
    theta = math.pi * (1.0 - b / x0 * s / nodes_u.shape[0])
    if theta < 0.0:
        theta = 0.0
    return theta


@njit(cache=True)
def sin2_half_magic(eps, b):
    """sin^2(theta/2) from the Biersack-Haggmark magic formula."""
    if b <= 0.0:
        return 1.0
    r0 = closest_approach(eps, b)
    if not (r0 > 0.0):
        return math.nan
    ph = _phi(r0)
    v = ph / r0
    dv = (_dphi(r0) * r0 - ph) / (r0 * r0)
    rho = -2.0 * (eps - v) / dv
    se = math.sqrt(eps)
    alpha = 1.0 + _MAGIC_C1 / se
    beta = (_MAGIC_C2 + se) / (_MAGIC_C3 + se)
    gam = (_MAGIC_C4 + eps) / (_MAGIC_C5 + eps)
    a = 2.0 * alpha * eps * b ** beta
    g = (math.sqrt(1.0 + a * a) + a) / gam
    delta = a * (r0 - b) / (1.0 + g)
    # 1 - cos^2(theta/2) without cancellation
    s2 = (r0 - b - delta) * (r0 + 2.0 * rho + b + delta) / (r0 + rho) ** 2
    if s2 < 0.0:
        s2 = 0.0
    elif s2 > 1.0:
        s2 = 1.0
    return s2


def reduced_energy(ion: Element, target: Element, energy_kev: float) -> float:
    a = zbl_screening_length(ion.atomic_number, target.atomic_number)
    e_cm = energy_kev * 1e3 * target.atomic_mass / (ion.atomic_mass + target.atomic_mass)
    return a * e_cm / (ion.atomic_number * target.atomic_number * COULOMB_EV_NM)


def scattering_angle(ion: Element, target_atom: Element, energy: float, impact_parameter: float,
                     order: int = DEFAULT_QUADRATURE_ORDER) -> float:
    """Centre-of-mass scattering angle (rad) for ``energy`` keV and impact parameter in nm."""
    if not energy > 0:
        raise ValueError("energy must be positive")
    if impact_parameter < 0:
        raise ValueError("impact parameter must be non-negative")
    if order < 2 or order % 2:
        raise ValueError("quadrature order must be an even integer >= 2")
    eps = reduced_energy(ion, target_atom, energy)
    b = impact_parameter / zbl_screening_length(ion.atomic_number, target_atom.atomic_number)
    theta = theta_gauss_mehler(eps, b, *mehler_nodes(order))
    if math.isnan(theta):
        raise QuadratureFailure(f"closest approach not bracketed (eps={eps}, b={b})")
    return theta


def magic_scattering_angle(ion: Element, target_atom: Element, energy: float,
                           impact_parameter: float) -> float:
    """Fast-path angle from the magic formula, same conventions as ``scattering_angle``."""
    if not energy > 0:
        raise ValueError("energy must be positive")
    if impact_parameter < 0:
        raise ValueError("impact parameter must be non-negative")
    eps = reduced_energy(ion, target_atom, energy)
    b = impact_parameter / zbl_screening_length(ion.atomic_number, target_atom.atomic_number)
    s2 = sin2_half_magic(eps, b)
    if math.isnan(s2):
        raise QuadratureFailure(f"closest approach not bracketed (eps={eps}, b={b})")
    return 2.0 * math.asin(math.sqrt(s2))


def mass_factor(m_ion: float, m_target: float) -> float:
    return 4.0 * m_ion * m_target / (m_ion + m_target) ** 2


def transfer_energy(angle: float, energy: float, masses: tuple[float, float]) -> float:
    """Recoil energy (same unit as ``energy``) for a centre-of-mass angle."""
    if not 0.0 <= angle <= math.pi:
        raise ValueError("angle must lie in [0, pi]")
    if energy < 0:
        raise ValueError("energy must be non-negative")
    m1, m2 = masses
    return mass_factor(m1, m2) * energy * math.sin(0.5 * angle) ** 2


def lab_deflection(angle, mass_ratio):
    """Projectile lab-frame deflection for ``mass_ratio`` = m_ion / m_target."""
    return np.arctan2(np.sin(angle), mass_ratio + np.cos(angle))
