"""Stochastic conversion of implanted nitrogen into NV emitters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .mask import ApertureMask, expected_ions_per_aperture
from .transport import ImplantResult

NITROGEN_Z = 7
NV_MINUS = "NV-"
NV_ZERO = "NV0"


@dataclass(frozen=True)
class YieldModel:
    base_yield: float = 0.07
    nv_minus_fraction: float = 0.9
    vacancy_boost: float = 0.0
    vacancy_radius: float = 10.0  # nm
    single_emitter_rate: float = 50e3  # detected counts/s
    brightness_sigma: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.base_yield <= 1.0:
            raise ValueError("base_yield must lie in [0, 1]")
        if not 0.0 <= self.nv_minus_fraction <= 1.0:
            raise ValueError("nv_minus_fraction must lie in [0, 1]")
        if self.vacancy_boost < 0:
            raise ValueError("vacancy_boost must be non-negative")
        if not self.vacancy_radius > 0:
            raise ValueError("vacancy_radius must be positive")
        if not self.single_emitter_rate > 0:
            raise ValueError("single_emitter_rate must be positive")
        if self.brightness_sigma < 0:
            raise ValueError("brightness_sigma must be non-negative")

    def conversion_probability(self, local_vacancies) -> np.ndarray:
        v = np.asarray(local_vacancies, dtype=float)
        return np.clip(self.base_yield * (1.0 + self.vacancy_boost * v), 0.0, 1.0)


@dataclass
class SpotPopulation:
    """Emitters formed in one aperture. ``x, y, z`` are parent N rest positions."""

    row: int
    col: int
    n_implanted: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    charge: list[str]
    brightness: np.ndarray

    @property
    def n_emitters(self) -> int:
        return len(self.x)

    @property
    def total_brightness(self) -> float:
        return float(self.brightness.sum())

    @property
    def index(self) -> tuple[int, int]:
        return self.row, self.col


def _local_vacancies(px, py, pz, vxyz, vcount, radius):
    if len(vcount) == 0 or len(px) == 0:
        return np.zeros(len(px))
    d2 = ((px[:, None] - vxyz[None, :, 0]) ** 2 + (py[:, None] - vxyz[None, :, 1]) ** 2
          + (pz[:, None] - vxyz[None, :, 2]) ** 2)
    return (d2 <= radius * radius) @ vcount.astype(float)


def form_nv(result: ImplantResult, model: YieldModel, seed: int) -> list[SpotPopulation]:
    """One SpotPopulation per aperture of the grid, in row-major order.

    Only nitrogen resting in an opening (not in the resist) can convert. Each
    aperture uses its own stream: one uniform per N for conversion, then one
    uniform and one normal per emitter for charge and brightness.
    """
    rows, cols = result.grid
    sel = (result.species == NITROGEN_Z) & ~result.masked
    lin = (result.row * cols + result.col)[sel]
    # stable sort keeps rest order inside an aperture
    order = np.argsort(lin, kind="stable")
    idx = np.flatnonzero(sel)[order]
    starts = np.searchsorted(lin[order], np.arange(rows * cols + 1))

    use_vac = model.vacancy_boost > 0 and len(result.vac_count) > 0
    if use_vac:
        vsel = result.vac_row >= 0
        vlin = (result.vac_row * cols + result.vac_col)[vsel]
        vorder = np.argsort(vlin, kind="stable")
        vidx = np.flatnonzero(vsel)[vorder]
        vstarts = np.searchsorted(vlin[vorder], np.arange(rows * cols + 1))

    s = model.brightness_sigma
    out = []
    for k in range(rows * cols):
        ions = idx[starts[k]:starts[k + 1]]
        px, py, pz = result.x[ions], result.y[ions], result.z[ions]
        g = rng.generator(seed, rng.FORMATION, k)
        if use_vac:
            v = vidx[vstarts[k]:vstarts[k + 1]]
            p = model.conversion_probability(
                _local_vacancies(px, py, pz, result.vac_xyz[v], result.vac_count[v], model.vacancy_radius))
        else:
            p = np.full(len(ions), model.base_yield)
        keep = g.random(len(ions)) < p
        m = int(keep.sum())
        minus = g.random(m) < model.nv_minus_fraction
        # mean-preserving lognormal scatter
        bright = model.single_emitter_rate * np.exp(s * g.standard_normal(m) - 0.5 * s * s)
        r, c = divmod(k, cols)
        out.append(SpotPopulation(r, c, len(ions), px[keep], py[keep], pz[keep],
                                  [NV_MINUS if q else NV_ZERO for q in minus], bright))
    return out


def expected_mean_emitters(fluence: float, mask: ApertureMask, model: YieldModel) -> float:
    return expected_ions_per_aperture(mask, fluence) * model.base_yield
