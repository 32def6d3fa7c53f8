"""Periodic aperture mask in a resist layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng

NM2_TO_CM2 = 1e-14


@dataclass(frozen=True)
class ApertureMask:
    """Square lattice of circular openings.

    Aperture ``(row, col)`` is centred at ``origin + (col * pitch, row * pitch)``.
    """

    aperture_diameter: float = 80.0
    pitch: float = 2000.0
    rows: int = 7
    cols: int = 7
    resist_thickness: float = 200.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.aperture_diameter < self.pitch:
            raise ValueError("need 0 < aperture_diameter < pitch")
        if not self.resist_thickness > 0:
            raise ValueError("resist_thickness must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def radius(self) -> float:
        return 0.5 * self.aperture_diameter

    @property
    def n_apertures(self) -> int:
        return self.rows * self.cols

    @property
    def open_fraction(self) -> float:
        return math.pi * self.radius ** 2 / self.pitch ** 2

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the unit cells covering the grid."""
        ox, oy = self.origin
        h = 0.5 * self.pitch
        return (ox - h, ox + (self.cols - 1) * self.pitch + h,
                oy - h, oy + (self.rows - 1) * self.pitch + h)

    def center(self, row, col):
        return (self.origin[0] + np.asarray(col) * self.pitch,
                self.origin[1] + np.asarray(row) * self.pitch)

    def aperture_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major (row, col) arrays over the whole grid."""
        r, c = np.divmod(np.arange(self.n_apertures), self.cols)
        return r, c


def classify_entries(mask: ApertureMask, x, y):
    """Vectorised classification: (is_open, row, col); row/col are -1 when masked."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    col = np.rint((x - mask.origin[0]) / mask.pitch).astype(np.int64)
    row = np.rint((y - mask.origin[1]) / mask.pitch).astype(np.int64)
    cx, cy = mask.center(row, col)
    inside = (row >= 0) & (row < mask.rows) & (col >= 0) & (col < mask.cols)
    is_open = inside & ((x - cx) ** 2 + (y - cy) ** 2 < mask.radius ** 2)
    return is_open, np.where(is_open, row, -1), np.where(is_open, col, -1)


def classify_entry(mask: ApertureMask, position: tuple[float, float]):
    """Return ``("open", (row, col))`` or ``("masked", None)`` for one entry point."""
    x, y = position
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("position must be finite")
    is_open, row, col = classify_entries(mask, x, y)
    if bool(is_open):
        return "open", (int(row), int(col))
    return "masked", None


def expected_ions_per_aperture(mask: ApertureMask, fluence: float) -> float:
    """Mean number of ions through one opening for ``fluence`` ions/cm^2."""
    if fluence < 0:
        raise ValueError("fluence must be non-negative")
    return fluence * math.pi * mask.radius ** 2 * NM2_TO_CM2


@dataclass(frozen=True)
class EntryPoints:
    row: np.ndarray
    col: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(zi, zi.copy(), z, z.copy())


def sample_entry_points(mask: ApertureMask, fluence: float, rng_seed: int) -> EntryPoints:
    """Poisson ion count per aperture, entries uniform over each open disc.

    Output is ordered row-major by aperture; every aperture draws from its own
    stream so the result for one aperture does not depend on grid size.
    """
    lam = expected_ions_per_aperture(mask, fluence)
    if lam == 0:
        return EntryPoints.empty()
    rows, cols = mask.aperture_indices()
    parts = []
    for k, (r, c) in enumerate(zip(rows, cols)):
        g = rng.generator(rng_seed, rng.MASK, k)
        n = g.poisson(lam)
        rad = mask.radius * np.sqrt(g.random(n))
        ang = 2 * np.pi * g.random(n)
        cx, cy = mask.center(r, c)
        parts.append((np.full(n, r), np.full(n, c), cx + rad * np.cos(ang), cy + rad * np.sin(ang)))
    row, col, x, y = (np.concatenate(a) for a in zip(*parts))
    return EntryPoints(row.astype(np.int64), col.astype(np.int64), x, y)


def sample_aperture_counts(mask: ApertureMask, fluence: float, rng_seed: int) -> np.ndarray:
    """Per-aperture ion counts only (same streams as ``sample_entry_points``)."""
    lam = expected_ions_per_aperture(mask, fluence)
    return np.array([rng.generator(rng_seed, rng.MASK, k).poisson(lam) if lam > 0 else 0
                     for k in range(mask.n_apertures)], dtype=np.int64)


def sample_masked_entries(mask: ApertureMask, n: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` entry points uniform over the resist-covered part of the grid."""
    g = rng.generator(rng_seed, rng.MASKED_ENTRIES)
    xmin, xmax, ymin, ymax = mask.extent
    xs, ys = [np.zeros(0)], [np.zeros(0)]
    have = 0
    while have < n:
        m = int((n - have) * 1.1) + 16
        x = g.uniform(xmin, xmax, m)
        y = g.uniform(ymin, ymax, m)
        keep = ~classify_entries(mask, x, y)[0]
        xs.append(x[keep])
        ys.append(y[keep])
        have += int(keep.sum())
    return np.concatenate(xs)[:n], np.concatenate(ys)[:n]
