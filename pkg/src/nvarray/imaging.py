"""Synthetic confocal raster scans and spot detection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import rng


@dataclass
class ScanImage:
    """Count rates (counts/s) on a pixel grid; pixel (i, j) is centred at origin + (j, i) * pixel_size."""

    data: np.ndarray  # (ny, nx)
    pixel_size: float
    origin: tuple[float, float]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ValueError("image must be a non-empty 2-D grid")
        if np.any(self.data < 0):
            raise ValueError("pixel values must be non-negative")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def pixel_centres(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.data.shape
        return (self.origin[0] + self.pixel_size * np.arange(nx),
                self.origin[1] + self.pixel_size * np.arange(ny))


def grid_for_extent(extent: tuple[float, float, float, float], pixel_size: float):
    """Origin and shape of a pixel grid covering (xmin, xmax, ymin, ymax)."""
    xmin, xmax, ymin, ymax = extent
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("extent must have positive width and height")
    nx = max(1, int(math.floor((xmax - xmin) / pixel_size + 1e-9)))
    ny = max(1, int(math.floor((ymax - ymin) / pixel_size + 1e-9)))
    return (xmin + 0.5 * pixel_size, ymin + 0.5 * pixel_size), (ny, nx)


def render_scan(emitters_xy, brightness, psf_sigma: float = 130.0, background_rate: float = 0.0,
                pixel_size: float = 100.0, extent: tuple[float, float, float, float] = (0, 1000, 0, 1000),
                noise: bool = False, dwell_time: float = 0.01, seed: int = 0) -> ScanImage:
    """Gaussian-PSF image of point emitters plus a flat background.

    ``emitters_xy`` is an (n, 2) array in nm and ``brightness`` the peak count
    rate of each emitter. With ``noise`` each pixel is a Poisson count over
    ``dwell_time`` seconds converted back to a rate.
    """
    if not psf_sigma > 0:
        raise ValueError("psf_sigma must be positive")
    if not pixel_size > 0:
        raise ValueError("pixel_size must be positive")
    if background_rate < 0:
        raise ValueError("background_rate must be non-negative")
    if noise and not dwell_time > 0:
        raise ValueError("dwell_time must be positive")
    xy = np.asarray(emitters_xy, dtype=float).reshape(-1, 2)
    bright = np.asarray(brightness, dtype=float).reshape(-1)
    if len(bright) != len(xy):
        raise ValueError("one brightness per emitter")
    origin, (ny, nx) = grid_for_extent(extent, pixel_size)
    img = np.full((ny, nx), float(background_rate))
    # each emitter only touches pixels within 6 sigma
    half = int(math.ceil(6.0 * psf_sigma / pixel_size))
    inv = 1.0 / (2.0 * psf_sigma ** 2)
    for (x, y), b in zip(xy, bright):
        cj = int(round((x - origin[0]) / pixel_size))
        ci = int(round((y - origin[1]) / pixel_size))
        j0, j1 = max(cj - half, 0), min(cj + half + 1, nx)
        i0, i1 = max(ci - half, 0), min(ci + half + 1, ny)
        if j0 >= j1 or i0 >= i1:
            continue
        gx = np.exp(-(origin[0] + pixel_size * np.arange(j0, j1) - x) ** 2 * inv)
        gy = np.exp(-(origin[1] + pixel_size * np.arange(i0, i1) - y) ** 2 * inv)
        img[i0:i1, j0:j1] += b * np.outer(gy, gx)
    if noise:
        g = rng.generator(seed, rng.IMAGING)
        img = g.poisson(img * dwell_time) / dwell_time
    return ScanImage(img, float(pixel_size), origin)


def detect_spots(image: ScanImage, threshold: float = 2.0, background: float | None = None,
                 window: int = 2) -> np.ndarray:
    """Centroids (n, 2) in nm of 3x3 local maxima brighter than threshold * background.

    ``background`` defaults to the image median. Centroids are background-subtracted
    intensity-weighted means over a (2 window + 1)^2 box. Output is sorted
    row-major on the nearest pixel.
    """
    if not threshold > 1:
        raise ValueError("threshold must exceed 1")
    data = image.data
    bg = float(np.median(data)) if background is None else float(background)
    level = threshold * bg
    peaks = (data == ndimage.maximum_filter(data, size=3, mode="constant", cval=-np.inf)) & (data > level)
    if bg <= 0:
        peaks &= data > 0
    ii, jj = np.nonzero(peaks)
    if len(ii) == 0:
        return np.zeros((0, 2))
    # plateaus of equal maxima: keep one per connected group
    labels, n = ndimage.label(peaks)
    keep = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        di, dj = np.argwhere(labels[sl] == k)[0]
        keep.append((sl[0].start + int(di), sl[1].start + int(dj)))
    ny, nx = data.shape
    xc, yc = image.pixel_centres()
    out = []
    for i, j in sorted(keep):
        i0, i1 = max(i - window, 0), min(i + window + 1, ny)
        j0, j1 = max(j - window, 0), min(j + window + 1, nx)
        w = np.clip(data[i0:i1, j0:j1] - bg, 0.0, None)
        tot = w.sum()
        if tot <= 0:
            out.append((xc[j], yc[i]))
            continue
        out.append((float((w.sum(axis=0) * xc[j0:j1]).sum() / tot),
                    float((w.sum(axis=1) * yc[i0:i1]).sum() / tot)))
    return np.array(out)


def lattice_pitch(centroids, pitch_guess: float, origin: tuple[float, float] = (0.0, 0.0)):
    """Least-squares lattice constant of points near a square grid.

    Each point is assigned integer lattice indices by rounding against the
    guess; x and y are then regressed jointly on those indices with a free
    offset per axis. Returns (pitch, standard error).
    """
    c = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(c) < 2:
        raise ValueError("need at least two points")
    idx = np.rint((c - np.asarray(origin)) / pitch_guess)
    n = len(c)
    # unknowns: pitch, x0, y0
    a = np.zeros((2 * n, 3))
    a[:n, 0], a[n:, 0] = idx[:, 0], idx[:, 1]
    a[:n, 1] = 1.0
    a[n:, 2] = 1.0
    rhs = np.concatenate([c[:, 0], c[:, 1]])
    sol, res, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
    if rank < 3:
        raise ValueError("points do not span the lattice in both directions")
    resid = rhs - a @ sol
    dof = max(2 * n - 3, 1)
    cov = np.linalg.inv(a.T @ a) * (resid @ resid) / dof
    return float(sol[0]), float(math.sqrt(cov[0, 0]))


def match_to_apertures(centroids, centres, radius: float) -> np.ndarray:
    """Boolean per aperture centre: is some detected spot within ``radius``."""
    centres = np.asarray(centres, dtype=float).reshape(-1, 2)
    c = np.asarray(centroids, dtype=float).reshape(-1, 2)
    if len(c) == 0:
        return np.zeros(len(centres), dtype=bool)
    d, _ = cKDTree(c).query(centres, k=1)
    return d <= radius
