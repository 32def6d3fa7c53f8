from __future__ import annotations

import math

import numpy as np
import pytest

from nvarray.imaging import ScanImage, detect_spots, grid_for_extent, lattice_pitch, match_to_apertures, render_scan


def test_empty_image():
    img = render_scan(np.zeros((0, 2)), [], extent=(0, 2000, 0, 2000))
    assert img.shape == (20, 20) and not img.data.any()
    assert len(detect_spots(img)) == 0


def test_peak_and_radial_decay():
    origin, _ = grid_for_extent((0, 2000, 0, 2000), 100)
    x0 = origin[0] + 100 * 10
    y0 = origin[1] + 100 * 8
    img = render_scan([[x0, y0]], [1e5], extent=(0, 2000, 0, 2000))
    i, j = np.unravel_index(np.argmax(img.data), img.shape)
    assert (i, j) == (8, 10)
    assert img.data[i, j] == pytest.approx(1e5)
    xc, yc = img.pixel_centres()
    r = np.hypot(*np.meshgrid(xc - x0, yc - y0))
    order = np.argsort(r, axis=None)
    vals = img.data.ravel()[order]
    rs = r.ravel()[order]
    # strictly smaller at strictly larger radius, inside the 6 sigma render support
    inside = rs <= 6 * 130.0
    vals, rs = vals[inside], rs[inside]
    for k in range(1, len(vals)):
        if rs[k] > rs[k - 1] + 1e-9:
            assert vals[k] < vals[k - 1] + 1e-9


def test_flux_closure():
    sigma, pix = 130.0, 100.0
    xy = np.array([[3000.0, 2500.0], [7100.0, 6300.0]])
    b = np.array([1e5, 2.5e5])
    img = render_scan(xy, b, sigma, background_rate=1e3, pixel_size=pix, extent=(0, 10000, 0, 10000))
    expected = b.sum() * 2 * math.pi * sigma ** 2 / pix ** 2 + 1e3 * img.data.size
    assert img.data.sum() == pytest.approx(expected, rel=0.01)


def test_noise_is_deterministic_poisson():
    a = render_scan([[500, 500]], [1e5], background_rate=2e4, noise=True, seed=4)
    b = render_scan([[500, 500]], [1e5], background_rate=2e4, noise=True, seed=4)
    assert np.array_equal(a.data, b.data)
    counts = a.data * 0.01
    assert np.allclose(counts, np.rint(counts))


def test_unresolved_pair_is_one_spot():
    img = render_scan([[1000, 1000], [1005, 1000]], [1e5, 1e5], background_rate=1e4,
                      extent=(0, 2000, 0, 2000))
    spots = detect_spots(img, background=1e4)
    assert len(spots) == 1
    assert np.hypot(spots[0, 0] - 1002.5, spots[0, 1] - 1000) < 50


def test_centroid_bias():
    g = np.random.default_rng(0)
    worst = 0.0
    for _ in range(30):
        x, y = g.uniform(800, 1200, 2)
        img = render_scan([[x, y]], [1e5], background_rate=1e4, extent=(0, 2000, 0, 2000))
        (cx, cy), = detect_spots(img, background=1e4, window=3)
        worst = max(worst, abs(cx - x), abs(cy - y))
    assert worst < 50.0


def test_lattice_and_matching():
    g = np.random.default_rng(1)
    ii, jj = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    centres = np.column_stack([jj.ravel() * 2000.0, ii.ravel() * 2000.0])
    pts = centres + g.normal(0, 20, centres.shape)
    pitch, se = lattice_pitch(pts, 2000.0)
    assert abs(pitch - 2000) < 3 * se + 1e-9 and se < 5
    hit = match_to_apertures(pts[:-3], centres, 300)
    assert hit.sum() == 33 and not hit[-3:].any()
    with pytest.raises(ValueError):
        lattice_pitch(pts[:1], 2000.0)


def test_image_validation():
    with pytest.raises(ValueError):
        ScanImage(-np.ones((2, 2)), 100, (0, 0))
    with pytest.raises(ValueError):
        detect_spots(ScanImage(np.ones((3, 3)), 100, (0, 0)), threshold=1.0)
