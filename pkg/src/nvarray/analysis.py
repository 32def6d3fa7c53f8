"""Background-corrected g2, emitter counting and array statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .photonics import CorrelationHistogram

G2_METHODS = ("g2", "intensity", "combined")
MIN_EXPECTED = 5.0


class FitFailure(RuntimeError):
    pass


@dataclass
class G2Curve:
    tau: np.ndarray
    values: np.ndarray  # background corrected
    errors: np.ndarray
    rho: float
    raw: np.ndarray  # normalised, uncorrected
    g2_zero: float = math.nan
    timescale: float = math.nan
    g2_zero_error: float = math.inf

    @property
    def fit(self) -> tuple[float, float, float]:
        return self.g2_zero, self.timescale, self.g2_zero_error


def _dip_shape(tau, t, width):
    """Bin average of exp(-|tau|/t) over bins of ``width`` centred on ``tau``."""
    if width <= 0:
        return np.exp(-np.abs(tau) / t)
    h = 0.5 * width
    x = np.abs(tau)
    inner = x < h
    out = np.empty_like(x)
    xo = x[~inner]
    out[~inner] = np.exp(-xo / t) * (t / h) * np.sinh(h / t)
    xi = x[inner]
    # bins straddling zero: integrate both sides separately
    out[inner] = t * (2.0 - np.exp(-(h - xi) / t) - np.exp(-(h + xi) / t)) / width
    return out


def fit_g2(tau, values, errors, rho: float = 1.0, normalization: float | None = None,
           bin_width: float = 0.0, timescale_guess: float = 10.0, iterations: int = 4):
    """Weighted fit of 1 - a exp(-|tau|/t); returns (g2(0), t, sigma of g2(0)).

    With ``normalization`` (expected accidentals per bin) the weights are
    iterated from the model's expected raw counts, which converges to the
    Poisson maximum-likelihood fit; otherwise ``errors`` are used as given.
    ``bin_width`` > 0 fits the bin-averaged dip so that g2(0) refers to tau = 0.
    """
    tau = np.asarray(tau, dtype=float)
    values = np.asarray(values, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(tau) < 3:
        raise FitFailure("need at least three bins")
    wmax = float(np.max(np.abs(tau)))
    step = float(np.min(np.diff(np.sort(tau))))
    centre = np.abs(tau) <= 1.5 * step
    a0 = float(np.clip(1.0 - values[centre].mean(), 0.0, 1.5))
    p = (a0, min(timescale_guess, 0.5 * wmax))
    bounds = ([-1.0, 0.05 * step], [2.0, wmax])

    def model(x, a, t):
        return 1.0 - a * _dip_shape(x, t, bin_width)

    sigma = errors
    r2 = rho * rho
    try:
        for _ in range(iterations if normalization else 1):
            p, cov = optimize.curve_fit(model, tau, values, p0=p, sigma=sigma, absolute_sigma=True,
                                        bounds=bounds)
            if normalization:
                expected = normalization * ((1.0 - r2) + r2 * model(tau, *p))
                sigma = np.sqrt(np.maximum(expected, 1.0)) / normalization / r2
    except (RuntimeError, ValueError) as exc:
        raise FitFailure(str(exc)) from exc
    err = float(np.sqrt(cov[0, 0])) if np.isfinite(cov[0, 0]) else math.inf
    return 1.0 - float(p[0]), float(p[1]), err


def background_correct(histogram: CorrelationHistogram, rho: float | None = None,
                       fit: bool = True) -> G2Curve:
    """Map normalised coincidences c to (c - (1 - rho^2)) / rho^2 and fit the dip."""
    rho = histogram.rho if rho is None else float(rho)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if histogram.counts.sum() == 0 or not histogram.normalization_factor > 0:
        raise ValueError("empty histogram")
    raw = histogram.counts / histogram.normalization_factor
    r2 = rho * rho
    values = (raw - (1.0 - r2)) / r2
    errors = np.sqrt(np.maximum(histogram.counts, 1)) / histogram.normalization_factor / r2
    curve = G2Curve(histogram.tau, values, errors, rho, raw)
    if fit:
        curve.g2_zero, curve.timescale, curve.g2_zero_error = fit_g2(
            curve.tau, values, errors, rho, histogram.normalization_factor, histogram.bin_width)
    return curve


def is_single_emitter(curve: G2Curve, n_sigma: float = 2.0) -> bool:
    """g2(0) below 1/2 with ``n_sigma`` fit-error margin."""
    return bool(curve.g2_zero + n_sigma * curve.g2_zero_error < 0.5)


@dataclass
class SpotEstimate:
    row: int
    col: int
    n_hat: int
    method: str
    confidence: str
    n_g2: int | None = None
    n_intensity: int = 0
    g2_zero: float = math.nan
    g2_zero_error: float = math.nan
    intensity_ratio: float = 0.0
    flags: list[str] = field(default_factory=list)


def estimate_count(curve: G2Curve | None, spot_intensity: float, single_emitter_intensity: float,
                   background_intensity: float = 0.0, g2_error_limit: float = 0.1,
                   index: tuple[int, int] = (-1, -1)) -> SpotEstimate:
    """Combine the dip-depth and intensity estimates of the emitter number.

    The intensity estimate is reported unless both estimates are available,
    precise (fit error below ``g2_error_limit``) and differ by more than one,
    in which case the spot is flagged discrepant; n_hat stays the intensity value.
    """
    if not single_emitter_intensity > 0:
        raise ValueError("single_emitter_intensity must be positive")
    ratio = (spot_intensity - background_intensity) / single_emitter_intensity
    n_i = max(0, int(round(ratio)))
    flags: list[str] = []
    n_g = None
    g0 = err = math.nan
    if curve is not None and math.isfinite(curve.g2_zero):
        g0, err = curve.g2_zero, curve.g2_zero_error
        if g0 >= 1.0 + (err if math.isfinite(err) else 0.0):
            flags.append("unphysical-g2")
        elif g0 < 1.0:
            n_g = int(round(1.0 / (1.0 - g0)))
    else:
        flags.append("no-g2")
    if n_i == 0:
        flags.append("below-threshold")
    if n_g is None:
        method, confidence = "intensity", "intensity-only"
    elif not err <= g2_error_limit:
        method, confidence = "combined", "g2-imprecise"
    elif abs(n_g - n_i) <= 1:
        method, confidence = "combined", "agree" if n_g == n_i else "agree-within-1"
    else:
        method, confidence = "combined", "discrepant"
        flags.append("discrepant")
    return SpotEstimate(index[0], index[1], n_i, method, confidence, n_g, n_i, g0, err, float(ratio), flags)


def single_emitter_intensity(intensities, curves, n_sigma: float = 2.0) -> float:
    """Mode of the intensity histogram of spots that g2 classifies as single."""
    sel = [float(i) for i, c in zip(intensities, curves)
           if c is not None and math.isfinite(c.g2_zero) and is_single_emitter(c, n_sigma)]
    if not sel:
        raise ValueError("no spot classified as a single emitter")
    if len(sel) < 3:
        return float(np.median(sel))
    counts, edges = np.histogram(sel, bins="auto")
    k = int(np.argmax(counts))
    return float(0.5 * (edges[k] + edges[k + 1]))


@dataclass
class PoissonFit:
    n: int
    mle_mean: float
    chi_square: float
    dof: int
    p_value: float
    degenerate: bool = False
    bins: list[tuple[str, int, float]] = field(default_factory=list)


def _merged_bins(counts: np.ndarray, mean: float):
    """Observed/expected per bin; the first bin is k <= low, the last k >= high."""
    n = len(counts)
    top = int(max(counts.max(), math.ceil(mean)))
    obs = list(np.bincount(counts, minlength=top + 1).astype(float)[:top + 1])
    exp = list(n * stats.poisson.pmf(np.arange(top + 1), mean))
    exp[-1] = n * stats.poisson.sf(top - 1, mean)
    span = [[k, k] for k in range(top + 1)]
    while len(exp) > 1 and exp[-1] < MIN_EXPECTED:
        e, o, last = exp.pop(), obs.pop(), span.pop()
        exp[-1] += e
        obs[-1] += o
        span[-1][1] = last[1]
    while len(exp) > 1 and exp[0] < MIN_EXPECTED:
        e, o, first = exp.pop(0), obs.pop(0), span.pop(0)
        exp[0] += e
        obs[0] += o
        span[0][0] = first[0]
    labels = []
    for i, (a, b) in enumerate(span):
        if i == len(span) - 1:
            labels.append(f">={a}")
        elif a != b:
            labels.append(f"<={b}")
        else:
            labels.append(str(a))
    return labels, np.array(obs), np.array(exp)


def fit_poisson(counts, mean: float | None = None) -> PoissonFit:
    """Pearson chi-square of integer counts against a Poisson law.

    With ``mean`` None the MLE (sample mean) is used and costs one degree of
    freedom; otherwise the given mean is tested. Sparse bins at both ends are
    merged until every bin expects at least five.
    """
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("fit_poisson needs at least one count")
    if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
        raise ValueError("counts must be non-negative integers")
    counts = counts.astype(np.int64)
    mle = float(counts.mean())
    lam = mle if mean is None else float(mean)
    if lam < 0:
        raise ValueError("mean must be non-negative")
    if lam == 0:
        stat = 0.0 if counts.max() == 0 else math.inf
        return PoissonFit(len(counts), mle, stat, 0, 1.0 if stat == 0 else 0.0, True,
                          [("0", len(counts), float(len(counts)))])
    labels, obs, exp = _merged_bins(counts, lam)
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(exp) - 1 - (1 if mean is None else 0)
    bins = [(l, int(o), float(e)) for l, o, e in zip(labels, obs, exp)]
    if dof < 1:
        return PoissonFit(len(counts), mle, stat, max(dof, 0), 1.0, True, bins)
    return PoissonFit(len(counts), mle, stat, dof, float(stats.chi2.sf(stat, dof)), False, bins)


def yield_from_statistics(mle_mean: float, expected_ions_per_aperture: float) -> float:
    if not expected_ions_per_aperture > 0:
        raise ValueError("expected ions per aperture must be positive")
    return mle_mean / expected_ions_per_aperture
