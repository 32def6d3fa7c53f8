"""Photon detection streams from a few two-level emitters and HBT correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng

NS_PER_S = 1e9


@dataclass(frozen=True)
class EmitterDynamics:
    """Two-level cycle: pump wait ~ Exp(pump_rate), emission wait ~ Exp(1/lifetime)."""

    excited_lifetime: float = 12.0  # ns
    pump_rate: float = 0.05  # 1/ns
    detection_efficiency: float = 1.6e-3

    def __post_init__(self):
        if not self.excited_lifetime > 0:
            raise ValueError("excited_lifetime must be positive")
        if self.pump_rate < 0:
            raise ValueError("pump_rate must be non-negative")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must lie in [0, 1]")

    @property
    def cycle_rate(self) -> float:
        """Mean emitted photons per second."""
        if self.pump_rate == 0:
            return 0.0
        return NS_PER_S / (1.0 / self.pump_rate + self.excited_lifetime)

    @property
    def detected_rate(self) -> float:
        return self.detection_efficiency * self.cycle_rate

    @property
    def antibunching_rate(self) -> float:
        """Decay rate (1/ns) of the dip: g2(tau) = 1 - exp(-rate |tau|)."""
        return self.pump_rate + 1.0 / self.excited_lifetime

    @classmethod
    def for_detected_rate(cls, rate: float, excited_lifetime: float = 12.0,
                          pump_rate: float = 0.05) -> "EmitterDynamics":
        base = cls(excited_lifetime, pump_rate, 1.0)
        if not 0 < rate <= base.cycle_rate:
            raise ValueError(f"detected rate {rate} not reachable (max {base.cycle_rate:.4g}/s)")
        return cls(excited_lifetime, pump_rate, rate / base.cycle_rate)


@dataclass
class PhotonEventStream:
    detector_a_times: np.ndarray  # ns, sorted
    detector_b_times: np.ndarray
    duration: float  # ns
    signal_rate: float = 0.0  # counts/s
    background_rate: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def rho(self) -> float:
        total = self.signal_rate + self.background_rate
        return self.signal_rate / total if total > 0 else 0.0

    @property
    def n_events(self) -> int:
        return len(self.detector_a_times) + len(self.detector_b_times)

    @property
    def measured_rate(self) -> float:
        return self.n_events / self.duration * NS_PER_S


def detection_gap_rates(dyn: EmitterDynamics, eta: float) -> tuple[float, float]:
    """Rates r1, r2 with detection gaps distributed as Exp(r1) + Exp(r2).

    A gap is K whole cycles, K ~ Geometric(eta), each cycle Exp(pump) +
    Exp(1/lifetime). Its Laplace transform eta p g / ((s + r1)(s + r2)) has
    r1, r2 the roots of s^2 + (p + g) s + eta p g, so two exponential draws
    reproduce the gap exactly.
    """
    p, gam = dyn.pump_rate, 1.0 / dyn.excited_lifetime
    tr = p + gam
    disc = math.sqrt(max(tr * tr - 4.0 * eta * p * gam, 0.0))
    r1 = 0.5 * (tr + disc)
    return r1, eta * p * gam / r1


def _emitter_times(g: np.random.Generator, dyn: EmitterDynamics, eta: float, duration: float,
                   warmup: float) -> np.ndarray:
    """Detected-photon times of one emitter on [0, duration).

    The emitter starts in the ground state at -warmup, which puts the renewal
    process in its stationary regime by t = 0.
    """
    if eta <= 0 or dyn.pump_rate == 0:
        return np.zeros(0)
    r1, r2 = detection_gap_rates(dyn, eta)
    mean_gap = 1.0 / r1 + 1.0 / r2
    chunks = []
    t = -warmup
    while t < duration:
        n = int((duration - t) / mean_gap * 1.02) + 16
        times = t + np.cumsum(g.exponential(1.0 / r1, n) + g.exponential(1.0 / r2, n))
        chunks.append(times)
        t = times[-1]
    times = np.concatenate(chunks)
    return times[(times >= 0) & (times < duration)]


def simulate_stream(n_emitters: int, dynamics: EmitterDynamics, background_rate: float,
                    duration: float, seed: int, *, brightness=None, jitter: float = 0.0,
                    stream_index: tuple[int, ...] = ()) -> PhotonEventStream:
    """Merged emitter + background detections split by a 50/50 beamsplitter.

    ``brightness`` optionally gives each emitter's detected rate (counts/s); the
    detection efficiency is then set per emitter. ``jitter`` is a Gaussian timing
    spread (ns) applied independently to every timestamp.
    """
    if n_emitters < 0:
        raise ValueError("n_emitters must be non-negative")
    if not duration > 0:
        raise ValueError("duration must be positive")
    if background_rate < 0:
        raise ValueError("background_rate must be non-negative")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    if brightness is None:
        etas = np.full(n_emitters, dynamics.detection_efficiency)
    else:
        brightness = np.asarray(brightness, dtype=float)
        if brightness.shape != (n_emitters,):
            raise ValueError("brightness needs one entry per emitter")
        if dynamics.cycle_rate == 0:
            raise ValueError("pump_rate is zero; emitters cannot be bright")
        etas = brightness / dynamics.cycle_rate
        if np.any(etas > 1) or np.any(etas < 0):
            raise ValueError("brightness exceeds the emitter cycle rate")
    g = rng.generator(seed, rng.PHOTONICS, *stream_index)
    warmup = 20.0 * (1.0 / dynamics.pump_rate + dynamics.excited_lifetime) if dynamics.pump_rate else 0.0
    parts = [_emitter_times(g, dynamics, float(e), duration, warmup) for e in etas]
    nb = g.poisson(background_rate * duration / NS_PER_S)
    parts.append(g.uniform(0.0, duration, nb))
    times = np.concatenate(parts) if parts else np.zeros(0)
    to_a = g.random(len(times)) < 0.5
    if jitter > 0:
        times = times + g.normal(0.0, jitter, len(times))
        inside = (times >= 0) & (times <= duration)
        times, to_a = times[inside], to_a[inside]
    a = np.sort(times[to_a])
    b = np.sort(times[~to_a])
    signal = float(etas.sum() * dynamics.cycle_rate)
    return PhotonEventStream(a, b, float(duration), signal, float(background_rate),
                             meta={"n_emitters": int(n_emitters), "jitter_ns": float(jitter)})


@dataclass
class CorrelationHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    normalization_factor: float
    rho: float
    duration: float = 0.0
    n_a: int = 0
    n_b: int = 0

    @property
    def tau(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.normalization_factor

    @property
    def zero_bin(self) -> int:
        return len(self.counts) // 2


@njit(cache=True, nogil=True)
def _delay_histogram(a, b, window, bin_width, nbins):
    """Histogram of b_j - a_i over all pairs with |b_j - a_i| < window (both sorted)."""
    counts = np.zeros(nbins, dtype=np.int64)
    lo = 0
    nb = b.shape[0]
    for i in range(a.shape[0]):
        t = a[i]
        while lo < nb and b[lo] <= t - window:
            lo += 1
        j = lo
        while j < nb and b[j] < t + window:
            k = int(math.floor((b[j] - t + window) / bin_width))
            if 0 <= k < nbins:
                counts[k] += 1
            j += 1
    return counts


def correlate(stream: PhotonEventStream, bin_width: float = 1.0, max_tau: float = 200.0) -> CorrelationHistogram:
    """All-pairs A->B delay histogram over |tau| <= max_tau, bins centred on multiples of bin_width."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if not max_tau >= bin_width:
        raise ValueError("max_tau must be at least bin_width")
    a, b = stream.detector_a_times, stream.detector_b_times
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty stream: both detectors need at least one event")
    nb = int(math.floor(max_tau / bin_width + 1e-9))
    edges = (np.arange(-nb, nb + 2) - 0.5) * bin_width
    window = (nb + 0.5) * bin_width
    counts = _delay_histogram(np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(b, dtype=float),
                              window, float(bin_width), 2 * nb + 1)
    norm = len(a) * len(b) * bin_width / stream.duration
    return CorrelationHistogram(edges, counts, float(norm), float(stream.rho), stream.duration,
                                len(a), len(b))
