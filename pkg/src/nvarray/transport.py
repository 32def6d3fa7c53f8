"""Binary-collision Monte Carlo transport of implanted ions.

Amorphous-target model: an ion alternates free flights of one mean atomic
spacing with binary collisions against a partner drawn from the local
stoichiometry. Electronic loss is applied continuously along each flight and
recoils are not followed; each collision's damage is tallied with the modified
Kinchin-Pease estimate at the collision site.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .materials import (C12, N14, COULOMB_EV_NM, Element, LayerStack, Material,
                        lss_coefficient, zbl_screening_length)
from .mask import ApertureMask, EntryPoints, sample_entry_points, sample_masked_entries
from .scattering import DEFAULT_QUADRATURE_ORDER, mehler_nodes, sin2_half_magic, theta_gauss_mehler

RESTED = 0
EXITED = 1
RUNAWAY = 2

_NUDGE = 1e-9  # nm past a layer boundary


class NonterminatingHistory(RuntimeError):
    pass


@dataclass(frozen=True)
class TransportConfig:
    quadrature_order: int = DEFAULT_QUADRATURE_ORDER
    fast_path: bool = False
    # None: stop at the local displacement energy
    stop_energy_ev: float | None = None
    max_collisions: int = 1_000_000
    max_histories: int = 10_000_000
    record_vacancy_sites: bool = True
    chunk_size: int = 256

    def __post_init__(self):
        if self.quadrature_order < 2 or self.quadrature_order % 2:
            raise ValueError("quadrature_order must be an even integer >= 2")
        if self.stop_energy_ev is not None and not self.stop_energy_ev > 0:
            raise ValueError("stop_energy_ev must be positive")
        if self.max_collisions < 1:
            raise ValueError("max_collisions must be >= 1")
        if self.max_histories < 1:
            raise ValueError("max_histories must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass(frozen=True)
class IonState:
    species: Element
    energy: float  # keV
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if self.energy < 0:
            raise ValueError("energy must be non-negative")


# ---------------------------------------------------------------------------
# kernel

@njit(cache=True)
def _rotate(ux, uy, uz, psi, phi):
    cp = math.cos(psi)
    sp = math.sin(psi)
    # orthonormal frame (e1, e2) perpendicular to u
    if abs(uz) < 0.99:
        n = math.sqrt(ux * ux + uy * uy)
        e1x, e1y, e1z = -uy / n, ux / n, 0.0
    else:
        n = math.sqrt(uy * uy + uz * uz)
        e1x, e1y, e1z = 0.0, uz / n, -uy / n
    e2x = uy * e1z - uz * e1y
    e2y = uz * e1x - ux * e1z
    e2z = ux * e1y - uy * e1x
    c = math.cos(phi)
    s = math.sin(phi)
    vx = cp * ux + sp * (c * e1x + s * e2x)
    vy = cp * uy + sp * (c * e1y + s * e2y)
    vz = cp * uz + sp * (c * e1z + s * e2z)
    n = math.sqrt(vx * vx + vy * vy + vz * vz)
    return vx / n, vy / n, vz / n


@njit(cache=True)
def _kinchin_pease(t, ed):
    if t < ed:
        return 0
    if t < 2.5 * ed:
        return 1
    return int(0.8 * t / (2.0 * ed))


@njit(cache=True, nogil=True)
def _run_histories(e0, x0, y0, ux0, uy0, uz0, keys,
                   top, bottom, flight, pmax, se, ed, eb, coff, cn,
                   cum, epsf, anm, gam, mrat,
                   nodes_u, nodes_s, fast, stop_ev, max_coll, record_sites):
    n = x0.shape[0]
    status = np.zeros(n, np.int8)
    fx = np.zeros(n)
    fy = np.zeros(n)
    fz = np.zeros(n)
    e_res = np.zeros(n)
    e_el = np.zeros(n)
    e_rec = np.zeros(n)
    e_bind = np.zeros(n)
    path = np.zeros(n)
    ncoll = np.zeros(n, np.int64)
    nvac = np.zeros(n, np.int64)
    transmitted = np.zeros(n, np.bool_)
    cap = 64 * n + 64 if record_sites else 1
    s_ion = np.empty(cap, np.int64)
    s_xyz = np.empty((cap, 3))
    s_cnt = np.empty(cap, np.int32)
    ns = 0
    nl = top.shape[0]
    state = np.zeros(1, np.uint64)

    for i in range(n):
        state[0] = keys[i]
        x, y, z = x0[i], y0[i], 0.0
        ux, uy, uz = ux0[i], uy0[i], uz0[i]
        e = e0
        lay = 0
        first = True
        k = 0
        st = RESTED
        while True:
            length = flight[lay]
            if first:
                # random entry phase relative to the first collision
                length *= 1.0 - rng.next_uniform(state)
                first = False
            crossed = 0
            zn = z + length * uz
            if zn > bottom[lay]:
                length = (bottom[lay] - z) / uz + _NUDGE
                crossed = 1
            elif zn < top[lay]:
                length = (top[lay] - z) / uz + _NUDGE
                crossed = -1
            de = se[lay] * math.sqrt(e) * length
            if de > e:
                de = e
            e -= de
            e_el[i] += de
            x += length * ux
            y += length * uy
            z += length * uz
            path[i] += length
            if crossed == -1:
                if lay == 0:
                    st = EXITED
                    break
                lay -= 1
                continue
            if crossed == 1:
                lay += 1
                if lay == nl - 1 and nl > 1:
                    transmitted[i] = True
                continue
            thr = stop_ev if stop_ev > 0.0 else ed[lay]
            if e < thr:
                break

            # collision partner from the local stoichiometry
            u = rng.next_uniform(state)
            j = coff[lay]
            last = coff[lay] + cn[lay] - 1
            while j < last and u >= cum[j]:
                j += 1
            b = pmax[lay] * math.sqrt(rng.next_uniform(state)) / anm[j]
            phi = 2.0 * math.pi * rng.next_uniform(state)
            eps = epsf[j] * e
            if fast:
                s2 = sin2_half_magic(eps, b)
                theta = 2.0 * math.asin(math.sqrt(s2))
            else:
                theta = theta_gauss_mehler(eps, b, nodes_u, nodes_s)
                s2 = math.sin(0.5 * theta) ** 2
            t = gam[j] * e * s2
            e -= t
            nu = _kinchin_pease(t, ed[lay])
            if nu > 0:
                bind = min(eb[lay], t)
                e_bind[i] += bind
                e_rec[i] += t - bind
                nvac[i] += nu
                if record_sites:
                    if ns == cap:
                        cap *= 2
                        a = np.empty(cap, np.int64)
                        a[:ns] = s_ion[:ns]
                        s_ion = a
                        bxyz = np.empty((cap, 3))
                        bxyz[:ns] = s_xyz[:ns]
                        s_xyz = bxyz
                        c = np.empty(cap, np.int32)
                        c[:ns] = s_cnt[:ns]
                        s_cnt = c
                    s_ion[ns] = i
                    s_xyz[ns, 0] = x
                    s_xyz[ns, 1] = y
                    s_xyz[ns, 2] = z
                    s_cnt[ns] = nu
                    ns += 1
            else:
                e_rec[i] += t
            psi = math.atan2(math.sin(theta), mrat[j] + math.cos(theta))
            ux, uy, uz = _rotate(ux, uy, uz, psi, phi)
            k += 1
            if e < thr:
                break
            if k > max_coll:
                st = RUNAWAY
                break
        status[i] = st
        fx[i] = x
        fy[i] = y
        fz[i] = z
        e_res[i] = e
        ncoll[i] = k
    return (status, fx, fy, fz, e_res, e_el, e_rec, e_bind, path, ncoll, nvac, transmitted,
            s_ion[:ns].copy(), s_xyz[:ns].copy(), s_cnt[:ns].copy())


# ---------------------------------------------------------------------------
# python-side setup

def _stack_arrays(stack: LayerStack, ion: Element):
    mats = stack.materials
    bounds = stack.boundaries
    top = bounds.copy()
    bottom = np.append(bounds[1:], np.inf)
    nd = np.array([m.atoms_per_nm3 for m in mats])
    flight = nd ** (-1.0 / 3.0)
    pmax = 1.0 / np.sqrt(np.pi * nd ** (2.0 / 3.0))
    # eV/nm per sqrt(eV)
    se = np.array([sum(f * lss_coefficient(ion, el) for el, f in m.components) for m in mats])
    se = se * 1e-15 * nd * 1e21 * 1e-7 / math.sqrt(1000.0)
    ed = np.array([m.displacement_energy for m in mats])
    eb = np.array([m.binding_energy for m in mats])
    coff, cn, cum, epsf, anm, gam, mrat = [], [], [], [], [], [], []
    for m in mats:
        coff.append(len(cum))
        cn.append(len(m.components))
        acc = 0.0
        for el, f in m.components:
            acc += f
            a = zbl_screening_length(ion.atomic_number, el.atomic_number)
            cum.append(acc)
            anm.append(a)
            epsf.append(a * el.atomic_mass / (ion.atomic_mass + el.atomic_mass)
                        / (ion.atomic_number * el.atomic_number * COULOMB_EV_NM))
            gam.append(4 * ion.atomic_mass * el.atomic_mass / (ion.atomic_mass + el.atomic_mass) ** 2)
            mrat.append(ion.atomic_mass / el.atomic_mass)
        cum[-1] = 1.0
    as_f = lambda v: np.asarray(v, dtype=np.float64)
    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return (top, bottom, flight, pmax, se, ed, eb, as_i(coff), as_i(cn),
            as_f(cum), as_f(epsf), as_f(anm), as_f(gam), as_f(mrat))


@dataclass
class HistoryBatch:
    """Per-ion outcomes of a batch of histories, in input order."""

    status: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    residual_energy: np.ndarray  # eV
    electronic_loss: np.ndarray  # eV
    recoil_energy: np.ndarray  # eV
    binding_loss: np.ndarray  # eV
    path_length: np.ndarray  # nm
    collisions: np.ndarray
    vacancies: np.ndarray  # per-ion Kinchin-Pease total
    transmitted: np.ndarray
    site_ion: np.ndarray  # vacancy sites: owning ion index, position, multiplicity
    site_xyz: np.ndarray
    site_count: np.ndarray

    def __len__(self):
        return len(self.status)

    @property
    def rested(self) -> np.ndarray:
        return self.status == RESTED


def run_histories(stack: LayerStack, ion: Element, energy: float, x, y, keys,
                  config: TransportConfig = TransportConfig(), threads: int = 1,
                  direction=(0.0, 0.0, 1.0)) -> HistoryBatch:
    """Follow one ion per (x, y, key) from the surface of ``stack``.

    ``energy`` is in keV. Work is chunked over threads; chunk outputs are merged
    in ion order so results are independent of ``threads``.
    """
    if not energy > 0:
        raise ValueError("energy must be positive")
    if direction[2] <= 0:
        raise ValueError("ion must move into the target")
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    n = len(x)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    arrays = _stack_arrays(stack, ion)
    stop = config.stop_energy_ev or 0.0
    nodes = mehler_nodes(config.quadrature_order)

    def work(lo):
        hi = min(lo + config.chunk_size, n)
        out = _run_histories(energy * 1e3, x[lo:hi], y[lo:hi],
                             np.full(hi - lo, d[0]), np.full(hi - lo, d[1]), np.full(hi - lo, d[2]),
                             keys[lo:hi], *arrays, *nodes, config.fast_path,
                             stop, config.max_collisions, config.record_vacancy_sites)
        return lo, out

    starts = range(0, n, config.chunk_size)
    if threads > 1 and n > config.chunk_size:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    if not parts:
        parts = [(0, _run_histories(energy * 1e3, x, y, x, x, x, keys, *arrays,
                                    *nodes, config.fast_path, stop,
                                    config.max_collisions, config.record_vacancy_sites))]
    cols = list(zip(*(p[1] for p in parts)))
    merged = [np.concatenate(c) for c in cols[:12]]
    site_ion = np.concatenate([p[1][12] + p[0] for p in parts])
    site_xyz = np.concatenate([p[1][13] for p in parts]).reshape(-1, 3)
    site_count = np.concatenate([p[1][14] for p in parts])
    batch = HistoryBatch(*merged, site_ion, site_xyz, site_count)
    if np.any(batch.status == RUNAWAY):
        raise NonterminatingHistory(
            f"history exceeded {config.max_collisions} collisions; check the configuration")
    return batch


@dataclass
class IonHistory:
    exited: bool
    final_position: tuple[float, float, float]
    residual_energy: float  # eV
    electronic_loss: float
    recoil_energy: float
    binding_loss: float
    path_length: float
    collisions: int
    vacancies: int
    vacancy_sites: np.ndarray  # (k, 3)
    vacancy_counts: np.ndarray
    transmitted: bool


def simulate_ion(stack: LayerStack, entry: IonState, key: int,
                 config: TransportConfig = TransportConfig()) -> IonHistory:
    """Single history from ``entry``; ``key`` is the 64-bit stream key of this ion."""
    if entry.position[2] != 0.0:
        raise ValueError("entry must sit on the surface (z = 0)")
    b = run_histories(stack, entry.species, entry.energy, [entry.position[0]], [entry.position[1]],
                      np.array([key], dtype=np.uint64), config, direction=entry.direction)
    return IonHistory(
        exited=bool(b.status[0] == EXITED),
        final_position=(float(b.x[0]), float(b.y[0]), float(b.z[0])),
        residual_energy=float(b.residual_energy[0]),
        electronic_loss=float(b.electronic_loss[0]),
        recoil_energy=float(b.recoil_energy[0]),
        binding_loss=float(b.binding_loss[0]),
        path_length=float(b.path_length[0]),
        collisions=int(b.collisions[0]),
        vacancies=int(b.vacancies[0]),
        vacancy_sites=b.site_xyz,
        vacancy_counts=b.site_count,
        transmitted=bool(b.transmitted[0]),
    )


def split_molecule(total_energy: float, masses: tuple[float, float]) -> tuple[float, float]:
    """Equal-velocity break-up: each fragment keeps its mass share of the energy."""
    m1, m2 = masses
    if not (total_energy > 0 and m1 > 0 and m2 > 0):
        raise ValueError("energy and masses must be positive")
    e1 = total_energy * m1 / (m1 + m2)
    return e1, total_energy - e1


# ---------------------------------------------------------------------------
# implantation through a mask

@dataclass(frozen=True)
class SpeciesPlan:
    """A diatomic beam that splits into two fragments at the surface."""

    molecule_energy: float = 40.0  # keV
    fragments: tuple[Element, Element] = (N14, C12)
    simulate_second: bool = True
    masked_histories: int = 1000

    def __post_init__(self):
        if not self.molecule_energy > 0:
            raise ValueError("molecule_energy must be positive")
        if self.masked_histories < 0:
            raise ValueError("masked_histories must be non-negative")

    @property
    def energies(self) -> tuple[float, float]:
        a, b = self.fragments
        return split_molecule(self.molecule_energy, (a.atomic_mass, b.atomic_mass))


@dataclass
class ImplantResult:
    """Rest positions and damage of every simulated ion.

    Rows of ``rests`` are ordered by (species slot, ion index). Masked ions carry
    aperture index (-1, -1) and their z is measured from the resist top; open
    ions' z is measured from the substrate surface.
    """

    species: np.ndarray  # atomic number
    row: np.ndarray
    col: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    masked: np.ndarray
    vac_row: np.ndarray
    vac_col: np.ndarray
    vac_xyz: np.ndarray
    vac_count: np.ndarray
    vac_species: np.ndarray
    grid: tuple[int, int] = (0, 0)
    aperture_vacancies: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    ions_in: int = 0
    exited_count: int = 0
    transmitted_through_resist_count: int = 0
    masked_ions: int = 0
    vacancies_total: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def n_rests(self) -> int:
        return len(self.z)

    @classmethod
    def empty(cls, grid=(0, 0)) -> "ImplantResult":
        zi = np.zeros(0, dtype=np.int64)
        zf = np.zeros(0)
        return cls(zi, zi, zi, zf, zf, zf, np.zeros(0, bool), zi, zi, np.zeros((0, 3)),
                   np.zeros(0, np.int32), zi, grid=grid,
                   aperture_vacancies=np.zeros(grid[0] * grid[1], dtype=np.int64))


def _batch_stats(b: HistoryBatch, x0, y0) -> dict:
    if len(b) == 0:
        return {"histories": 0}
    r = b.rested
    z = b.z[r]
    lateral = np.sqrt(0.5 * np.mean((b.x[r] - x0[r]) ** 2 + (b.y[r] - y0[r]) ** 2)) if r.any() else None
    return {
        "histories": int(len(b)),
        "rested": int(r.sum()),
        "exited": int((~r).sum()),
        "mean_depth_nm": float(z.mean()) if r.any() else None,
        "longitudinal_straggle_nm": float(z.std()) if r.any() else None,
        "lateral_straggle_nm": None if lateral is None else float(lateral),
        "mean_path_nm": float(b.path_length.mean()),
        "mean_collisions": float(b.collisions.mean()),
        "vacancies_per_ion": float(b.vacancies.mean()),
    }


def implant(stack: LayerStack, mask: ApertureMask, fluence: float, species_plan: SpeciesPlan,
            seed: int, config: TransportConfig = TransportConfig(), threads: int = 1) -> ImplantResult:
    """Implant the split molecule through ``mask``.

    ``stack`` is the masked target (resist layer over substrate); ions entering
    an opening see the bare substrate. In addition to the dose-realised entries,
    ``species_plan.masked_histories`` ions are launched at random masked points to
    measure resist blocking.
    """
    if len(stack.layers) != 1:
        raise ValueError("masked stack must be exactly one resist layer over the substrate")
    if not math.isclose(stack.layers[0][1], mask.resist_thickness):
        raise ValueError("resist layer thickness disagrees with the mask")
    entries = sample_entry_points(mask, fluence, seed)
    n_open = len(entries)
    n_masked = species_plan.masked_histories if fluence > 0 else 0
    slots = 2 if species_plan.simulate_second else 1
    total = slots * (n_open + n_masked)
    if total > config.max_histories:
        raise ValueError(f"{total} histories exceed max_histories={config.max_histories}")
    grid = (mask.rows, mask.cols)
    if total == 0:
        return ImplantResult.empty(grid)
    open_stack = LayerStack((), stack.substrate)
    mx, my = sample_masked_entries(mask, n_masked, seed)
    keys = rng.stream_keys(seed, rng.TRANSPORT, total)
    energies = species_plan.energies

    parts = []
    stats = {}
    apv = np.zeros(mask.n_apertures, dtype=np.int64)
    lin = entries.row * mask.cols + entries.col
    exited = transmitted = vac_total = 0
    offset = 0
    for slot in range(slots):
        ion = species_plan.fragments[slot]
        e = energies[slot]
        bo = run_histories(open_stack, ion, e, entries.x, entries.y,
                           keys[offset:offset + n_open], config, threads)
        offset += n_open
        bm = run_histories(stack, ion, e, mx, my, keys[offset:offset + n_masked], config, threads)
        offset += n_masked
        stats[f"{ion.symbol}_open"] = _batch_stats(bo, entries.x, entries.y)
        stats[f"{ion.symbol}_masked"] = _batch_stats(bm, mx, my)
        stats[f"{ion.symbol}_energy_kev"] = e
        exited += int((~bo.rested).sum() + (~bm.rested).sum())
        transmitted += int(bm.transmitted.sum())
        vac_total += int(bo.vacancies.sum() + bm.vacancies.sum())
        np.add.at(apv, lin, bo.vacancies)
        for b, row, col, masked in ((bo, entries.row, entries.col, False),
                                    (bm, np.full(n_masked, -1), np.full(n_masked, -1), True)):
            r = b.rested
            parts.append(dict(
                species=np.full(int(r.sum()), ion.atomic_number), row=row[r], col=col[r],
                x=b.x[r], y=b.y[r], z=b.z[r], masked=np.full(int(r.sum()), masked),
                vac_row=row[b.site_ion], vac_col=col[b.site_ion], vac_xyz=b.site_xyz,
                vac_count=b.site_count, vac_species=np.full(len(b.site_ion), ion.atomic_number),
            ))
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    cat["vac_xyz"] = cat["vac_xyz"].reshape(-1, 3)
    return ImplantResult(**cat, grid=grid, aperture_vacancies=apv, ions_in=total, exited_count=exited,
                         transmitted_through_resist_count=transmitted, masked_ions=slots * n_masked,
                         vacancies_total=vac_total, stats=stats)


@dataclass
class DepthProfile:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_depth: float
    longitudinal_straggle: float
    lateral_straggle: float

    @property
    def mode(self) -> float:
        k = int(np.argmax(self.counts))
        return 0.5 * (self.bin_edges[k] + self.bin_edges[k + 1])


def profile_from_positions(x, y, z, bin_width: float, lateral_origin=None) -> DepthProfile:
    """Histogram of depths with moments from the raw values.

    Lateral straggle is the rms of the per-axis displacement from
    ``lateral_origin`` (per-point x/y arrays); without it, from the mean.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("no rest positions to profile")
    lo = math.floor(z.min() / bin_width) * bin_width
    nb = max(1, math.ceil((z.max() - lo) / bin_width + 1e-12))
    if lo + nb * bin_width <= z.max():
        nb += 1
    edges = lo + bin_width * np.arange(nb + 1)
    counts, _ = np.histogram(z, edges)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if lateral_origin is None:
        dx, dy = x - x.mean(), y - y.mean()
    else:
        dx, dy = x - lateral_origin[0], y - lateral_origin[1]
    lateral = float(np.sqrt(0.5 * np.mean(dx ** 2 + dy ** 2)))
    return DepthProfile(edges, counts, float(z.mean()), float(z.std()), lateral)


def depth_profile(result: ImplantResult, species: int | None = None, bin_width: float = 2.0,
                  masked: bool = False) -> DepthProfile:
    """Depth profile of ions at rest, filtered by atomic number and mask region."""
    sel = result.masked == masked
    if species is not None:
        sel &= result.species == species
    return profile_from_positions(result.x[sel], result.y[sel], result.z[sel], bin_width)
