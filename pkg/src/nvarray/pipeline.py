"""Pipeline stages. Each stage reads its inputs from, and writes its outputs to, the run directory."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import __version__, io
from .analysis import (FitFailure, background_correct, estimate_count, fit_poisson, is_single_emitter,
                       yield_from_statistics)
from .config import PipelineConfig, dump_config
from .formation import NV_MINUS, SpotPopulation, form_nv
from .imaging import ScanImage, detect_spots, lattice_pitch, match_to_apertures, render_scan
from .mask import expected_ions_per_aperture
from .photonics import CorrelationHistogram, correlate, simulate_stream
from .transport import ImplantResult, implant

STAGES = ("implant", "form", "scan", "hbt", "analyze")

ESTIMATOR_RULE = ("n_hat = round(signal intensity / single-emitter intensity); "
                  "g2 estimate round(1/(1-g2(0))) is compared and the spot flagged discrepant "
                  "when both are precise and differ by more than one")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage} failed: {exc}")


IMPLANT_COLUMNS = {"species_z": int, "row": int, "col": int, "masked": int,
                   "x_nm": float, "y_nm": float, "z_nm": float}
SITE_COLUMNS = {"species_z": int, "row": int, "col": int, "x_nm": float, "y_nm": float, "z_nm": float,
                "count": int}
SPOT_COLUMNS = {"row": int, "col": int, "n_implanted": int, "n_emitters": int, "n_nv_minus": int,
                "n_nv0": int, "brightness_cps": float}
EMITTER_COLUMNS = {"row": int, "col": int, "x_nm": float, "y_nm": float, "z_nm": float, "charge": str,
                   "brightness_cps": float}
DETECTION_COLUMNS = {"x_nm": float, "y_nm": float, "row": int, "col": int, "flux_cps": float}
G2_COLUMNS = {"tau_ns": float, "counts": int, "normalized": float}


def _poisson_record(fit) -> dict:
    return {"n": fit.n, "mle_mean": fit.mle_mean, "chi_square": fit.chi_square, "dof": fit.dof,
            "p_value": fit.p_value, "degenerate": fit.degenerate}


# ---------------------------------------------------------------------------

def stage_implant(cfg: PipelineConfig, out: Path, threads: int = 1) -> ImplantResult:
    mask = cfg.aperture_mask()
    tcfg = cfg.transport_config()
    res = implant(cfg.layer_stack(), mask, cfg.implant.fluence_per_cm2, cfg.species_plan(),
                  cfg.run.seed, tcfg, threads)
    io.write_csv(out / "implant.csv", list(IMPLANT_COLUMNS),
                 zip(res.species, res.row, res.col, res.masked, res.x, res.y, res.z))
    r, c = mask.aperture_indices()
    io.write_csv(out / "vacancies.csv", ["row", "col", "vacancies"], zip(r, c, res.aperture_vacancies))
    if tcfg.record_vacancy_sites:
        xyz = res.vac_xyz.reshape(-1, 3)
        io.write_csv(out / "vacancy_sites.csv", list(SITE_COLUMNS),
                     zip(res.vac_species, res.vac_row, res.vac_col, xyz[:, 0], xyz[:, 1], xyz[:, 2],
                         res.vac_count))
    io.write_json(out / "implant.json", {
        "grid": list(res.grid),
        "ions_in": res.ions_in,
        "exited": res.exited_count,
        "masked_ions": res.masked_ions,
        "transmitted_through_resist": res.transmitted_through_resist_count,
        "vacancies_total": res.vacancies_total,
        "vacancy_sites_recorded": tcfg.record_vacancy_sites,
        "expected_ions_per_aperture": expected_ions_per_aperture(mask, cfg.implant.fluence_per_cm2),
        "stats": res.stats,
    })
    return res


def read_implant(out: Path) -> ImplantResult:
    info = io.read_json(out / "implant.json")
    cols, _ = io.read_csv(out / "implant.csv", IMPLANT_COLUMNS)
    vac, _ = io.read_csv(out / "vacancies.csv", {"row": int, "col": int, "vacancies": int})
    grid = tuple(info["grid"])
    kw = dict(species=np.array(cols["species_z"], dtype=np.int64), row=np.array(cols["row"], dtype=np.int64),
              col=np.array(cols["col"], dtype=np.int64), x=np.array(cols["x_nm"], dtype=float),
              y=np.array(cols["y_nm"], dtype=float), z=np.array(cols["z_nm"], dtype=float),
              masked=np.array(cols["masked"], dtype=bool))
    if info.get("vacancy_sites_recorded"):
        s, _ = io.read_csv(out / "vacancy_sites.csv", SITE_COLUMNS)
        xyz = np.column_stack([s["x_nm"], s["y_nm"], s["z_nm"]]) if s["count"] else np.zeros((0, 3))
        kw.update(vac_row=np.array(s["row"], dtype=np.int64), vac_col=np.array(s["col"], dtype=np.int64),
                  vac_xyz=xyz, vac_count=np.array(s["count"], dtype=np.int32),
                  vac_species=np.array(s["species_z"], dtype=np.int64))
    else:
        zi = np.zeros(0, dtype=np.int64)
        kw.update(vac_row=zi, vac_col=zi, vac_xyz=np.zeros((0, 3)), vac_count=np.zeros(0, np.int32),
                  vac_species=zi)
    return ImplantResult(**kw, grid=grid, aperture_vacancies=np.array(vac["vacancies"], dtype=np.int64),
                         ions_in=info["ions_in"], exited_count=info["exited"],
                         transmitted_through_resist_count=info["transmitted_through_resist"],
                         masked_ions=info["masked_ions"], vacancies_total=info["vacancies_total"],
                         stats=info["stats"])


def stage_form(cfg: PipelineConfig, out: Path) -> list[SpotPopulation]:
    res = read_implant(out)
    pops = form_nv(res, cfg.yield_model(), cfg.run.seed)
    io.write_csv(out / "spots.csv", list(SPOT_COLUMNS), (
        (p.row, p.col, p.n_implanted, p.n_emitters, sum(c == NV_MINUS for c in p.charge),
         sum(c != NV_MINUS for c in p.charge), p.total_brightness) for p in pops))
    io.write_csv(out / "emitters.csv", list(EMITTER_COLUMNS), (
        (p.row, p.col, x, y, z, ch, b) for p in pops
        for x, y, z, ch, b in zip(p.x, p.y, p.z, p.charge, p.brightness)))
    counts = np.array([p.n_emitters for p in pops], dtype=np.int64)
    info = {"apertures": len(pops), "emitters_total": int(counts.sum()),
            "mean_emitters": float(counts.mean()) if len(counts) else None,
            "poisson": _poisson_record(fit_poisson(counts)) if len(counts) else None}
    io.write_json(out / "formation.json", info)
    return pops


def read_emitters(out: Path):
    spots, _ = io.read_csv(out / "spots.csv", SPOT_COLUMNS)
    em, _ = io.read_csv(out / "emitters.csv", EMITTER_COLUMNS)
    return spots, em


def stage_scan(cfg: PipelineConfig, out: Path) -> ScanImage:
    _, em = read_emitters(out)
    mask = cfg.aperture_mask()
    im = cfg.imaging
    img = render_scan(np.column_stack([em["x_nm"], em["y_nm"]]) if em["x_nm"] else np.zeros((0, 2)),
                      np.array(em["brightness_cps"], dtype=float), im.psf_sigma_nm, cfg.background_rate_cps,
                      im.pixel_size_nm, mask.extent, im.noise, im.dwell_time_s, cfg.run.seed)
    io.write_matrix_csv(out / "scan.csv", img.data)
    io.write_pgm(out / "scan.pgm", img.data)
    bg = float(np.median(img.data))
    spots = detect_spots(img, im.threshold, bg)
    # background-subtracted integrated flux around each detection
    w = cfg.analysis.flux_window_px
    xc, yc = img.pixel_centres()
    ny, nx = img.shape
    px_per_psf = img.pixel_size ** 2 / (2 * math.pi * im.psf_sigma_nm ** 2)
    flux = []
    for x, y in spots:
        j = int(np.argmin(np.abs(xc - x)))
        i = int(np.argmin(np.abs(yc - y)))
        box = img.data[max(i - w, 0):min(i + w + 1, ny), max(j - w, 0):min(j + w + 1, nx)]
        flux.append(float((box - bg).sum() * px_per_psf))
    r, c = mask.aperture_indices()
    centres = np.column_stack(mask.center(r, c))
    hit = match_to_apertures(spots, centres, im.match_radius_nm)
    # aperture of each detection (nearest centre within the match radius)
    drow, dcol = [], []
    for x, y in spots:
        rr = int(round((y - mask.origin[1]) / mask.pitch))
        cc = int(round((x - mask.origin[0]) / mask.pitch))
        ok = 0 <= rr < mask.rows and 0 <= cc < mask.cols
        if ok:
            cx, cy = mask.center(rr, cc)
            ok = math.hypot(x - cx, y - cy) <= im.match_radius_nm
        drow.append(rr if ok else -1)
        dcol.append(cc if ok else -1)
    io.write_csv(out / "detections.csv", list(DETECTION_COLUMNS),
                 zip(spots[:, 0] if len(spots) else [], spots[:, 1] if len(spots) else [], drow, dcol, flux))
    pitch = pitch_err = None
    matched = spots[np.array(drow, dtype=int) >= 0] if len(spots) else spots
    if len(matched) >= 3 and len({int(v) for v in drow if v >= 0}) > 1 \
            and len({int(v) for v in dcol if v >= 0}) > 1:
        pitch, pitch_err = lattice_pitch(matched, mask.pitch, mask.origin)
    io.write_json(out / "scan.json", {
        "shape": list(img.shape), "pixel_size_nm": img.pixel_size, "origin_nm": list(img.origin),
        "median_background_cps": bg, "detected_spots": int(len(spots)),
        "matched_apertures": int(hit.sum()), "empty_aperture_fraction": float(1.0 - hit.mean()),
        "lattice_pitch_nm": pitch, "lattice_pitch_error_nm": pitch_err,
    })
    return img


def read_detections(out: Path):
    cols, _ = io.read_csv(out / "detections.csv", DETECTION_COLUMNS)
    return cols


def _hbt_targets(cfg: PipelineConfig, det) -> list[tuple[int, int]]:
    seen = sorted({(r, c) for r, c in zip(det["row"], det["col"]) if r >= 0})
    limit = cfg.photonics.hbt_max_spots
    return seen if limit < 0 else seen[:limit]


def stage_hbt(cfg: PipelineConfig, out: Path) -> list[dict]:
    det = read_detections(out)
    spots, em = read_emitters(out)
    cols = cfg.mask.cols
    bright: dict[tuple[int, int], list[float]] = {}
    for r, c, b in zip(em["row"], em["col"], em["brightness_cps"]):
        bright.setdefault((r, c), []).append(b)
    p = cfg.photonics
    dyn = cfg.dynamics()
    records = []
    for r, c in _hbt_targets(cfg, det):
        b = np.array(bright.get((r, c), []), dtype=float)
        stream = simulate_stream(len(b), dyn, cfg.background_rate_cps, p.acquisition_time_s * 1e9,
                                 cfg.run.seed, brightness=b, jitter=p.jitter_ns, stream_index=(r * cols + c,))
        if p.save_timestamps:
            io.write_timestamps(out / f"stream_{r}_{c}.csv", stream)
        rec = {"row": r, "col": c, "rho": stream.rho, "duration_ns": stream.duration,
               "signal_rate_cps": stream.signal_rate, "background_rate_cps": stream.background_rate,
               "measured_rate_cps": stream.measured_rate, "n_a": len(stream.detector_a_times),
               "n_b": len(stream.detector_b_times)}
        try:
            h = correlate(stream, p.bin_width_ns, p.max_tau_ns)
        except ValueError:
            h = None
        if h is not None:
            io.write_csv(out / f"g2_{r}_{c}.csv", list(G2_COLUMNS), zip(h.tau, h.counts, h.normalized))
            rec["normalization_factor"] = h.normalization_factor
        else:
            rec["normalization_factor"] = None
        records.append(rec)
    io.write_json(out / "hbt.json", records)
    return records


def histogram_from_csv(path, bin_width: float, normalization: float, rho: float,
                       duration: float = 0.0) -> CorrelationHistogram:
    cols, _ = io.read_csv(path, G2_COLUMNS)
    tau = np.array(cols["tau_ns"], dtype=float)
    if len(tau) < 3:
        raise io.FormatError(path, None, "histogram needs at least three bins")
    edges = np.concatenate([tau - 0.5 * bin_width, [tau[-1] + 0.5 * bin_width]])
    return CorrelationHistogram(edges, np.array(cols["counts"], dtype=np.int64), normalization, rho, duration)


def _curve_or_none(hist: CorrelationHistogram | None):
    if hist is None or not 0 < hist.rho <= 1:
        return None
    try:
        return background_correct(hist)
    except (ValueError, FitFailure):
        return None


def stage_analyze(cfg: PipelineConfig, out: Path) -> dict:
    mask = cfg.aperture_mask()
    det = read_detections(out)
    hbt = io.read_json(out / "hbt.json")
    p = cfg.photonics
    single = cfg.formation.single_emitter_rate_cps
    by_spot = {(d["row"], d["col"]): d for d in hbt}
    flux = {}
    for r, c, f in zip(det["row"], det["col"], det["flux_cps"]):
        if r >= 0:
            flux[(r, c)] = flux.get((r, c), 0.0) + f
    rows, cols = mask.aperture_indices()
    estimates = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        rec = by_spot.get((r, c))
        if rec is not None:
            hist = None
            if rec["normalization_factor"]:
                hist = histogram_from_csv(out / f"g2_{r}_{c}.csv", p.bin_width_ns, rec["normalization_factor"],
                                          rec["rho"], rec["duration_ns"])
            curve = _curve_or_none(hist)
            est = estimate_count(curve, rec["measured_rate_cps"], single, rec["background_rate_cps"],
                                 cfg.analysis.g2_error_limit, (r, c))
            if curve is not None and is_single_emitter(curve, cfg.analysis.single_emitter_sigma):
                est.flags.append("single-emitter")
        elif (r, c) in flux:
            est = estimate_count(None, flux[(r, c)], single, 0.0, cfg.analysis.g2_error_limit, (r, c))
        else:
            est = estimate_count(None, 0.0, single, 0.0, cfg.analysis.g2_error_limit, (r, c))
            est.flags = ["undetected", "below-threshold"]
        estimates.append(est)
    io.write_csv(out / "estimates.csv",
                 ["row", "col", "n_hat", "method", "confidence", "n_g2", "n_intensity", "g2_zero",
                  "g2_zero_error", "intensity_ratio", "flags"],
                 ((e.row, e.col, e.n_hat, e.method, e.confidence, "" if e.n_g2 is None else e.n_g2,
                   e.n_intensity, e.g2_zero, e.g2_zero_error, e.intensity_ratio, ";".join(e.flags))
                  for e in estimates))
    n_hat = np.array([e.n_hat for e in estimates], dtype=np.int64)
    fit = fit_poisson(n_hat)
    lam = expected_ions_per_aperture(mask, cfg.implant.fluence_per_cm2)
    yld = yield_from_statistics(fit.mle_mean, lam) if lam > 0 else None

    info = io.read_json(out / "implant.json")
    scan = io.read_json(out / "scan.json")
    form = io.read_json(out / "formation.json")
    n_open = info["stats"].get("N_open", {})
    summary = {
        "apertures": mask.n_apertures,
        "expected_ions_per_aperture": lam,
        "mle_mean": fit.mle_mean,
        "yield": yld,
        "poisson_fit": _poisson_record(fit),
        "degenerate_statistics": bool(fit.degenerate or fit.mle_mean == 0),
        "depth": {k: n_open.get(k) for k in ("mean_depth_nm", "longitudinal_straggle_nm", "lateral_straggle_nm")},
        "implanted_ions": info["ions_in"],
        "transmitted_through_resist_fraction":
            info["transmitted_through_resist"] / info["masked_ions"] if info["masked_ions"] else None,
        "emitters": {"total": form["emitters_total"], "mean_per_aperture": form["mean_emitters"],
                     "poisson_fit": form["poisson"]},
        "imaging": {k: scan[k] for k in ("detected_spots", "matched_apertures", "empty_aperture_fraction",
                                        "lattice_pitch_nm", "lattice_pitch_error_nm")},
        "hbt_spots": len(hbt),
        "discrepant_spots": sum("discrepant" in e.flags for e in estimates),
        "single_emitter_spots": sum("single-emitter" in e.flags for e in estimates),
        "estimates": [{"row": e.row, "col": e.col, "n_hat": e.n_hat, "method": e.method,
                       "confidence": e.confidence, "g2_zero": e.g2_zero} for e in estimates],
    }
    io.write_json(out / "summary.json", summary)
    return summary


def _portable(cfg: PipelineConfig) -> PipelineConfig:
    """Config with the run-location and thread settings reset; they never change results."""
    return cfg.replace("run", out=".", threads=1)


def write_metadata(cfg: PipelineConfig, out: Path) -> None:
    dyn = cfg.dynamics()
    cfg = _portable(cfg)
    io.write_json(out / "metadata.json", {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "derived": {
            "detection_efficiency": dyn.detection_efficiency,
            "emitter_cycle_rate_cps": dyn.cycle_rate,
            "antibunching_rate_per_ns": dyn.antibunching_rate,
            "background_rate_cps": cfg.background_rate_cps,
            "rho_single_emitter": 1.0 / (1.0 + 1.0 / cfg.photonics.signal_to_background),
            "nv_minus_fraction": cfg.formation.nv_minus_fraction,
            "expected_ions_per_aperture": expected_ions_per_aperture(cfg.aperture_mask(),
                                                                     cfg.implant.fluence_per_cm2),
            "vacancy_sites_recorded": cfg.transport_config().record_vacancy_sites,
        },
        "estimator": ESTIMATOR_RULE,
        "rho_source": "simulation metadata",
        "single_emitter_intensity_source": "formation.single_emitter_rate_cps",
    })
    (out / "config.toml").write_text(dump_config(cfg), encoding="utf-8")


def run_stage(name: str, cfg: PipelineConfig, out, threads: int = 1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fn = {"implant": lambda: stage_implant(cfg, out, threads), "form": lambda: stage_form(cfg, out),
          "scan": lambda: stage_scan(cfg, out), "hbt": lambda: stage_hbt(cfg, out),
          "analyze": lambda: stage_analyze(cfg, out)}[name]
    if name == "implant":
        write_metadata(cfg, out)
    try:
        return fn()
    except (FileNotFoundError, io.FormatError):
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, out=None, threads: int | None = None) -> dict:
    """All stages in order; returns the summary record."""
    out = Path(cfg.run.out if out is None else out)
    threads = cfg.run.threads if threads is None else threads
    for name in STAGES:
        result = run_stage(name, cfg, out, threads)
    return result
