"""Command-line entry point: ``nvarray <stage|run> --config FILE``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .analysis import FitFailure, background_correct, estimate_count, is_single_emitter, single_emitter_intensity
from .config import ConfigError, PipelineConfig, load_config
from .photonics import PhotonEventStream, correlate
from .pipeline import STAGES, StageError, run_pipeline, run_stage

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_USAGE = 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file (defaults apply if omitted)")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="run directory")
    common.add_argument("--threads", type=int, help="worker threads; affects speed only")
    common.add_argument("--histories", type=int, help="cap on the number of transport histories")
    p = argparse.ArgumentParser(prog="nvarray", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every stage")
    for name in STAGES:
        sp = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "analyze":
            sp.add_argument("--timestamps", type=Path, nargs="+",
                            help="standalone mode: timestamp CSV files (channel,t_ns)")
            sp.add_argument("--signal-to-background", type=float,
                            help="S/B for standalone mode (default: photonics.signal_to_background)")
            sp.add_argument("--single-rate", type=float,
                            help="single-emitter rate in counts/s for standalone mode")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def _effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    try:
        if args.seed is not None:
            cfg = cfg.replace("run", seed=args.seed)
        if args.out is not None:
            cfg = cfg.replace("run", out=str(args.out))
        if args.threads is not None:
            cfg = cfg.replace("run", threads=args.threads)
        if args.histories is not None:
            cfg = cfg.replace("transport", max_histories=args.histories)
    except ValueError as exc:
        raise ConfigError(f"invalid command-line override: {exc}", None, "<command line>") from None
    return cfg


def analyze_timestamps(cfg: PipelineConfig, paths, signal_to_background=None, single_rate=None) -> list[dict]:
    """Standalone analysis of measured timestamp files, one spot per file."""
    p = cfg.photonics
    sbr = p.signal_to_background if signal_to_background is None else signal_to_background
    if not sbr > 0:
        raise ValueError("signal-to-background must be positive")
    rho = sbr / (1.0 + sbr)
    spots = []
    for path in paths:
        a, b, duration = io.read_timestamps(path)
        stream = PhotonEventStream(a, b, duration)
        try:
            hist = correlate(stream, p.bin_width_ns, p.max_tau_ns)
            curve = background_correct(hist, rho=rho)
        except (ValueError, FitFailure):
            curve = None
        spots.append((str(path), stream.measured_rate, curve))
    source = "command line"
    if single_rate is None:
        try:
            single_rate = single_emitter_intensity([s[1] * rho for s in spots], [s[2] for s in spots],
                                                   cfg.analysis.single_emitter_sigma)
            source = "mode of g2-classified single spots"
        except ValueError:
            single_rate = cfg.formation.single_emitter_rate_cps
            source = "formation.single_emitter_rate_cps"
    out = []
    for path, rate, curve in spots:
        e = estimate_count(curve, rate, single_rate, rate * (1.0 - rho), cfg.analysis.g2_error_limit)
        out.append({"file": path, "n_hat": e.n_hat, "method": e.method, "confidence": e.confidence,
                    "n_g2": e.n_g2, "n_intensity": e.n_intensity, "g2_zero": e.g2_zero,
                    "g2_zero_error": e.g2_zero_error, "single_emitter": bool(curve and is_single_emitter(curve)),
                    "rho": rho, "single_emitter_intensity_cps": single_rate,
                    "single_emitter_intensity_source": source, "flags": e.flags})
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg.run.out)
    try:
        if args.command == "config":
            from .config import dump_config
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if args.command == "analyze" and args.timestamps:
            res = analyze_timestamps(cfg, args.timestamps, args.signal_to_background, args.single_rate)
            out.mkdir(parents=True, exist_ok=True)
            io.write_json(out / "standalone_estimates.json", res)
            json.dump(io._clean(res), sys.stdout, indent=1, sort_keys=True)
            sys.stdout.write("\n")
            return EXIT_OK
        if args.command == "run":
            summary = run_pipeline(cfg, out, cfg.run.threads)
            print(f"wrote {out}; mle_mean={summary['mle_mean']!r} yield={summary['yield']!r}")
        else:
            run_stage(args.command, cfg, out, cfg.run.threads)
            print(f"{args.command}: wrote {out}")
    except (FileNotFoundError, io.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
