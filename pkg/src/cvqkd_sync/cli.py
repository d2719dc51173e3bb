"""Command-line driver.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 every frame failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, io
from .config import ExperimentConfig, format_config, load_config
from .errors import InvalidConfig, InvalidParameter

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ALL_FAILED = 0, 1, 2, 3
DEFAULT_OFFSETS = (0, 1, 2, 5, 10, 25)
DEFAULT_SKEWS = (1.0, 1 + 1e-6, 1 + 5e-6, 1 + 2e-5)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.frames is not None:
        over["n_frames"] = args.frames
    if args.mode is not None:
        over["mode"] = args.mode
    if args.out is not None:
        over["output_dir"] = str(args.out)
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    return replace(cfg, **over) if over else cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    cal = harness.calibrate(cfg)
    out = _out(cfg)
    io.write_json(out / "calibration.json", {"seed": cfg.seed, "config_text": format_config(cfg), **cal.__dict__})
    print(f"shot noise {cal.shot_noise:.6g}, electronic noise {cal.electronic_noise_snu:.4f} SNU")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    report = harness.run(cfg)
    agg = report.aggregates
    print(
        f"{agg.n_frames} frames, {agg.n_accepted} accepted, {agg.n_failed} failed; "
        f"excess noise {agg.mean_excess_mpnu:.2f} +- {agg.std_excess_mpnu:.2f} mPNU; "
        f"skf {agg.mean_skf:.4f} bits/symbol; {report.wall_seconds:.1f} s"
    )
    if args.plots:
        harness.emit_plots(report, cfg.output_dir)
    return EXIT_ALL_FAILED if agg.n_failed == agg.n_frames else EXIT_OK


def _print_rows(rows) -> None:
    keys = list(rows[0])
    print(" ".join(keys))
    for r in rows:
        print(" ".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys))


def cmd_sweep_delay(args) -> int:
    cfg = _config(args)
    rows = harness.sweep_delay_error(cfg, args.offsets)
    out = _out(cfg)
    io.write_table(out / "delay_sweep.dat", tuple(rows[0]), [tuple(r.values()) for r in rows])
    _print_rows(rows)
    return EXIT_ALL_FAILED if all(r["n_frames"] == 0 for r in rows) else EXIT_OK


def cmd_sweep_skew(args) -> int:
    cfg = _config(args)
    rows = harness.sweep_skew(cfg, args.skews)
    out = _out(cfg)
    io.write_table(out / "skew_sweep.dat", tuple(rows[0]), [tuple(r.values()) for r in rows])
    _print_rows(rows)
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or (load_config(args.config).output_dir if args.config else "results"))
    agg = harness.verify_report(out)
    for k, v in agg.as_dict().items():
        print(f"{k} {v}")
    return EXIT_ALL_FAILED if agg.n_failed == agg.n_frames else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file (section.key = value lines)")
    common.add_argument("--seed", type=int)
    common.add_argument("--frames", type=int)
    common.add_argument("--mode", choices=("shared", "free", "shared-clock", "free-running"))
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="frame worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cvqkd-sync", description="CV-QKD digital synchronization simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="shot-noise and electronic-noise calibration").set_defaults(
        func=cmd_calibrate
    )
    s = sub.add_parser("run", parents=[common], help="process a batch of frames")
    s.add_argument("--plots", action="store_true", help="also write plot data files")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep-delay", parents=[common], help="excess noise versus forced timing error")
    s.add_argument("--offsets", type=int, nargs="+", default=list(DEFAULT_OFFSETS))
    s.set_defaults(func=cmd_sweep_delay)
    s = sub.add_parser("sweep-skew", parents=[common], help="QPSK BER versus clock skew")
    s.add_argument("--skews", type=float, nargs="+", default=list(DEFAULT_SKEWS))
    s.set_defaults(func=cmd_sweep_skew)
    sub.add_parser("report", parents=[common], help="recheck a run's summary against its CSV").set_defaults(
        func=cmd_report
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (InvalidConfig, InvalidParameter) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
