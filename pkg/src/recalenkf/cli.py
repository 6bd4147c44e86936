"""Command-line interface: curve, sweep and selftest subcommands."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .harness import (
    DEFAULT_SWEEP_SCALES,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    run_sweep,
)
from .reporting import LineSeries, emit_curve_csv, emit_plot, emit_sweep_csv
from .selftest import run_selftest

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # configuration problems exit with code 1 (argparse's default is 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_CONVERTERS = {
    "benchmark": str,
    "filter": str,
    "mode": str,
    "runs": int,
    "seed": int,
    "steps": int,
    "ensemble_size": int,
    "noise_scale": str,
    "rho": float,
    "jobs": int,
    "out": str,
    "strict": _parse_bool,
}


def _read_config_file(path: str) -> dict:
    """Flat key=value file; keys match the CLI flag names."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def _add_run_options(parser: _Parser) -> None:
    parser.add_argument("--benchmark", choices=("slam", "lorenz96"))
    parser.add_argument("--filter", dest="filter", choices=("stochastic", "etkf"))
    parser.add_argument("--mode", choices=("conventional", "recalibrated", "adaptive"))
    parser.add_argument("--runs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--ensemble-size", type=int, dest="ensemble_size")
    parser.add_argument(
        "--noise-scale",
        dest="noise_scale",
        help="measurement-noise scale; sweep accepts a comma-separated list",
    )
    parser.add_argument("--rho", type=float, help="inflation factor (non-adaptive modes)")
    parser.add_argument("--jobs", type=int, help="parallel worker processes")
    parser.add_argument("--out", help="output directory for CSV/SVG files")
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--strict", action="store_true", default=None,
                        help="exit with code 2 if any run diverges")


def _build_parser() -> _Parser:
    parser = _Parser(prog="recalenkf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    curve = sub.add_parser(
        "curve", help="RMSE-versus-step curve for one filter configuration"
    )
    _add_run_options(curve)
    sweep = sub.add_parser(
        "sweep", help="time-averaged RMSE across measurement-noise scales"
    )
    _add_run_options(sweep)
    sub.add_parser("selftest", help="run the built-in update-algebra oracles")
    return parser


_DEFAULTS = {
    "filter": "etkf",
    "mode": "conventional",
    "seed": 1234,
    "steps": None,
    "ensemble_size": None,
    "rho": 1.05,
    "jobs": 1,
    "out": ".",
    "strict": False,
}


def _merge_options(args: argparse.Namespace, command: str) -> dict:
    merged = dict(_DEFAULTS)
    merged["runs"] = 100 if command == "curve" else 50
    merged["noise_scale"] = "1" if command == "curve" else None
    merged["benchmark"] = None
    if args.config:
        merged.update(_read_config_file(args.config))
    for key in _CONVERTERS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["benchmark"] is None:
        raise ConfigError("no benchmark selected: pass --benchmark or set it in the config file")
    return merged


def _parse_scales(text: str | None):
    if text is None:
        return None
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad noise scale list {text!r}: {exc}") from exc


def _experiment_config(options: dict, sweep: bool) -> ExperimentConfig:
    scales = _parse_scales(options["noise_scale"])
    kwargs = dict(
        benchmark=options["benchmark"],
        variant=options["filter"],
        mode=options["mode"],
        runs=options["runs"],
        base_seed=options["seed"],
        steps=options["steps"],
        ensemble_size=options["ensemble_size"],
        rho=options["rho"],
        jobs=options["jobs"],
    )
    if sweep:
        kwargs["noise_scales"] = scales if scales else DEFAULT_SWEEP_SCALES
    else:
        if scales is None or len(scales) != 1:
            raise ConfigError("curve takes exactly one noise scale")
        kwargs["noise_scale"] = scales[0]
    if options["mode"] == "adaptive":
        kwargs["rho"] = 1.0  # adaptive mode replaces inflation
    return ExperimentConfig(**kwargs)


def _cmd_curve(options: dict) -> int:
    cfg = _experiment_config(options, sweep=False)
    result = run_experiment(cfg)
    out_dir = Path(options["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"curve_{cfg.benchmark}_{cfg.variant.value}_{cfg.mode.value}"
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    emit_curve_csv(result, csv_path)
    label = f"{cfg.variant.value}/{cfg.mode.value}"
    emit_plot(
        [LineSeries(label, tuple(range(1, result.steps + 1)), tuple(result.rmse))],
        svg_path,
        title=f"{cfg.benchmark}: RMSE vs step (scale {cfg.noise_scale:g})",
        x_label="step",
        y_label="RMSE",
    )
    print(
        f"benchmark={cfg.benchmark} filter={cfg.variant.value} mode={cfg.mode.value} "
        f"runs={cfg.runs} steps={result.steps} ensemble={result.ensemble_size} "
        f"scale={cfg.noise_scale:g} seed={cfg.base_seed}"
    )
    print(
        f"time-avg RMSE (steps {11}..{result.steps}): {result.time_avg_rmse:.6g}  "
        f"diverged: {len(result.diverged_runs)}/{cfg.runs}"
    )
    print(f"wrote {csv_path} and {svg_path}")
    if options["strict"] and result.diverged_runs:
        return 2
    return 0


def _cmd_sweep(options: dict) -> int:
    cfg = _experiment_config(options, sweep=True)
    rows = run_sweep(cfg)
    out_dir = Path(options["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{cfg.benchmark}_{cfg.variant.value}_{cfg.mode.value}"
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    emit_sweep_csv(rows, csv_path)
    label = f"{cfg.variant.value}/{cfg.mode.value}"
    emit_plot(
        [LineSeries(label, tuple(r.scale for r in rows), tuple(r.rmse_avg for r in rows))],
        svg_path,
        title=f"{cfg.benchmark}: time-avg RMSE vs noise scale",
        x_label="noise scale",
        y_label="time-avg RMSE",
        log_x=True,
    )
    print(f"{'scale':>10}  {'filter':<10} {'mode':<13} {'rmse_avg':>12}  diverged")
    for row in rows:
        print(
            f"{row.scale:>10.4g}  {row.variant:<10} {row.mode:<13} "
            f"{row.rmse_avg:>12.6g}  {row.diverged_runs}"
        )
    print(f"wrote {csv_path} and {svg_path}")
    if options["strict"] and any(r.diverged_runs for r in rows):
        return 2
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "selftest":
        return 0 if run_selftest() else 1
    try:
        options = _merge_options(args, args.command)
        if args.command == "curve":
            return _cmd_curve(options)
        return _cmd_sweep(options)
    except ConfigError as exc:
        print(f"recalenkf: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
