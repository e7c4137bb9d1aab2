"""Command-line front end.

    ehrenfest-dw simulate    --preset fig2_top --out runs/fig2
    ehrenfest-dw scan-ncrit  --preset fig1 --out runs/fig1
    ehrenfest-dw scan-period --preset fig6 --out runs/fig6 --workers 4
    ehrenfest-dw spectrum    --preset fig7 --out runs/fig7 --temperatures 1e-8,1e-6,1e-4,1e-2 --seeds 0:10

Exit codes: 0 success, 2 configuration/output error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    bistability_trials,
    first_monostable_counts,
    run_spectrum,
    scan_bistability,
    scan_period_vs_initial_position,
    scan_spectral_flatness,
)
from .bath import sample_bath, write_bath_csv
from .dynamics import IntegrationError, integrate
from .model import CONFIG_KEYS, TRAJECTORY_COLUMNS, ConfigError, RunConfig
from .potential import critical_oscillator_number

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("simulate", "scan-ncrit", "scan-period", "spectrum")


class OutputError(OSError):
    pass


# --- configuration -----------------------------------------------------------


def _parse_pairs(lines, source: str) -> dict[str, tuple[str, int | None]]:
    values: dict[str, tuple[str, int | None]] = {}
    for lineno, raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' in {source}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key '{key}' in {source}", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key '{key}' in {source}", key=key, line=lineno)
        if not value:
            raise ConfigError(f"missing value in {source}", key=key, line=lineno)
        values[key] = (value, lineno)
    return values


def parse_config(path, overrides=()) -> RunConfig:
    """Read a flat ``key = value`` file, apply ``key=value`` overrides, validate."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    values = _parse_pairs(enumerate(text.splitlines(), start=1), str(path))
    for key, item in _parse_pairs(((None, o) for o in overrides), "overrides").items():
        values[key] = item
    try:
        return RunConfig.from_mapping({k: v for k, (v, _) in values.items()})
    except ConfigError as exc:
        line = values[exc.key][1] if exc.key in values else None
        if line is None or exc.line is not None:
            raise
        raise ConfigError(str(exc).rsplit(" (", 1)[0], key=exc.key, line=line) from None


def preset_path(name: str) -> Path:
    path = resources.files("ehrenfest_dw") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(f"unknown preset '{name}'; available: {', '.join(list_presets())}")
    return Path(str(path))


def list_presets() -> list[str]:
    folder = resources.files("ehrenfest_dw") / "presets"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".cfg"))


# --- output helpers ------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_trajectory_csv(traj, path: Path) -> None:
    write_csv(path, TRAJECTORY_COLUMNS, traj.data)


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc.strerror or exc}") from None
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, options: dict, files: list[str]) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_mapping(),
        "options": options,
        "outputs": sorted(files),
        "versions": {
            "ehrenfest_dw": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "config.cfg").write_text(cfg.to_text())


# --- commands ----------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    """'a,b,c' or 'start:stop:count' (inclusive linspace, rounded to 12 digits)."""
    if ":" in text:
        start, stop, count = text.split(":")
        return [round(float(x), 12) for x in np.linspace(float(start), float(stop), int(count))]
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    """'a,b,c' or 'start:stop' (half-open range)."""
    if ":" in text:
        start, stop = text.split(":")
        return list(range(int(start), int(stop)))
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_simulate(cfg: RunConfig, args, out: Path) -> list[str]:
    bath = sample_bath(cfg.bath, cfg.initial.q0)
    traj = integrate(cfg.initial_state(bath), cfg.params, cfg.bath.m, cfg.integrator)
    write_trajectory_csv(traj, out / "trajectory.csv")
    files = ["trajectory.csv"]
    if len(bath):
        write_bath_csv(bath, out / "bath.csv")
        files.append("bath.csv")
    return files


def cmd_scan_ncrit(cfg: RunConfig, args, out: Path) -> list[str]:
    b = cfg.bath
    omega0 = b.omega0 if args.omega0 is None else args.omega0
    # default: the monochromatic reference plus the configured band
    widths = _float_list(args.delta_omega) if args.delta_omega else sorted({0.0, b.delta_omega})
    n_grid = list(range(0, args.n_max + 1, args.n_step))
    files, summary = [], []
    for dw in widths:
        trials = 1 if dw == 0 else args.trials
        rows = scan_bistability(cfg.params, b.m, omega0, dw, n_grid, trials, b.seed, args.workers)
        name = f"scan_ncrit_dw{_fmt(dw)}.csv"
        write_csv(out / name, ("N", "mean_qmin", "mean_vmin", "std_vmin"), rows)
        files.append(name)
        firsts = first_monostable_counts(
            bistability_trials(cfg.params, b.m, omega0, dw, args.n_max, trials, b.seed, args.workers)
        ).astype(float)
        firsts[firsts < 0] = math.nan
        summary.append((
            dw,
            critical_oscillator_number(cfg.params.mu, b.m, omega0, dw),
            float(np.mean(firsts)),
            float(np.std(firsts)),
            trials,
        ))
    write_csv(out / "ncrit_summary.csv",
              ("delta_omega", "ncrit_formula", "mean_first_monostable_N", "std_first_monostable_N", "trials"),
              summary)
    return files + ["ncrit_summary.csv"]


def cmd_scan_period(cfg: RunConfig, args, out: Path) -> list[str]:
    ic = cfg.initial
    rows = scan_period_vs_initial_position(
        cfg.params, cfg.bath, _float_list(args.q0_ratios), ic.p0, ic.rho0, ic.pi0,
        cfg.integrator, band=args.band, workers=args.workers,
    )
    write_csv(out / "scan_period.csv", ("q0_over_qmin", "period", "censored"), [r[:3] for r in rows])
    failures = [r for r in rows if r.error]
    for r in failures:
        print(f"warning: Q0/Q_min={r.q0_over_qmin:g}: {r.error}", file=sys.stderr)
    return ["scan_period.csv"]


def cmd_spectrum(cfg: RunConfig, args, out: Path) -> list[str]:
    temps = _float_list(args.temperatures) if args.temperatures else [cfg.bath.temperature]
    seeds = _int_list(args.seeds) if args.seeds else [cfg.bath.seed]
    window = None if args.window == "none" else args.window
    files = []
    state = cfg.initial_state()
    if len(temps) == 1 and len(seeds) == 1:
        spec = replace(cfg.bath, temperature=temps[0], seed=seeds[0])
        traj, result = run_spectrum(cfg.params, spec, state, cfg.integrator, args.n_samples, window)
        write_trajectory_csv(traj, out / "trajectory.csv")
        write_csv(out / "spectrum.csv", ("freq", "power"), zip(result.freqs, result.power))
        files += ["trajectory.csv", "spectrum.csv"]
        rows = [(spec.temperature, spec.seed, result.peak_freq, result.integral, result.flatness)]
    else:
        rows = scan_spectral_flatness(
            cfg.params, cfg.bath, temps, seeds, state, cfg.integrator,
            args.n_samples, window, args.workers,
        )
    write_csv(out / "spectral_summaries.csv",
              ("temperature", "seed", "peak_freq", "integral", "flatness"), rows)
    return files + ["spectral_summaries.csv"]


HANDLERS = {
    "simulate": cmd_simulate,
    "scan-ncrit": cmd_scan_ncrit,
    "scan-period": cmd_scan_period,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrenfest-dw", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="flat key = value configuration file")
        src.add_argument("--preset", help=f"shipped preset: {', '.join(list_presets())}")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes for scans (default: all CPUs)")
        return p

    common(sub.add_parser("simulate", help="integrate one trajectory"))
    p = common(sub.add_parser("scan-ncrit", help="bistable to monostable transition versus N"))
    p.add_argument("--delta-omega", help="bandwidths, 'a,b,c' (default: 0 and the config omega range)")
    p.add_argument("--omega0", type=float, help="band centre (default: config omega range midpoint)")
    p.add_argument("--n-max", type=int, default=1000)
    p.add_argument("--n-step", type=int, default=1)
    p.add_argument("--trials", type=int, default=200)
    p = common(sub.add_parser("scan-period", help="interwell period versus initial position"))
    p.add_argument("--q0-ratios", default="0.1:2.0:20", help="Q0/Q_min values, 'a,b,c' or 'start:stop:count'")
    p.add_argument("--band", type=float, help="hysteresis half-width (default: 0.1 |Q_min,eff|)")
    p = common(sub.add_parser("spectrum", help="FFT of Q(t) and spectral summaries"))
    p.add_argument("--n-samples", type=int, default=8192)
    p.add_argument("--window", choices=("none", "hann"), default="none")
    p.add_argument("--temperatures", help="'a,b,c' (default: config temperature)")
    p.add_argument("--seeds", help="'a,b,c' or 'start:stop' (default: config seed)")
    return parser


def dispatch(command: str, cfg: RunConfig, out_dir, args: argparse.Namespace | None = None) -> int:
    """Run one command into ``out_dir``; returns the process exit status."""
    if args is None:
        args = build_parser().parse_args([command, "--config", os.devnull, "--out", str(out_dir)])
    try:
        out = _prepare_out(out_dir)
        files = HANDLERS[command](cfg, args, out)
        options = {k: v for k, v in vars(args).items()
                   if k not in ("config", "preset", "overrides", "out", "command", "seed", "workers")}
        options["source"] = args.preset or args.config
        write_manifest(out, command, cfg, options, files)
    except (ConfigError, OutputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        path = preset_path(args.preset) if args.preset else args.config
        cfg = parse_config(path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(args.command, cfg, args.out, args)


if __name__ == "__main__":
    sys.exit(main())
