"""Command-line front end: ``dense-ensemble run-full | run-surrogate | analyze ...``.

Exit codes: 0 success, 2 invalid configuration or input (JSON diagnostic on
stderr naming the field or line), 3 numeric failure (JSON with the step and
diagnostic snapshot path).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    compare_runs,
    decay_enhancement,
    fit_disorder_onset,
    fit_logistic,
    windowed_spectrum,
)
from .config import SurrogateFile, config_hash, load_config, load_yaml
from .io import TimeSeries, file_inventory, output_root, read_csv, write_csv, write_json
from .pstd import ConfigError, NumericFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _error(kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": message}
    payload.update(extra)
    print(json.dumps(payload, default=str), file=sys.stderr)


def _out_dir(arg, name: str) -> Path:
    p = Path(arg) if arg else output_root() / name
    p.mkdir(parents=True, exist_ok=True)
    return p


def _threads(n) -> int:
    return int(n) if n else (os.cpu_count() or 1)


def _manifest(out: Path, chash: str, threads: int, started: float, status: str, command: list, extra=None) -> Path:
    files = [p for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"]
    man = {
        "config_hash": chash,
        "code_version": __version__,
        "threads": threads,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "status": status,
        "command": command,
        "files": file_inventory(files),
    }
    if extra:
        man.update(extra)
    return write_json(man, out / "manifest.json")


# ----------------------------------------------------------------- run-full
def cmd_run_full(args) -> int:
    from .ensemble import EnsembleSimulation

    started = time.time()
    cfg = load_config(args.config)
    out = _out_dir(args.output, "full")
    threads = _threads(args.threads)
    if args.resume:
        sim = EnsembleSimulation.from_checkpoint(args.resume, cfg, workers=threads)
    else:
        sim = EnsembleSimulation(cfg, workers=threads)
    try:
        result = sim.run(out_dir=out, checkpoint_every=args.checkpoint_every)
    except NumericFailure as exc:
        _error("numeric", str(exc), step=exc.step, snapshot=getattr(exc, "snapshot", None))
        _manifest(out, cfg.hash(), threads, started, "numeric_failure", sys.argv)
        return EXIT_NUMERIC
    _manifest(out, cfg.hash(), threads, started, "complete", sys.argv,
              {"steps": result.steps, "stopped_early": result.stopped_early, "cells": int(len(result.cells))})
    print(f"run-full: {result.steps} steps, {len(result.cells)} cells -> {out}")
    return EXIT_OK


# ------------------------------------------------------------ run-surrogate
def _surrogate_config(path):
    from .surrogate import SurrogateConfig

    f = SurrogateFile.from_dict(load_yaml(path))
    s = f.surrogate
    cfg = SurrogateConfig(f.emitter.spec(), s.number_density, s.drive_amplitude, s.detuning, s.run_length, s.dt,
                          s.record_stride)
    return f, cfg


def cmd_run_surrogate(args) -> int:
    from .surrogate import run_surrogate, run_sweep

    started = time.time()
    f, cfg = _surrogate_config(args.config)
    out = _out_dir(args.output, "surrogate")
    threads = _threads(args.threads)
    chash = config_hash(f.to_dict())
    if args.sweep:
        key, _, vals = args.sweep.partition("=")
        try:
            values = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"sweep values must be numbers: {vals!r}", "sweep") from None
        if not values:
            raise ConfigError("sweep needs key=v1,v2,...", "sweep")
        series = run_sweep(cfg, key.strip(), values, workers=threads)
        rows = []
        for i, (v, ts) in enumerate(zip(values, series)):
            write_csv(ts, out / f"surrogate_{key}_{i:02d}.csv")
            tail = ts.time >= 0.8 * ts.time[-1]
            fit = fit_disorder_onset(ts.time, ts["rho_yy"])
            rows.append([v] + [float(ts[c][tail].mean()) for c in ("rho_xx", "rho_yy", "rho_zz")]
                        + [fit.params["gamma_ens"], fit.params["g"], float(fit.converged)])
        names = ["steady_rho_xx", "steady_rho_yy", "steady_rho_zz", "gamma_ens", "g", "fit_converged"]
        a = np.array(rows)
        summary = TimeSeries(np.arange(len(rows), dtype=float), {key: a[:, 0], **{n: a[:, i + 1] for i, n in enumerate(names)}},
                             {"kind": "surrogate-sweep", "key": key})
        write_csv(summary, out / "summary.csv")
        print(f"run-surrogate: {len(values)} trajectories over {key} -> {out}")
    else:
        ts = run_surrogate(cfg)
        write_csv(ts, out / "surrogate.csv")
        print(f"run-surrogate: rho_yy(end)={ts['rho_yy'][-1]:.6g} -> {out}")
    _manifest(out, chash, threads, started, "complete", sys.argv)
    return EXIT_OK


# ------------------------------------------------------------------ analyze
def read_table(path) -> dict:
    """Generic numeric CSV with a header row; errors name the offending line."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file", str(path))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}:1: empty file", f"{path}:1")
    names = [n.strip() for n in rows[0]]
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(names):
            raise ConfigError(f"{path}:{i}: expected {len(names)} fields, got {len(row)}", f"{path}:{i}")
        try:
            data.append([float(x) for x in row])
        except ValueError as exc:
            raise ConfigError(f"{path}:{i}: {exc}", f"{path}:{i}") from None
    a = np.array(data, dtype=float).reshape(-1, len(names))
    return {n: a[:, j] for j, n in enumerate(names)}


def _column(ts: TimeSeries, name: str, path) -> np.ndarray:
    if name not in ts.columns:
        raise ConfigError(f"{path}: no column {name!r} (have {ts.names})", "column")
    return ts[name]


def cmd_fft(args) -> int:
    ts = read_csv(args.input)
    y = _column(ts, args.column, args.input)
    t0 = ts.time[0] if args.t0 is None else args.t0
    t1 = ts.time[-1] if args.t1 is None else args.t1
    f, amp = windowed_spectrum(ts.time, y, t0, t1)
    out = Path(args.output) if args.output else output_root() / "analysis" / "spectrum.csv"
    write_csv(TimeSeries(np.zeros_like(f), {"frequency_hz": f, "amplitude": amp},
                         {"kind": "spectrum", "window": "rectangular", "t0": t0, "t1": t1, "column": args.column}), out)
    i = int(np.argmax(amp[1:])) + 1
    print(f"fft: peak {f[i]:.6e} Hz amplitude {amp[i]:.6e} -> {out}")
    return EXIT_OK


def cmd_fit_disorder(args) -> int:
    ts = read_csv(args.input)
    y = _column(ts, args.column, args.input)
    t = ts.time
    m = np.ones(len(t), bool)
    if args.t0 is not None:
        m &= t >= args.t0
    if args.t1 is not None:
        m &= t <= args.t1
    res = fit_disorder_onset(t[m], y[m])
    out = Path(args.output) if args.output else output_root() / "analysis" / "fit_disorder.json"
    write_json(res.to_dict(), out)
    p = res.params
    print(f"fit-disorder: gamma_ens={p['gamma_ens']:.6e} g={p['g']:.6e} converged={res.converged} -> {out}")
    return EXIT_OK


def cmd_fit_logistic(args) -> int:
    tab = read_table(args.input)
    for col in (args.x, args.y):
        if col not in tab:
            raise ConfigError(f"{args.input}: no column {col!r}", "column")
    res = fit_logistic(tab[args.x], tab[args.y])
    out = Path(args.output) if args.output else output_root() / "analysis" / "fit_logistic.json"
    write_json(res.to_dict(), out)
    p = res.params
    print(f"fit-logistic: L={p['L']:.6e} k={p['k']:.6e} a={p['a']:.6e} converged={res.converged} -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    full = read_csv(args.full)
    sur = read_csv(args.surrogate)
    cols = tuple(args.columns.split(","))
    for c in cols:
        _column(full, c, args.full)
        _column(sur, c, args.surrogate)
    rep = compare_runs(full, sur, cols)
    out = Path(args.output) if args.output else output_root() / "analysis" / "compare.json"
    write_json(rep, out)
    worst = max(v["rms_deviation"] for v in rep["columns"].values())
    print(f"compare: max rms deviation {worst:.6e}, same ordering {rep['same_ordering']} -> {out}")
    return EXIT_OK


def _cvec(text, name):
    try:
        v = [complex(x.strip().replace(" ", "")) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"{name} must be three comma-separated (complex) numbers", name) from None
    if len(v) != 3:
        raise ConfigError(f"{name} must have three components", name)
    return np.array(v)


def cmd_enhancement(args) -> int:
    j = _cvec(args.j, "j")
    el = _cvec(args.e_local, "e_local")
    ed = _cvec(args.e_drive, "e_drive")
    try:
        ratio = decay_enhancement(j, el, ed)
    except ValueError as exc:
        raise ConfigError(str(exc), "e_drive") from None
    if args.output:
        write_json({"enhancement": ratio}, args.output)
    print(f"enhancement: {ratio:.17g}")
    return EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dense-ensemble", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    out_help = "output {} (default under $DENSE_ENSEMBLE_OUT or ./runs)"

    r = sub.add_parser("run-full", help="coupled field/emitter simulation")
    r.add_argument("config", help="YAML run configuration")
    r.add_argument("-o", "--output", help=out_help.format("directory"))
    r.add_argument("--threads", type=int, help="FFT and emitter workers (default: all cores)")
    r.add_argument("--checkpoint-every", type=int, metavar="STEPS", help="write checkpoint.npz every STEPS field steps")
    r.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint written for the same config")
    r.set_defaults(func=cmd_run_full)

    s = sub.add_parser("run-surrogate", help="single-particle surrogate")
    s.add_argument("config", help="YAML surrogate configuration")
    s.add_argument("-o", "--output", help=out_help.format("directory"))
    s.add_argument("--threads", type=int, help="parallel trajectories in a sweep (default: all cores)")
    s.add_argument("--sweep", metavar="KEY=V1,V2,...", help="run one trajectory per value of a surrogate key")
    s.set_defaults(func=cmd_run_surrogate)

    a = sub.add_parser("analyze", help="post-processing")
    asub = a.add_subparsers(dest="analysis", required=True)
    f = asub.add_parser("fft", help="rectangular-window amplitude spectrum of one column")
    f.add_argument("input", help="time-series CSV")
    f.add_argument("--column", default="E_y")
    f.add_argument("--t0", type=float, help="window start in seconds (default: first sample)")
    f.add_argument("--t1", type=float, help="window end in seconds (default: last sample)")
    f.add_argument("-o", "--output", help=out_help.format("CSV"))
    f.set_defaults(func=cmd_fft)
    d = asub.add_parser("fit-disorder", help="fit the disorder-onset model to a population trace")
    d.add_argument("input", help="time-series CSV")
    d.add_argument("--column", default="rho_yy")
    d.add_argument("--t0", type=float, help="ignore samples before t0 (seconds)")
    d.add_argument("--t1", type=float, help="ignore samples after t1 (seconds)")
    d.add_argument("-o", "--output", help=out_help.format("JSON"))
    d.set_defaults(func=cmd_fit_disorder)
    lg = asub.add_parser("fit-logistic", help="fit a logistic curve to rate-versus-density pairs")
    lg.add_argument("input", help="CSV with the two columns")
    lg.add_argument("--x", default="number_density")
    lg.add_argument("--y", default="gamma_ens")
    lg.add_argument("-o", "--output", help=out_help.format("JSON"))
    lg.set_defaults(func=cmd_fit_logistic)
    c = asub.add_parser("compare", help="compare full-model averages with a surrogate trajectory")
    c.add_argument("full", help="averages.csv from run-full")
    c.add_argument("surrogate", help="surrogate.csv from run-surrogate")
    c.add_argument("--columns", default="rho_xx,rho_yy,rho_zz")
    c.add_argument("-o", "--output", help=out_help.format("JSON"))
    c.set_defaults(func=cmd_compare)
    e = asub.add_parser("enhancement", help="collective decay enhancement from complex field amplitudes")
    e.add_argument("--j", required=True, help="current vector, e.g. 0,1,0")
    e.add_argument("--e-local", required=True, help="local field vector, complex entries allowed (0,2+1j,0)")
    e.add_argument("--e-drive", required=True, help="drive field vector")
    e.add_argument("-o", "--output", help="optional JSON output file")
    e.set_defaults(func=cmd_enhancement)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        _error("config", str(exc), field=exc.field)
        return EXIT_CONFIG
    except NumericFailure as exc:
        _error("numeric", str(exc), step=exc.step, snapshot=getattr(exc, "snapshot", None))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
