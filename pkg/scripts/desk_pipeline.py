"""Desk-scale pipeline: full run, matching surrogate, spectra, fits and comparison.

    python scripts/desk_pipeline.py [OUT_DIR] [--threads N]

Reuses an existing full run in OUT_DIR/full if averages.csv is present.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from dense_ensemble.analysis import (
    band_peak,
    compare_runs,
    fit_disorder_onset,
    local_peaks,
    sign_correlation_length,
    windowed_spectrum,
)
from dense_ensemble.cli import main as cli
from dense_ensemble.config import load_config
from dense_ensemble.io import TimeSeries, output_root, read_csv, read_snapshot, write_csv, write_json

HERE = Path(__file__).resolve().parent


def spectra(probe: TimeSeries, drive_hz: float, out: Path) -> dict:
    t, ey = probe.time, probe["E_y"]
    half = 0.5 * (t[0] + t[-1])
    res = {}
    for name, (t0, t1) in {"early": (t[0], half), "late": (half, t[-1])}.items():
        f, a = windowed_spectrum(t, ey, t0, t1)
        write_csv(TimeSeries(np.zeros_like(f), {"frequency_hz": f, "amplitude": a},
                             {"kind": "spectrum", "window": "rectangular", "t0": t0, "t1": t1}), out / f"spectrum_{name}.csv")
        res[name] = {
            "drive_peak": band_peak(f, a, 0.8 * drive_hz, 1.2 * drive_hz),
            "peaks_above_drive": local_peaks(f, a, 1.05 * drive_hz, 3.0 * drive_hz, min_rel=0.05)[:5],
        }
    return res


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default=str(output_root() / "desk"))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.out)
    cfg_path = HERE / "configs" / "desk_sphere.yaml"
    cfg = load_config(cfg_path)
    full = out / "full"
    if not (full / "averages.csv").exists():
        code = cli(["run-full", str(cfg_path), "-o", str(full), "--threads", str(args.threads)])
        if code:
            raise SystemExit(code)

    # surrogate at the same density and drive, over the same window
    sur_cfg = out / "surrogate.yaml"
    sur_cfg.parent.mkdir(parents=True, exist_ok=True)
    sur_cfg.write_text(
        (HERE / "configs" / "surrogate_4e27.yaml").read_text().replace("run_length: 3.0e-13", f"run_length: {cfg.run.duration!r}")
    )
    if cli(["run-surrogate", str(sur_cfg), "-o", str(out / "surrogate")]):
        raise SystemExit(2)

    avg = read_csv(full / "averages.csv")
    sur = read_csv(out / "surrogate" / "surrogate.csv")
    probe = read_csv(full / "probe_outside.csv")
    summary = {
        "spectra": spectra(probe, cfg.drive.frequency_hz, out),
        "fit_full": fit_disorder_onset(avg.time, avg["rho_yy"]).to_dict(),
        "fit_surrogate": fit_disorder_onset(sur.time, sur["rho_yy"]).to_dict(),
        "compare": compare_runs(avg, sur),
    }
    corr = []
    for p in sorted((full / "snapshots").glob("J_y_*.f64")):
        arr, meta = read_snapshot(p)
        mask = arr != 0
        corr.append({"time_s": meta["time_s"], "correlation_length_cells": sign_correlation_length(arr, mask),
                     "mean_sign": float(np.mean(np.sign(arr[mask]))) if mask.any() else 0.0})
    summary["snapshots"] = corr
    write_json(summary, out / "summary.json")
    print(json.dumps({"compare": summary["compare"]["columns"]["rho_yy"], "snapshots": corr}, indent=1))


if __name__ == "__main__":
    main()
