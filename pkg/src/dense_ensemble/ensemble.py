"""Coupled Maxwell-Liouville loop: geometry, per-step ordering, probes, snapshots, checkpoints.

Cell positions are measured from the origin cell ``dims // 2``; cell ``i``
along an axis sits at ``(i - dims[a] // 2) * spacing``.

Each step, in order:

1. the source sheet current for the half step is written into J;
2. H is advanced from E^n;
3. every occupied cell takes one RK4 step with E^n from the end of the
   previous step held fixed;
4. the free current built from the new drho/dt is added into J;
5. E is advanced with curl H - J;
6. probes, averages and snapshots are recorded.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import ensemble_average
from .config import EnsembleConfig
from .emitter import EmitterBank
from .io import TimeSeries, sha256_file, write_csv, write_json, write_snapshot
from .pstd import AXES, ConfigError, FieldGrid, NumericFailure, SourcePlane, apply_source, stable_dt

log = logging.getLogger(__name__)

POP_COLUMNS = ("rho_gg", "rho_xx", "rho_yy", "rho_zz")
CHECKPOINT_FORMAT = 1


# ------------------------------------------------------------------ geometry
@dataclass
class EnsembleGeometry:
    shape: dict
    cells: np.ndarray  # (N, 3) int grid indices, lexicographic
    number_density: float

    @property
    def count(self) -> int:
        return len(self.cells)


def origin_cell(dims) -> np.ndarray:
    return np.asarray(dims, dtype=int) // 2


def _check_inside(grid: FieldGrid, cells: np.ndarray, fieldname: str) -> None:
    sl = grid.interior_slices()
    for ax in range(3):
        lo, hi = sl[ax].start, sl[ax].stop
        if len(cells) and (cells[:, ax].min() < lo or cells[:, ax].max() >= hi):
            raise ConfigError(
                f"geometry reaches outside the interior along {AXES[ax]} (interior cells {lo}..{hi - 1})", fieldname
            )


def rasterize_sphere(center, radius: float, grid: FieldGrid, number_density: float = 0.0) -> EnsembleGeometry:
    """Cells whose centers lie within ``radius`` of ``center`` (m, from the origin cell)."""
    if not radius > 0:
        raise ConfigError("radius must be positive", "geometry.radius")
    c = np.asarray(center, dtype=float) / grid.spacing
    r = radius / grid.spacing
    o = origin_cell(grid.dims)
    ranges = []
    for ax in range(3):
        lo = max(int(np.floor(o[ax] + c[ax] - r)) - 1, 0)
        hi = min(int(np.ceil(o[ax] + c[ax] + r)) + 2, grid.dims[ax])
        ranges.append(np.arange(lo, hi))
    ix, iy, iz = np.meshgrid(*ranges, indexing="ij")
    d2 = (ix - o[0] - c[0]) ** 2 + (iy - o[1] - c[1]) ** 2 + (iz - o[2] - c[2]) ** 2
    # small slack so lattice points exactly on the surface count
    inside = d2 <= r * r * (1 + 1e-12)
    cells = np.stack([ix[inside], iy[inside], iz[inside]], axis=1)
    # touching the PML is checked against the whole sphere, not just occupied cells
    span = np.stack([np.floor(o + c - r), np.ceil(o + c + r)]).astype(int)
    _check_inside(grid, span, "geometry.radius")
    _check_inside(grid, cells, "geometry.radius")
    shape = {"type": "sphere", "center": [float(x) for x in center], "radius": float(radius)}
    return EnsembleGeometry(shape, cells.astype(int), float(number_density))


def rasterize_box(center, half_widths, grid: FieldGrid, number_density: float = 0.0) -> EnsembleGeometry:
    c = np.asarray(center, dtype=float) / grid.spacing
    h = np.asarray(half_widths, dtype=float) / grid.spacing
    o = origin_cell(grid.dims)
    ranges = []
    for ax in range(3):
        lo = int(np.ceil(o[ax] + c[ax] - h[ax] - 1e-9))
        hi = int(np.floor(o[ax] + c[ax] + h[ax] + 1e-9))
        ranges.append(np.arange(lo, hi + 1))
    cells = np.stack([a.ravel() for a in np.meshgrid(*ranges, indexing="ij")], axis=1)
    _check_inside(grid, cells, "geometry.half_widths")
    shape = {"type": "box", "center": [float(x) for x in center], "half_widths": [float(x) for x in half_widths]}
    return EnsembleGeometry(shape, cells.astype(int), float(number_density))


def brute_force_sphere_count(radius_cells: float) -> int:
    """Lattice points with |n| <= R, by direct enumeration (independent of rasterize_sphere)."""
    R = int(np.floor(radius_cells))
    count = 0
    r2 = radius_cells * radius_cells
    for i in range(-R, R + 1):
        for j in range(-R, R + 1):
            rest = r2 - i * i - j * j
            if rest < 0:
                continue
            count += 2 * int(np.floor(np.sqrt(rest) + 1e-12)) + 1
    return count


# ------------------------------------------------------------------- probes
@dataclass
class Probe:
    name: str
    index: tuple
    quantities: tuple = ("E", "J")
    stride: int = 1

    def columns(self) -> list:
        return [f"{q}_{c}" for q in self.quantities for c in "xyz"]


def steady_state_check(series: TimeSeries, window: float, tol: float, columns=POP_COLUMNS[1:]) -> bool:
    """True when the mean of each column over the last window differs from the
    mean over the window before it by less than ``tol`` (relative)."""
    t = series.time
    if len(t) < 2 or t[-1] - t[0] < 2 * window:
        return False
    last = t >= t[-1] - window
    prev = (t >= t[-1] - 2 * window) & ~last
    if not prev.any() or not last.any():
        return False
    for name in columns:
        y = series[name]
        m1, m2 = y[prev].mean(), y[last].mean()
        scale = max(abs(m1), abs(m2))
        if scale == 0.0:
            continue
        if abs(m2 - m1) > tol * scale:
            return False
    return True


# -------------------------------------------------------------------- output
@dataclass
class RunOutput:
    averages: TimeSeries
    probes: dict
    snapshots: list
    final_rho: np.ndarray
    cells: np.ndarray
    steps: int
    stopped_early: bool
    config_hash: str
    files: list = field(default_factory=list)


class EnsembleSimulation:
    def __init__(self, config: EnsembleConfig, workers: int = 1):
        config.validate()
        self.config = config
        cfg = config
        self.drive = cfg.drive.spec()
        self.spec = cfg.emitter.spec()
        spacing = cfg.grid.spacing
        dt = cfg.grid.dt or stable_dt(spacing, self.drive.frequency, cfg.grid.dt_safety)
        self.grid = FieldGrid(cfg.grid.dims, spacing, dt, cfg.pml.build(), workers=workers)
        g = self.grid

        src = SourcePlane(0, self.drive, ramp_periods=cfg.drive.ramp_periods)
        ax = src.axis
        src.index = g.interior_slices()[ax].start + cfg.source.offset
        src.validate(g)
        self.source = src

        geo = cfg.geometry
        if geo.shape == "sphere":
            self.geometry = rasterize_sphere(geo.center, geo.radius, g, geo.number_density)
        elif geo.shape == "box":
            self.geometry = rasterize_box(geo.center, geo.half_widths, g, geo.number_density)
        else:
            self.geometry = EnsembleGeometry({"type": "none"}, np.zeros((0, 3), int), 0.0)
        cells = self.geometry.cells
        if len(cells) and np.any(cells[:, ax] == src.index):
            raise ConfigError("source plane passes through occupied cells", "source.offset")
        self._cidx = tuple(cells.T)
        self.bank = EmitterBank(len(cells), self.spec, dipole=cfg.emitter.dipole())

        o = origin_cell(g.dims)
        self.probes = []
        for i, pc in enumerate(cfg.probes):
            idx = tuple(int(v) for v in o + np.rint(np.asarray(pc.position) / spacing).astype(int))
            if not all(0 <= idx[a] < g.dims[a] for a in range(3)) or not g.in_interior(idx):
                raise ConfigError(f"probe {pc.name!r} at cell {idx} is outside the interior", f"probes[{i}].position")
            self.probes.append(Probe(pc.name, idx, tuple(pc.quantities), pc.stride))

        self._snap_cfgs = []
        for i, sc in enumerate(cfg.snapshots):
            a = AXES.index(sc.axis)
            k = int(o[a] + sc.offset)
            if not g.interior_slices()[a].start <= k < g.interior_slices()[a].stop:
                raise ConfigError("snapshot plane is outside the interior", f"snapshots[{i}].offset")
            self._snap_cfgs.append((sc, a, k, sorted(sc.times)))
        self._snap_done = [0] * len(self._snap_cfgs)
        self.snapshots = []

        self.nsteps = int(np.ceil(cfg.run.duration / dt - 1e-9))
        self._avg_rows = []
        self._probe_rows = {p.name: [] for p in self.probes}
        self.work_source = 0.0
        self.work_medium = 0.0
        self.out_dir: Optional[Path] = None
        self._record()

    # ---------------------------------------------------------------- stepping
    @property
    def step_index(self) -> int:
        return self.grid.step_index

    @property
    def time(self) -> float:
        return self.grid.time

    def cell_fields(self) -> np.ndarray:
        """(N, 3) E at occupied cells."""
        return np.ascontiguousarray(self.grid.E[(slice(None),) + self._cidx].T)

    def step(self) -> None:
        g = self.grid
        n = g.step_index
        energy = self.config.run.energy_diagnostics
        # (1) source
        g.J[...] = 0.0
        apply_source(g, self.source, (n + 0.5) * g.dt)
        if energy:
            j_src = g.J.copy()
        # (2) H
        g.step_H()
        # (3) emitters, E from the previous step
        e_cells = self.cell_fields()
        if self.bank.n:
            self.bank.step(e_cells, g.dt)
            # (4) free current
            j_med = self.bank.current(self.geometry.number_density)
            g.J[(slice(None),) + self._cidx] += j_med.T
        if energy:
            e_old = g.E.copy()
        # (5) E
        g.step_E()
        if energy:
            e_mid = 0.5 * (e_old + g.E)
            self.work_source -= g.dt * g.spacing**3 * float(np.sum(j_src * e_mid))
            if self.bank.n:
                em = e_mid[(slice(None),) + self._cidx].T
                self.work_medium += g.dt * g.spacing**3 * float(np.sum(j_med * em))
        # (6) record
        self._record()

    def _record(self) -> None:
        g = self.grid
        s = g.step_index
        t = g.time
        for p in self.probes:
            if s % p.stride == 0:
                row = [t]
                for q in p.quantities:
                    arr = g.E if q == "E" else g.J
                    row.extend(arr[(slice(None),) + p.index])
                self._probe_rows[p.name].append(row)
        if s % self.config.run.record_stride == 0:
            row = [t]
            if self.bank.n:
                avg = ensemble_average(self.bank.rho, t)
                row.extend(avg.populations)
                row.append(avg.purity)
            if self.config.run.energy_diagnostics:
                row.extend([self.field_energy(), self.work_source, self.work_medium])
            self._avg_rows.append(row)
        for i, (sc, a, k, times) in enumerate(self._snap_cfgs):
            while self._snap_done[i] < len(times) and t >= times[self._snap_done[i]] - 0.5 * g.dt:
                self._take_snapshot(sc, a, k, t)
                self._snap_done[i] += 1

    def field_energy(self) -> float:
        """EM energy in the non-PML interior (E^n and the current H)."""
        mask = np.zeros(self.grid.dims, bool)
        mask[self.grid.interior_slices()] = True
        return self.grid.energy(mask=mask)

    def _take_snapshot(self, sc, a, k, t) -> None:
        q, c = sc.component.split("_")
        arr = {"E": self.grid.E, "H": self.grid.H, "J": self.grid.J}[q][AXES.index(c)]
        sl = [slice(None)] * 3
        sl[a] = k
        plane = np.array(arr[tuple(sl)])
        snap = {"component": sc.component, "axis": sc.axis, "offset": sc.offset, "time": t, "step": self.step_index, "array": plane}
        if self.out_dir is not None:
            self._write_snapshot(snap)
        self.snapshots.append(snap)

    def _write_snapshot(self, snap) -> None:
        q = snap["component"][0]
        name = f"{snap['component']}_{snap['axis']}{snap['offset']:+d}_{snap['step']:09d}.f64"
        path = self.out_dir / "snapshots" / name
        write_snapshot(snap["array"], path, name=snap["component"], spacing=self.grid.spacing, time=snap["time"],
                       units={"J": "A/m^2", "E": "V/m", "H": "A/m"}[q],
                       extra={"plane_axis": snap["axis"], "plane_offset": snap["offset"], "step": snap["step"]})
        snap["path"] = str(path)

    # --------------------------------------------------------------- outputs
    def average_series(self) -> TimeSeries:
        names = []
        if self.bank.n:
            names += list(POP_COLUMNS) + ["purity"]
        if self.config.run.energy_diagnostics:
            names += ["field_energy", "work_source", "work_medium"]
        rows = np.array(self._avg_rows, dtype=float).reshape(-1, 1 + len(names))
        meta = {"kind": "full", "config_hash": self.config.hash(), "number_density": self.geometry.number_density,
                "cells": int(self.bank.n), "dt": self.grid.dt}
        return TimeSeries(rows[:, 0], {n: rows[:, i + 1] for i, n in enumerate(names)}, meta)

    def probe_series(self) -> dict:
        out = {}
        for p in self.probes:
            cols = p.columns()
            rows = np.array(self._probe_rows[p.name], dtype=float).reshape(-1, 1 + len(cols))
            meta = {"kind": "full", "probe": p.name, "index": list(p.index), "config_hash": self.config.hash()}
            out[p.name] = TimeSeries(rows[:, 0], {c: rows[:, i + 1] for i, c in enumerate(cols)}, meta)
        return out

    # ------------------------------------------------------------ checkpoint
    def save_checkpoint(self, path) -> Path:
        """One .npz blob plus ``<path>.json`` manifest; written atomically."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f"grid_{k}": v for k, v in self.grid.state().items()}
        arrays["rho"] = self.bank._r
        arrays["rho_dot"] = self.bank._rd
        arrays["avg_rows"] = np.array(self._avg_rows, dtype=float)
        for p in self.probes:
            arrays[f"probe_{p.name}"] = np.array(self._probe_rows[p.name], dtype=float)
        arrays["work"] = np.array([self.work_source, self.work_medium])
        arrays["snap_done"] = np.array(self._snap_done, dtype=int)
        for i, s in enumerate(self.snapshots):
            arrays[f"snap_{i}"] = s["array"]
        snap_meta = [{k: v for k, v in s.items() if k != "array"} for s in self.snapshots]
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
        os.close(fd)
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "step": self.step_index,
            "time_s": self.time,
            "config_hash": self.config.hash(),
            "blob": path.name,
            "sha256": sha256_file(path),
            "snapshots": snap_meta,
        }
        write_json(manifest, str(path) + ".json")
        return path

    @classmethod
    def from_checkpoint(cls, path, config: EnsembleConfig, workers: int = 1) -> "EnsembleSimulation":
        path = Path(path)
        man_path = Path(str(path) + ".json")
        if not man_path.exists() or not path.exists():
            raise ConfigError(f"checkpoint {path} or its manifest is missing", "resume")
        man = json.loads(man_path.read_text())
        if man.get("config_hash") != config.hash():
            raise ConfigError("checkpoint was written for a different config", "resume")
        if sha256_file(path) != man["sha256"]:
            raise ConfigError("checkpoint blob checksum mismatch", "resume")
        sim = cls(config, workers=workers)
        with np.load(path) as z:
            st = {k[5:]: z[k] for k in z.files if k.startswith("grid_")}
            sim.grid.load_state(st, man["step"])
            sim.bank._r = z["rho"].copy()
            sim.bank._rd = z["rho_dot"].copy()
            sim._avg_rows = [list(r) for r in z["avg_rows"]]
            for p in sim.probes:
                sim._probe_rows[p.name] = [list(r) for r in z[f"probe_{p.name}"]]
            sim.work_source, sim.work_medium = (float(x) for x in z["work"])
            sim._snap_done = [int(x) for x in z["snap_done"]]
            sim.snapshots = []
            for i, meta in enumerate(man["snapshots"]):
                # the old path belongs to the run that wrote the checkpoint
                s = {k: v for k, v in meta.items() if k != "path"}
                s["array"] = z[f"snap_{i}"].copy()
                sim.snapshots.append(s)
        return sim

    # -------------------------------------------------------------------- run
    def run(
        self,
        out_dir=None,
        checkpoint_every: Optional[int] = None,
        checkpoint_path=None,
        stop_after: Optional[int] = None,
    ) -> RunOutput:
        """Advance to the configured duration (or steady state).

        ``stop_after`` halts after that many steps of this call, which is how a
        mid-run checkpoint is produced in tests.
        """
        cfg = self.config.run
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if checkpoint_every and checkpoint_path is None:
            if self.out_dir is None:
                raise ConfigError("checkpointing needs an output directory", "checkpoint_every")
            checkpoint_path = self.out_dir / "checkpoint.npz"
        if self.out_dir is not None:
            # snapshots taken before an output directory was known
            for snap in self.snapshots:
                if "path" not in snap:
                    self._write_snapshot(snap)
        window = cfg.steady_window or 20 * self.drive.period
        check_every = max(1, int(round(window / self.grid.dt)))
        stopped_early = False
        done = 0
        try:
            while self.step_index < self.nsteps:
                self.step()
                done += 1
                s = self.step_index
                if checkpoint_every and s % checkpoint_every == 0 and s < self.nsteps:
                    self.save_checkpoint(checkpoint_path)
                if cfg.steady_state and self.bank.n and s % check_every == 0:
                    if steady_state_check(self.average_series(), window, cfg.steady_tol):
                        stopped_early = True
                        break
                if stop_after is not None and done >= stop_after:
                    break
        except NumericFailure as exc:
            if exc.step is None:
                # failures inside the emitter update happen during step index + 1
                exc.step = self.step_index + 1
            if self.out_dir is not None:
                diag = self.out_dir / "diagnostic"
                for c in range(3):
                    write_snapshot(self.grid.E[c], diag / f"E_{AXES[c]}.f64", name=f"E_{AXES[c]}",
                                   spacing=self.grid.spacing, time=self.time, units="V/m",
                                   extra={"step": exc.step, "error": str(exc)})
                exc.snapshot = str(diag)
            raise
        return self.output(stopped_early)

    def output(self, stopped_early: bool = False) -> RunOutput:
        avg = self.average_series()
        probes = self.probe_series()
        files = []
        if self.out_dir is not None:
            files.append(write_csv(avg, self.out_dir / "averages.csv"))
            for name, ts in probes.items():
                files.append(write_csv(ts, self.out_dir / f"probe_{name}.csv"))
            files.extend(Path(s["path"]) for s in self.snapshots if "path" in s)
        return RunOutput(avg, probes, list(self.snapshots), self.bank.rho.copy(), self.geometry.cells,
                         self.step_index, stopped_early, self.config.hash(), files)


def run(config: EnsembleConfig, workers: int = 1, out_dir=None, checkpoint_every=None, resume=None) -> RunOutput:
    if resume is not None:
        sim = EnsembleSimulation.from_checkpoint(resume, config, workers)
    else:
        sim = EnsembleSimulation(config, workers)
    return sim.run(out_dir=out_dir, checkpoint_every=checkpoint_every)
