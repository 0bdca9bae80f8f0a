"""Pseudo-spectral time-domain Maxwell solver on a collocated cubic grid.

Fields are stored as arrays of shape ``(3, nx, ny, nz)`` indexed ``[component,
x, y, z]``. Spatial derivatives are taken with real FFTs along one axis at a
time, so a grid may be degenerate (length 1) along transverse axes, which is
how the 1D plane-wave checks run cheaply.

Time stepping is leapfrog: ``E`` lives at integer steps, ``H`` at half steps.
Boundaries are periodic; absorbing layers are a convolutional stretched
coordinate PML (kappa = 1, alpha = 0) with polynomial grading.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .physics import CONST, ETA0, DriveSpec

log = logging.getLogger(__name__)

AXES = "xyz"
# sigma_max * spacing / (eps0 c) for the default grading; 16 cells of order-3
# grading at this value reflect ~2e-6 of a resolved plane-wave packet.
DEFAULT_SIGMA_NORM = 2.0


class NumericFailure(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class ConfigError(ValueError):
    """Invalid configuration. ``field`` names the offending config entry."""

    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field


def stable_dt(spacing: float, drive_frequency: Optional[float] = None, safety: float = 0.9) -> float:
    """PSTD leapfrog time step: safety * 2/(c pi sqrt 3) * l, capped at T/40."""
    dt = safety * 2.0 / (CONST.c * np.pi * np.sqrt(3.0)) * spacing
    if drive_frequency:
        dt = min(dt, 2 * np.pi / drive_frequency / 40.0)
    return float(dt)


@dataclass
class PMLConfig:
    thickness: int = 16
    order: int = 3
    # peak conductivity in units of eps0*c/spacing; None -> DEFAULT_SIGMA_NORM
    sigma_norm: Optional[float] = None
    axes: tuple = (True, True, True)
    enabled: bool = True

    def sigma_max(self, spacing: float) -> float:
        """Peak conductivity in S/m."""
        norm = DEFAULT_SIGMA_NORM if self.sigma_norm is None else self.sigma_norm
        return norm * CONST.eps0 * CONST.c / spacing

    def profile(self, spacing: float) -> np.ndarray:
        """Conductivity (S/m) at depths 1..thickness cells into the layer."""
        depth = (np.arange(self.thickness) + 0.5) / self.thickness
        if not self.enabled:
            return np.zeros(self.thickness)
        return self.sigma_max(spacing) * depth**self.order


class FieldGrid:
    """E, H, J on a periodic cubic lattice plus CPML auxiliary state."""

    def __init__(
        self,
        dims,
        spacing: float,
        dt: float,
        pml: Optional[PMLConfig] = None,
        workers: int = 1,
    ):
        dims = tuple(int(n) for n in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"dims must be three positive ints, got {dims}", "grid.dims")
        if not spacing > 0:
            raise ConfigError("spacing must be positive", "grid.spacing")
        if not dt > 0:
            raise ConfigError("dt must be positive", "grid.dt")
        self.dims = dims
        self.spacing = float(spacing)
        self.dt = float(dt)
        self.workers = int(workers)
        self.pml = pml if pml is not None else PMLConfig(enabled=False, axes=(False, False, False))

        shape = (3,) + dims
        self.E = np.zeros(shape)
        self.H = np.zeros(shape)
        self.J = np.zeros(shape)
        self.step_index = 0

        self._ik = []
        for ax, n in enumerate(dims):
            if n == 1:
                self._ik.append(None)
                continue
            k = 2 * np.pi * sfft.rfftfreq(n, d=self.spacing)
            ik = 1j * k
            if n % 2 == 0:
                ik[-1] = 0.0  # Nyquist mode has no real odd derivative
            bshape = [1, 1, 1, 1]
            bshape[ax + 1] = -1
            self._ik.append(ik.reshape(bshape))

        self._pml_axes = []
        self.pml_profile = None
        if self.pml.enabled and any(self.pml.axes):
            t = self.pml.thickness
            if t < 8:
                raise ConfigError("pml thickness must be >= 8 cells", "pml.thickness")
            self.pml_profile = self.pml.profile(self.spacing)
            for ax, on in enumerate(self.pml.axes):
                if not on:
                    continue
                if dims[ax] % 2 == 0:
                    # the CPML terms feed the Nyquist mode, which has zero
                    # spectral curl and would grow without bound
                    raise ConfigError(f"axis {AXES[ax]} carries a PML and must have an odd cell count", "grid.dims")
                if dims[ax] < 2 * t + 2:
                    raise ConfigError(
                        f"axis {AXES[ax]} has {dims[ax]} cells, too few for PML of {t}", "pml.thickness"
                    )
                self._pml_axes.append(ax)
        self.pml_thickness = self.pml.thickness if self._pml_axes else 0

        # per-axis coefficient slabs and psi storage: psi[field][axis] = (lo, hi)
        self._coef = {}
        self.psi = {"E": {}, "H": {}}
        if self._pml_axes:
            sig = self.pml_profile
            b_in = np.exp(-sig * self.dt / CONST.eps0)  # depth ordering: interior -> edge
            c_in = b_in - 1.0
            t = self.pml.thickness
            for ax in self._pml_axes:
                bshape = [1, 1, 1, 1]
                bshape[ax + 1] = t
                # low face: index 0 is the outermost cell
                lo = (b_in[::-1].reshape(bshape), c_in[::-1].reshape(bshape))
                hi = (b_in.reshape(bshape), c_in.reshape(bshape))
                self._coef[ax] = (lo, hi)
                slab = [2] + list(dims)
                slab[ax + 1] = t
                for f in ("E", "H"):
                    self.psi[f][ax] = (np.zeros(slab), np.zeros(slab))

    # ------------------------------------------------------------------ geometry
    @property
    def time(self) -> float:
        """Time of the current E field."""
        return self.step_index * self.dt

    def interior_slices(self):
        t = self.pml_thickness
        out = []
        for ax, n in enumerate(self.dims):
            if ax in self._pml_axes:
                out.append(slice(t, n - t))
            else:
                out.append(slice(0, n))
        return tuple(out)

    def in_interior(self, index) -> bool:
        for ax, i in enumerate(index):
            s = self.interior_slices()[ax]
            if not (s.start <= i < s.stop):
                return False
        return True

    def pml_mask(self) -> np.ndarray:
        mask = np.zeros(self.dims, dtype=bool)
        for ax in self._pml_axes:
            sl = [slice(None)] * 3
            sl[ax] = slice(0, self.pml_thickness)
            mask[tuple(sl)] = True
            sl[ax] = slice(self.dims[ax] - self.pml_thickness, None)
            mask[tuple(sl)] = True
        return mask

    # -------------------------------------------------------------- derivatives
    def derivative(self, F: np.ndarray, axis: int) -> np.ndarray:
        """d/d(axis) of a stack of scalar fields shaped (m, nx, ny, nz)."""
        ik = self._ik[axis]
        if ik is None:
            return np.zeros_like(F)
        n = self.dims[axis]
        spec = sfft.rfft(F, axis=axis + 1, workers=self.workers)
        spec *= ik
        return sfft.irfft(spec, n=n, axis=axis + 1, workers=self.workers)

    def _derivs(self, F: np.ndarray, which: Optional[str]):
        """Per-axis derivative pairs, CPML convolution terms folded in.

        Returns (dFy/dx, dFz/dx), (dFx/dy, dFz/dy), (dFx/dz, dFy/dz); ``None``
        for a degenerate axis.
        """
        out = []
        for ax, pair in enumerate(((1, 2), (0, 2), (0, 1))):
            if self._ik[ax] is None:
                out.append(None)
                continue
            d = self.derivative(F[list(pair)], ax)
            if which is not None and ax in self._coef:
                (b_lo, c_lo), (b_hi, c_hi) = self._coef[ax]
                psi_lo, psi_hi = self.psi[which][ax]
                t = self.pml.thickness
                sl_lo = [slice(None)] * 4
                sl_lo[ax + 1] = slice(0, t)
                sl_hi = [slice(None)] * 4
                sl_hi[ax + 1] = slice(self.dims[ax] - t, None)
                d_lo = d[tuple(sl_lo)]
                d_hi = d[tuple(sl_hi)]
                psi_lo *= b_lo
                psi_lo += c_lo * d_lo
                psi_hi *= b_hi
                psi_hi += c_hi * d_hi
                d_lo += psi_lo
                d_hi += psi_hi
            out.append(d)
        return out

    def curl(self, F: np.ndarray, which: Optional[str] = None) -> np.ndarray:
        dx, dy, dz = self._derivs(F, which)
        out = np.zeros_like(F)
        if dx is not None:
            out[2] += dx[0]
            out[1] -= dx[1]
        if dy is not None:
            out[0] += dy[1]
            out[2] -= dy[0]
        if dz is not None:
            out[1] += dz[0]
            out[0] -= dz[1]
        return out

    # ------------------------------------------------------------------ updates
    def step_H(self) -> None:
        """H^{n-1/2} -> H^{n+1/2} from E^n."""
        c = self.curl(self.E, "E")
        self.H -= (self.dt / CONST.mu0_perm) * c
        if not np.isfinite(self.H.sum()):
            raise NumericFailure("non-finite H field", self.step_index)

    def step_E(self) -> None:
        """E^n -> E^{n+1} from H^{n+1/2} and the deposited J."""
        c = self.curl(self.H, "H")
        c -= self.J
        self.E += (self.dt / CONST.eps0) * c
        self.step_index += 1
        if not np.isfinite(self.E.sum()):
            raise NumericFailure("non-finite E field", self.step_index)

    # ------------------------------------------------------------ diagnostics
    def energy(self, H_prev: Optional[np.ndarray] = None, mask: Optional[np.ndarray] = None) -> float:
        """Total EM energy (J). With ``H_prev`` the leapfrog-invariant form
        eps0 E^n.E^n + mu0 H^{n-1/2}.H^{n+1/2} is used."""
        Hb = self.H if H_prev is None else H_prev
        e = CONST.eps0 * np.einsum("c...,c...->...", self.E, self.E)
        h = CONST.mu0_perm * np.einsum("c...,c...->...", self.H, Hb)
        dens = 0.5 * (e + h)
        if mask is not None:
            dens = dens[mask]
        return float(dens.sum() * self.spacing**3)

    def state(self) -> dict:
        st = {"E": self.E, "H": self.H, "J": self.J}
        for f, per_axis in self.psi.items():
            for ax, (lo, hi) in per_axis.items():
                st[f"psi_{f}_{AXES[ax]}_lo"] = lo
                st[f"psi_{f}_{AXES[ax]}_hi"] = hi
        return st

    def load_state(self, st: dict, step_index: int) -> None:
        self.E[...] = st["E"]
        self.H[...] = st["H"]
        self.J[...] = st["J"]
        for f, per_axis in self.psi.items():
            for ax, (lo, hi) in per_axis.items():
                lo[...] = st[f"psi_{f}_{AXES[ax]}_lo"]
                hi[...] = st[f"psi_{f}_{AXES[ax]}_hi"]
        self.step_index = int(step_index)


def spectral_curl(field: np.ndarray, grid: FieldGrid) -> np.ndarray:
    """Curl of a (3, nx, ny, nz) field by Fourier differentiation, no PML."""
    if field.shape != (3,) + grid.dims:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.dims}")
    return grid.curl(field)


def step_H(grid: FieldGrid, dt: Optional[float] = None) -> FieldGrid:
    if dt is not None and dt != grid.dt:
        raise ValueError("grid was built for a different dt")
    grid.step_H()
    return grid


def step_E(grid: FieldGrid, dt: Optional[float] = None) -> FieldGrid:
    if dt is not None and dt != grid.dt:
        raise ValueError("grid was built for a different dt")
    grid.step_E()
    return grid


# ------------------------------------------------------------------- sources
def half_cosine_ramp(duration: float) -> Callable[[float], float]:
    def ramp(t):
        if t <= 0:
            return 0.0
        if t >= duration:
            return 1.0
        return 0.5 * (1.0 - np.cos(np.pi * t / duration))

    return ramp


@dataclass
class SourcePlane:
    """Current sheet transverse to the propagation axis, spanning the whole plane.

    A sheet current K launches E = -eta0 K / 2 in both directions, so the sheet
    carries K = -2 E_d s(t) / eta0 to give downstream amplitude E_d.
    """

    index: int
    drive: DriveSpec
    ramp_periods: float = 5.0
    waveform: Optional[Callable[[float], float]] = None  # overrides ramp*sin

    @property
    def axis(self) -> int:
        prop = np.abs(np.asarray(self.drive.propagation))
        ax = int(np.argmax(prop))
        if abs(prop[ax] - 1.0) > 1e-12:
            raise ConfigError("propagation must be along a grid axis", "drive.propagation")
        return ax

    def signal(self, t: float) -> float:
        if self.waveform is not None:
            return self.waveform(t)
        ramp = half_cosine_ramp(self.ramp_periods * self.drive.period)
        return ramp(t) * np.sin(self.drive.frequency * t)

    def validate(self, grid: FieldGrid) -> None:
        ax = self.axis
        s = grid.interior_slices()[ax]
        if not (s.start < self.index < s.stop - 1):
            raise ConfigError(
                f"source plane {self.index} on axis {AXES[ax]} is not strictly inside the interior "
                f"[{s.start}, {s.stop})",
                "source.index",
            )

    def current(self, t: float, spacing: float) -> np.ndarray:
        """Volume current density (A/m^2, 3-vector) in each source cell."""
        k = -2.0 * self.drive.amplitude * self.signal(t) / ETA0
        return (k / spacing) * np.asarray(self.drive.polarization)

    def plane(self, grid: FieldGrid):
        sl = [slice(None)] * 3
        sl[self.axis] = self.index
        return (slice(None),) + tuple(sl)

    def nyquist_profile(self, grid: FieldGrid) -> Optional[np.ndarray]:
        """Alternating correction removing the sheet's Nyquist component on an
        even-length axis (that mode has zero discrete curl and never radiates)."""
        n = grid.dims[self.axis]
        if n % 2:
            return None
        shape = [1, 1, 1, 1]
        shape[self.axis + 1] = n
        sign = (-1.0) ** ((np.arange(n) - self.index) % 2)
        return (-sign / n).reshape(shape)


def apply_source(grid: FieldGrid, source: SourcePlane, t: float) -> FieldGrid:
    """Add the sheet current for time ``t`` into ``grid.J`` on the source plane."""
    if t < 0:
        raise ValueError("t must be >= 0")
    j = source.current(t, grid.spacing)
    if np.any(j):
        grid.J[source.plane(grid)] += j.reshape(3, 1, 1)
        nyq = source.nyquist_profile(grid)
        if nyq is not None:
            grid.J += j.reshape(3, 1, 1, 1) * nyq
    return grid


# -------------------------------------------------------------- PML checks
def _launch_pulse(grid: FieldGrid, center: float, width: float, wavelength: float) -> None:
    """Rightward (+z) y-polarized Gaussian wave packet as an initial condition.

    ``center``, ``width`` and ``wavelength`` are in cells. H is laid down at
    t = -dt/2 to match the leapfrog staggering.
    """
    z = np.arange(grid.dims[2], dtype=float)
    shift = CONST.c * grid.dt / (2 * grid.spacing)

    def prof(u):
        return np.exp(-0.5 * ((u - center) / width) ** 2) * np.sin(2 * np.pi * (u - center) / wavelength)

    grid.E[1] = prof(z)[None, None, :]
    grid.H[0] = -prof(z + shift)[None, None, :] / ETA0


def _probe_series(grid: FieldGrid, probe: int, nsteps: int) -> np.ndarray:
    out = np.empty(nsteps)
    for s in range(nsteps):
        grid.step_H()
        grid.step_E()
        out[s] = grid.E[1, 0, 0, probe]
    return out


def pml_reflection_test(
    pml: PMLConfig,
    spacing: float = 1e-9,
    dt: Optional[float] = None,
    interior: int = 40,
    width: float = 3.0,
    wavelength: float = 10.0,
) -> float:
    """Max |reflected + wraparound| / incident peak for a plane-wave packet.

    A packet resolved on the grid (``width`` and ``wavelength`` in cells) starts
    in the middle of a 1D interior and runs into the +z layer. The probe sits
    at the launch point; the series there is compared against a periodic
    reference long enough that nothing returns within the window, so the
    difference is everything the boundary sent back. The pulse-sheet source
    is not used here because at optical frequencies and nm spacing its
    wavelength is far larger than any affordable test domain.
    """
    if dt is None:
        dt = stable_dt(spacing)
    t = pml.thickness
    n = interior + 2 * t + 1
    center = t + interior // 2
    # out to the far edge of the layer and back, twice
    nsteps = int(np.ceil(2 * (interior + 4 * t) * spacing / (CONST.c * dt)))
    axes = (False, False, True)

    test = FieldGrid((1, 1, n), spacing, dt, PMLConfig(t, pml.order, pml.sigma_norm, axes, pml.enabled))
    _launch_pulse(test, center, width, wavelength)
    got = _probe_series(test, center, nsteps)

    travel = int(np.ceil(CONST.c * nsteps * dt / spacing))
    nref = sfft.next_fast_len(n + 2 * travel + 50, real=True)
    ref_grid = FieldGrid((1, 1, nref), spacing, dt, PMLConfig(t, axes=axes, enabled=False))
    _launch_pulse(ref_grid, center, width, wavelength)
    ref = _probe_series(ref_grid, center, nsteps)
    return float(np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
