"""Single-particle surrogate: RWA four-level emitter with density-dependent dephasing.

The drive is along y. The x and z couplings come from a constant estimate of
the field a y-oriented neighbour dipole produces along the diagonal. Dephasing
rates depend on the current state, so the master equation is nonlinear; rates
are re-evaluated at every RK4 stage.

Dephasing channels are projector differences L = sqrt(delta/2) (P_a - P_b).
Such a channel damps rho_ab at delta, coherences between a or b and any
third level at delta/4, and leaves every population untouched. Parallel rates
delta_ii act on the pair (g, e_i); perpendicular rates delta_ij on (e_i, e_j).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .emitter import EX, EY, EZ, G, TRACE_FAIL
from .io import TimeSeries
from .physics import CONST, EmitterSpec
from .pstd import ConfigError, NumericFailure

PAIRS_PERP = ((EX, EY), (EY, EZ), (EZ, EX))


@dataclass(frozen=True)
class SurrogateConfig:
    spec: EmitterSpec
    number_density: float
    drive_amplitude: float
    detuning: float = 0.0  # rad/s
    run_length: float = 300e-15
    dt: float = 0.05e-15
    record_stride: int = 1

    def __post_init__(self):
        if not self.number_density > 0:
            raise ConfigError("number_density must be positive", "surrogate.number_density")
        if not self.run_length > 0:
            raise ConfigError("run_length must be positive", "surrogate.run_length")
        if not self.dt > 0:
            raise ConfigError("dt must be positive", "surrogate.dt")


@dataclass(frozen=True)
class DephasingRates:
    parallel: np.ndarray  # (d_xx, d_yy, d_zz)
    perpendicular: np.ndarray  # (d_xy, d_yz, d_zx)


def neighbour_distance(number_density: float) -> float:
    """Diagonal nearest-neighbour separation r = (3 sqrt 8 / (4 pi N_A))^(1/3)."""
    if not number_density > 0:
        raise ValueError("number_density must be positive")
    return (3 * np.sqrt(8.0) / (4 * number_density * np.pi)) ** (1.0 / 3.0)


def perpendicular_field_estimate(E_y: float, spec: EmitterSpec, number_density: float) -> tuple:
    """(E_x, E_z) from E_y * mu sin(pi/4) / (e r), with e the elementary charge."""
    r = neighbour_distance(number_density)
    ratio = spec.dipole_moment * np.sin(np.pi / 4) / (CONST.e_charge * r)
    return (E_y * ratio, E_y * ratio)


def parallel_prefactor(number_density: float, omega: float) -> float:
    """delta_parallel / (gamma0 * population factor) = N_A pi c^3 / (2 omega^3)."""
    return number_density * np.pi * CONST.c**3 / (2 * omega**3)


def perpendicular_prefactor(number_density: float, omega: float) -> float:
    return 3 * number_density * np.pi * CONST.c**3 / (16 * np.sqrt(2.0) * omega**3)


def couplings(cfg: SurrogateConfig) -> np.ndarray:
    ex, ez = perpendicular_field_estimate(cfg.drive_amplitude, cfg.spec, cfg.number_density)
    return cfg.spec.dipole_moment * np.array([ex, cfg.drive_amplitude, ez]) / CONST.hbar


def rwa_hamiltonian(cfg: SurrogateConfig) -> np.ndarray:
    """diag(0, -D, -D, -D) hbar with hbar Omega_eta / 2 on the (g, e_eta) entries."""
    h = np.zeros((4, 4), dtype=complex)
    h[1, 1] = h[2, 2] = h[3, 3] = -CONST.hbar * cfg.detuning
    for k, om in enumerate(couplings(cfg), start=1):
        h[G, k] = h[k, G] = 0.5 * CONST.hbar * om
    return h


def dephasing_rates(rho: np.ndarray, cfg: SurrogateConfig) -> DephasingRates:
    pop = np.clip(np.diag(rho).real, 0.0, None)
    # sqrt(rho_ii rho_gg) for i = x, y, z
    f = np.sqrt(pop[1:] * pop[G])
    w = cfg.spec.omega0
    g0 = cfg.spec.gamma0
    par = g0 * parallel_prefactor(cfg.number_density, w) * f * f
    perp = g0 * perpendicular_prefactor(cfg.number_density, w) * np.array([f[0] * f[1], f[1] * f[2], f[2] * f[0]])
    return DephasingRates(par, perp)


def dephasing_matrix(rates: DephasingRates) -> np.ndarray:
    """Elementwise damping rates: the dephasing part of drho/dt is -D * rho.

    For L = sqrt(d/2)(P_a - P_b) the dissipator acting on rho_kl is
    -(l_k - l_l)^2 / 2 rho_kl, whose diagonal is identically zero.
    """
    D = np.zeros((4, 4))
    pairs = [((G, k), d) for k, d in zip((EX, EY, EZ), rates.parallel)]
    pairs += list(zip(PAIRS_PERP, rates.perpendicular))
    for (a, b), d in pairs:
        if d == 0.0:
            continue
        l = np.zeros(4)
        l[a] = np.sqrt(0.5 * d)
        l[b] = -l[a]
        D += 0.5 * (l[:, None] - l[None, :]) ** 2
    return D


class Surrogate:
    def __init__(self, cfg: SurrogateConfig):
        self.cfg = cfg
        self.h = rwa_hamiltonian(cfg) / CONST.hbar
        self.g0 = cfg.spec.gamma0

    def coherent_and_decay(self, rho: np.ndarray) -> np.ndarray:
        h = self.h
        out = -1j * (h @ rho - rho @ h)
        g = self.g0
        # e_eta -> g at gamma0 each
        out[G, 1:] -= 0.5 * g * rho[G, 1:]
        out[1:, G] -= 0.5 * g * rho[1:, G]
        out[1:, 1:] -= g * rho[1:, 1:]
        out[G, G] += g * (rho[EX, EX] + rho[EY, EY] + rho[EZ, EZ])
        return out

    def dephasing(self, rho: np.ndarray) -> np.ndarray:
        return -dephasing_matrix(dephasing_rates(rho, self.cfg)) * rho

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        return self.coherent_and_decay(rho) + self.dephasing(rho)

    def step(self, rho: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs(rho)
        k2 = self.rhs(rho + 0.5 * dt * k1)
        k3 = self.rhs(rho + 0.5 * dt * k2)
        k4 = self.rhs(rho + dt * k3)
        new = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        new = 0.5 * (new + new.conj().T)
        dev = abs(np.trace(new).real - 1.0)
        if dev > TRACE_FAIL or not np.isfinite(new).all():
            raise NumericFailure(f"surrogate trace drifted to {dev:.3e}")
        return new


def surrogate_rhs(rho: np.ndarray, cfg: SurrogateConfig) -> np.ndarray:
    return Surrogate(cfg).rhs(rho)


def run_surrogate(cfg: SurrogateConfig, rho0: np.ndarray | None = None) -> TimeSeries:
    """RK4 trajectory from the ground state; columns rho_gg, rho_xx, rho_yy, rho_zz, purity."""
    model = Surrogate(cfg)
    rho = np.zeros((4, 4), complex) if rho0 is None else np.array(rho0, dtype=complex)
    if rho0 is None:
        rho[G, G] = 1.0
    nsteps = int(np.ceil(cfg.run_length / cfg.dt - 1e-9))
    rows = []

    def record(k, r):
        p = np.diag(r).real
        rows.append((k * cfg.dt, p[0], p[1], p[2], p[3], float(np.sum(np.abs(r) ** 2))))

    record(0, rho)
    for k in range(1, nsteps + 1):
        rho = model.step(rho, cfg.dt)
        if k % cfg.record_stride == 0 or k == nsteps:
            record(k, rho)
    a = np.array(rows)
    cols = ("rho_gg", "rho_xx", "rho_yy", "rho_zz", "purity")
    meta = {
        "kind": "surrogate",
        "number_density": cfg.number_density,
        "drive_amplitude": cfg.drive_amplitude,
        "detuning": cfg.detuning,
        "dt": cfg.dt,
    }
    return TimeSeries(a[:, 0], {c: a[:, i + 1] for i, c in enumerate(cols)}, meta)


def _run_one(cfg):
    return run_surrogate(cfg)


def run_sweep(cfg: SurrogateConfig, key: str, values, workers: int = 1) -> list:
    """One trajectory per value of ``key`` (a SurrogateConfig field), in parallel."""
    fields = {"number_density", "drive_amplitude", "detuning", "run_length", "dt"}
    if key not in fields:
        raise ConfigError(f"cannot sweep {key!r}; choose from {sorted(fields)}", "sweep")
    cfgs = [replace(cfg, **{key: float(v)}) for v in values]
    if workers <= 1 or len(cfgs) == 1:
        return [run_surrogate(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, cfgs))
