"""Physical constants, emitter/drive descriptions and small closed-form helpers.

Everything here is SI. Energies may be given in eV at the config level and are
converted once by :func:`EmitterSpec.from_ev`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _c


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = _c.c
    # from mu0 and c rather than the rounded CODATA value, so c^2 eps0 mu0 == 1
    eps0: float = 1.0 / (_c.mu_0 * _c.c**2)
    mu0_perm: float = _c.mu_0
    hbar: float = _c.hbar
    e_charge: float = _c.e


CONST = PhysicalConstants()
ETA0 = float(np.sqrt(CONST.mu0_perm / CONST.eps0))


def derive_dipole_moment(gamma0: float, omega0: float) -> float:
    """Transition dipole magnitude (C m) from the vacuum emission rate.

    Inverts gamma0 = omega0**3 |mu|**2 / (3 pi eps0 hbar c**3).
    """
    if not (gamma0 > 0 and omega0 > 0):
        raise ValueError(f"gamma0 and omega0 must be positive, got {gamma0!r}, {omega0!r}")
    k = CONST
    return float(np.sqrt(3 * np.pi * k.eps0 * k.hbar * k.c**3 * gamma0 / omega0**3))


def rabi_frequency(dipole, field):
    """Coupling frequency mu*E/hbar in rad/s. Works elementwise on arrays."""
    return np.multiply(dipole, field) / CONST.hbar


@dataclass(frozen=True)
class EmitterSpec:
    transition_energy: float  # J
    gamma0: float  # 1/s
    dipole_moment: float = field(init=False)
    omega0: float = field(init=False)

    def __post_init__(self):
        if not (self.transition_energy > 0 and self.gamma0 > 0):
            raise ValueError("transition_energy and gamma0 must be positive")
        omega0 = self.transition_energy / CONST.hbar
        object.__setattr__(self, "omega0", omega0)
        object.__setattr__(self, "dipole_moment", derive_dipole_moment(self.gamma0, omega0))

    @classmethod
    def from_ev(cls, energy_ev: float, gamma0: float) -> "EmitterSpec":
        return cls(energy_ev * CONST.e_charge, gamma0)

    @property
    def transition_energy_ev(self) -> float:
        return self.transition_energy / CONST.e_charge


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-12:
        raise ValueError(f"{name} must be unit-norm (|v| = {n!r})")
    return v


@dataclass(frozen=True)
class DriveSpec:
    """Monochromatic plane-wave drive. ``frequency`` is angular (rad/s)."""

    amplitude: float
    frequency: float
    polarization: tuple = (0.0, 1.0, 0.0)
    propagation: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        pol = _unit(self.polarization, "polarization")
        prop = _unit(self.propagation, "propagation")
        if abs(float(pol @ prop)) > 1e-12:
            raise ValueError("polarization must be perpendicular to propagation")
        if self.frequency <= 0:
            raise ValueError("drive frequency must be positive")
        object.__setattr__(self, "polarization", tuple(float(x) for x in pol))
        object.__setattr__(self, "propagation", tuple(float(x) for x in prop))

    @classmethod
    def from_hz(cls, amplitude, frequency_hz, **kw) -> "DriveSpec":
        return cls(amplitude, 2 * np.pi * frequency_hz, **kw)

    @property
    def frequency_hz(self) -> float:
        return self.frequency / (2 * np.pi)

    @property
    def period(self) -> float:
        return 2 * np.pi / self.frequency
