"""Four-level directional-basis emitter: Hamiltonian, Lindblad RHS, RK4, current.

Basis ordering is (|g>, |e_x>, |e_y>, |e_z>). The Hamiltonian follows the
lab-frame form with real instantaneous fields,

    H = diag(0, E, E, E) + sum_eta hbar*Omega_eta (|g><e_eta| + |e_eta><g|),

so the dipole operator is mu_eta = -dH/dE_eta = -mu (|g><e_eta| + h.c.).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .physics import CONST, EmitterSpec
from .pstd import NumericFailure

G, EX, EY, EZ = 0, 1, 2, 3
TRACE_FAIL = 1e-6


@dataclass(frozen=True)
class LindbladChannel:
    """Collapse operator |to><from| at ``rate`` (1/s)."""

    from_state: int
    to_state: int
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"negative Lindblad rate {self.rate!r}")

    def operator(self) -> np.ndarray:
        op = np.zeros((4, 4), dtype=complex)
        op[self.to_state, self.from_state] = 1.0
        return op


def spontaneous_channels(gamma0: float) -> list:
    return [LindbladChannel(k, G, gamma0) for k in (EX, EY, EZ)]


@dataclass(frozen=True)
class DirectionalHamiltonian:
    transition_energy: float  # J
    couplings: tuple  # (Omega_x, Omega_y, Omega_z), rad/s

    def matrix(self) -> np.ndarray:
        h = np.zeros((4, 4), dtype=complex)
        h[1, 1] = h[2, 2] = h[3, 3] = self.transition_energy
        for k, om in enumerate(self.couplings, start=1):
            h[0, k] = CONST.hbar * om
            h[k, 0] = CONST.hbar * np.conj(om)
        return h


def build_hamiltonian(E_local, spec: EmitterSpec) -> DirectionalHamiltonian:
    E_local = np.asarray(E_local, dtype=float)
    if not np.all(np.isfinite(E_local)):
        raise ValueError("local field must be finite")
    om = spec.dipole_moment * E_local / CONST.hbar
    return DirectionalHamiltonian(spec.transition_energy, tuple(complex(x) for x in om))


def dipole_operator(axis: int, spec: EmitterSpec) -> np.ndarray:
    """-dH/dE_axis for the directional Hamiltonian (axis 0, 1, 2 = x, y, z)."""
    op = np.zeros((4, 4), dtype=complex)
    op[G, axis + 1] = op[axis + 1, G] = -spec.dipole_moment
    return op


def lindblad_rhs(rho: np.ndarray, H, channels: Sequence[LindbladChannel]) -> np.ndarray:
    """drho/dt = -(i/hbar)[H, rho] - sum_d gamma_d/2 (s+s rho + rho s+s - 2 s rho s+)."""
    Hm = H.matrix() if isinstance(H, DirectionalHamiltonian) else np.asarray(H)
    out = -1j / CONST.hbar * (Hm @ rho - rho @ Hm)
    for ch in channels:
        if ch.rate < 0:
            raise ValueError("negative Lindblad rate")
        if ch.rate == 0:
            continue
        s = ch.operator()
        sd = s.conj().T
        sds = sd @ s
        out -= 0.5 * ch.rate * (sds @ rho + rho @ sds - 2 * s @ rho @ sd)
    return out


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())


def rk4_step(rho: np.ndarray, rhs: Callable[[np.ndarray], np.ndarray], dt: float) -> np.ndarray:
    """One classical RK4 step; the result is re-Hermitized but not renormalized."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * dt * k1)
    k3 = rhs(rho + 0.5 * dt * k2)
    k4 = rhs(rho + dt * k3)
    out = hermitize(rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
    tr = np.trace(out, axis1=-2, axis2=-1).real
    if np.any(np.abs(tr - 1.0) > TRACE_FAIL):
        raise NumericFailure(f"trace drifted to {np.max(np.abs(tr - 1.0)):.3e}")
    return out


def free_current(rho_dot: np.ndarray, spec: EmitterSpec, number_density: float) -> np.ndarray:
    """J_eta = N_A Tr(rho_dot mu_eta) (A/m^2). Accepts (4,4) or (N,4,4)."""
    rd = np.asarray(rho_dot)
    # Tr(rho_dot mu_eta) = -mu (rho_dot[g, e] + rho_dot[e, g])
    tr = -spec.dipole_moment * (rd[..., G, 1:] + rd[..., 1:, G])
    scale = np.maximum(np.abs(tr.real), 1e-300)
    if np.any(np.abs(tr.imag) > 1e-10 * np.maximum(scale, np.abs(tr).max(initial=0.0))):
        raise NumericFailure("free current has a non-negligible imaginary part")
    return number_density * tr.real


def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-9, eig_tol=1e-9) -> None:
    rho = np.asarray(rho)
    if np.max(np.abs(rho - np.swapaxes(rho, -1, -2).conj()), initial=0.0) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.max(np.abs(tr - 1.0)) > trace_tol:
        raise ValueError("density matrix trace differs from 1")
    if np.min(np.linalg.eigvalsh(hermitize(rho))) < -eig_tol:
        raise ValueError("density matrix has a negative eigenvalue")


def ground_state(n: int | None = None) -> np.ndarray:
    rho = np.zeros((4, 4), dtype=complex)
    rho[G, G] = 1.0
    if n is None:
        return rho
    return np.repeat(rho[None], n, axis=0)


class EmitterBank:
    """Density matrices for a batch of cells sharing one EmitterSpec.

    Internally stored component-major, shape (4, 4, N), so every matrix entry
    is a contiguous vector over cells. The RHS is written out for the default
    channel set (e_eta -> g at gamma) and real couplings, which is what the
    lab-frame simulation needs; :func:`lindblad_rhs` is the general reference
    it is tested against. Sums over directions are always ordered (x + y) + z
    so relabelling x <-> y maps results bit-for-bit.
    """

    def __init__(self, n: int, spec: EmitterSpec, gamma: float | None = None, dipole: float | None = None):
        self.spec = spec
        self.gamma = spec.gamma0 if gamma is None else float(gamma)
        # coupling to the field; the decay rate stays gamma regardless
        self.dipole = spec.dipole_moment if dipole is None else float(dipole)
        self._r = np.ascontiguousarray(np.moveaxis(ground_state(n), 0, -1))
        self._rd = np.zeros_like(self._r)

    @property
    def n(self) -> int:
        return self._r.shape[-1]

    @property
    def rho(self) -> np.ndarray:
        """(N, 4, 4) view of the density matrices."""
        return np.moveaxis(self._r, -1, 0)

    @rho.setter
    def rho(self, value) -> None:
        self._r[...] = np.moveaxis(np.asarray(value, dtype=complex), 0, -1)

    @property
    def rho_dot(self) -> np.ndarray:
        return np.moveaxis(self._rd, -1, 0)

    @rho_dot.setter
    def rho_dot(self, value) -> None:
        self._rd[...] = np.moveaxis(np.asarray(value, dtype=complex), 0, -1)

    def rhs(self, rho: np.ndarray, omega: np.ndarray) -> np.ndarray:
        """drho/dt for (N, 4, 4) states and (N, 3) real couplings mu*E/hbar."""
        r = np.ascontiguousarray(np.moveaxis(rho, 0, -1))
        return np.moveaxis(self._rhs(r, np.ascontiguousarray(np.asarray(omega, dtype=float).T)), -1, 0)

    def _rhs(self, r: np.ndarray, w: np.ndarray) -> np.ndarray:
        # r: (4, 4, N), w: (3, N). Blocks: p = rho_gg, c_j = rho_{g e_j}, M = rho_{e e}
        w0 = self.spec.omega0
        g = self.gamma
        c = r[0, 1:]
        M = r[1:, 1:]
        out = np.empty_like(r)
        # d c_j = -i (sum_k w_k M_kj - w_j p - w0 c_j) - g/2 c_j
        s = (w[0] * M[0] + w[1] * M[1]) + w[2] * M[2]
        s -= w * r[0, 0]
        s -= w0 * c
        dc = -1j * s
        if g:
            dc -= (0.5 * g) * c
        out[0, 1:] = dc
        out[1:, 0] = dc.conj()
        # d M_ij = -i (w_i c_j - w_j conj(c_i)) - g M_ij
        t = w[:, None] * c[None, :]
        t -= w[None, :] * c.conj()[:, None]
        dM = -1j * t
        if g:
            dM -= g * M
        out[1:, 1:] = dM
        # d p = -2 sum_k w_k Im c_k + g tr M
        im = c.imag
        dp = -2.0 * ((w[0] * im[0] + w[1] * im[1]) + w[2] * im[2])
        if g:
            dp = dp + g * ((M[0, 0].real + M[1, 1].real) + M[2, 2].real)
        out[0, 0] = dp
        return out

    def step(self, E_cells: np.ndarray, dt: float) -> None:
        """Advance all cells one RK4 step with the field held at ``E_cells`` (N, 3).

        Afterwards ``rho_dot`` is the RHS at the new state, which is what the
        free current is built from.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        w = (self.dipole / CONST.hbar) * np.asarray(E_cells, dtype=float).T
        w = np.ascontiguousarray(w)
        r = self._r
        k1 = self._rhs(r, w)
        k2 = self._rhs(r + (0.5 * dt) * k1, w)
        k3 = self._rhs(r + (0.5 * dt) * k2, w)
        k4 = self._rhs(r + dt * k3, w)
        k2 += k3
        k2 *= 2.0
        k1 += k2
        k1 += k4
        new = r + (dt / 6.0) * k1
        new = 0.5 * (new + new.transpose(1, 0, 2).conj())
        tr = ((new[0, 0].real + new[1, 1].real) + new[2, 2].real) + new[3, 3].real
        dev = np.max(np.abs(tr - 1.0), initial=0.0)
        if dev > TRACE_FAIL:
            raise NumericFailure(f"trace drifted to {dev:.3e}")
        self._r = new
        self._rd = self._rhs(new, w)

    def current(self, number_density: float) -> np.ndarray:
        """(N, 3) free current density from the stored rho_dot."""
        rd = self._rd
        tr = -self.dipole * (rd[0, 1:] + rd[1:, 0])
        return number_density * np.ascontiguousarray(tr.real.T)

    def populations(self) -> np.ndarray:
        """(N, 4) diagonal of rho."""
        return np.ascontiguousarray(np.einsum("iin->ni", self._r).real)
