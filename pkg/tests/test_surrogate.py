import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense_ensemble.analysis import envelope_rate, fit_disorder_onset
from dense_ensemble.physics import CONST, EmitterSpec
from dense_ensemble.pstd import ConfigError
from dense_ensemble.surrogate import (
    Surrogate,
    SurrogateConfig,
    dephasing_matrix,
    dephasing_rates,
    neighbour_distance,
    parallel_prefactor,
    perpendicular_field_estimate,
    perpendicular_prefactor,
    run_surrogate,
    run_sweep,
    rwa_hamiltonian,
    surrogate_rhs,
)

SPEC = EmitterSpec.from_ev(1.0, 2.95e6)
DENSITIES = (1.0e27, 2.5e27, 4.0e27, 5.0e27, 7.5e27, 1.0e28)


def cfg(n_a=4e27, e=1.5e9, **kw):
    return SurrogateConfig(SPEC, n_a, e, **kw)


def random_rho(rng):
    v = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    r = v @ v.conj().T
    return r / np.trace(r).real


def brute_rhs(rho, c: SurrogateConfig):
    """Lindblad RHS assembled from explicit jump operators."""
    H = rwa_hamiltonian(c) / CONST.hbar
    out = -1j * (H @ rho - rho @ H)
    ops = []
    for k in (1, 2, 3):
        L = np.zeros((4, 4))
        L[0, k] = np.sqrt(c.spec.gamma0)
        ops.append(L)
    p = np.clip(np.diag(rho).real, 0, None)
    pref = c.number_density * np.pi * CONST.c**3 / c.spec.omega0**3
    for i in (1, 2, 3):
        d = c.spec.gamma0 * pref / 2 * p[i] * p[0]
        L = np.diag([1.0, 0, 0, 0])
        L[i, i] = -1.0
        ops.append(np.sqrt(d / 2) * L)
    for i, j in ((1, 2), (2, 3), (3, 1)):
        d = c.spec.gamma0 * 3 * pref / (16 * np.sqrt(2)) * np.sqrt(p[i] * p[0] * p[j] * p[0])
        L = np.zeros((4, 4))
        L[i, i], L[j, j] = 1.0, -1.0
        ops.append(np.sqrt(d / 2) * L)
    for L in ops:
        LdL = L.T @ L
        out = out + L @ rho @ L.T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def euler(rho, c, h, n):
    for _ in range(n):
        rho = rho + h * brute_rhs(rho, c)
    return rho


def rk4(rho, c, n):
    m = Surrogate(c)
    for _ in range(n):
        rho = m.step(rho, c.dt)
    return rho


# -------------------------------------------------------------- closed forms
def test_neighbour_distance_at_4e27():
    assert neighbour_distance(4e27) == pytest.approx(5.527e-10, rel=1e-3)


def test_perpendicular_estimate():
    assert perpendicular_field_estimate(0.0, SPEC, 4e27) == (0.0, 0.0)
    ex, ez = perpendicular_field_estimate(1.5e9, SPEC, 4e27)
    assert ex == ez
    assert ex / 1.5e9 == pytest.approx(SPEC.dipole_moment * np.sin(np.pi / 4) / (CONST.e_charge * 5.527e-10), rel=1e-3)
    for n_a in np.geomspace(1e27, 1e28, 9):
        ratio = perpendicular_field_estimate(1.0, SPEC, n_a)[0]
        assert 1e-3 < ratio < 0.5


def test_parallel_prefactor_closed_form():
    w = SPEC.omega0
    assert parallel_prefactor(4e27, w) == 4e27 * np.pi * CONST.c**3 / (2 * w**3)
    assert parallel_prefactor(4e27, w) == pytest.approx(4.8e7, rel=0.02)
    assert perpendicular_prefactor(4e27, w) / parallel_prefactor(4e27, w) == pytest.approx(3 / (8 * np.sqrt(2)), rel=1e-14)


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(n_a=0.0)
    with pytest.raises(ConfigError):
        cfg(run_length=-1.0)


# --------------------------------------------------------------- Hamiltonian
def test_rwa_hamiltonian_zero():
    assert not np.any(rwa_hamiltonian(cfg(e=0.0)))


def test_rwa_dressed_states():
    # with only Omega_y present the spectrum is {0, 0, +-hbar Omega_y / 2}
    c = cfg(n_a=1e10, e=1.5e9)
    h = rwa_hamiltonian(c)
    om = h[0, 2].real * 2 / CONST.hbar
    h_y = h.copy()
    h_y[0, 1] = h_y[1, 0] = h_y[0, 3] = h_y[3, 0] = 0
    ev = np.sort(np.linalg.eigvalsh(h_y))
    np.testing.assert_allclose(ev, np.array([-0.5, 0, 0, 0.5]) * CONST.hbar * om, atol=1e-12 * CONST.hbar * om)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e26, 1e29), st.floats(0, 5e9), st.floats(-1e14, 1e14))
def test_rwa_hermitian(n_a, e, det):
    h = rwa_hamiltonian(cfg(n_a, e, detuning=det))
    assert np.array_equal(h, h.conj().T)
    np.testing.assert_allclose(np.diag(h)[1:], -CONST.hbar * det)


# ----------------------------------------------------------------- dephasing
def test_rates_vanish_in_ground_state():
    rho = np.diag([1.0, 0, 0, 0]).astype(complex)
    r = dephasing_rates(rho, cfg())
    assert not np.any(r.parallel) and not np.any(r.perpendicular)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e26, 1e29))
def test_dephasing_leaves_populations(seed, n_a):
    rho = random_rho(np.random.default_rng(seed))
    c = cfg(n_a)
    r = dephasing_rates(rho, c)
    assert np.all(r.parallel >= 0) and np.all(r.perpendicular >= 0)
    D = dephasing_matrix(r)
    assert np.all(np.diag(D) == 0.0)
    contrib = Surrogate(c).dephasing(rho)
    assert np.max(np.abs(np.diag(contrib))) <= 1e-14 * max(1.0, np.max(np.abs(contrib)))


def test_dephasing_targets_its_pair():
    rho = np.full((4, 4), 0.1 + 0.05j)
    rho = rho + rho.conj().T + np.eye(4)
    rho /= np.trace(rho).real
    c = cfg()
    r = dephasing_rates(rho, c)
    D = dephasing_matrix(r)
    # rho_gy is damped by delta_yy plus a quarter of every channel touching g or y
    expect = r.parallel[1] + 0.25 * (r.parallel[0] + r.parallel[2] + r.perpendicular[0] + r.perpendicular[1])
    assert D[0, 2] == pytest.approx(expect, rel=1e-14)


def test_free_decay_without_drive():
    c = cfg(n_a=1e10, e=0.0, dt=1e-12, run_length=300e-12)
    rho = np.diag([0.0, 0, 1.0, 0]).astype(complex)
    out = rk4(rho, c, 300)
    assert out[2, 2].real == pytest.approx(np.exp(-c.spec.gamma0 * 300e-12), rel=1e-10)


# ----------------------------------------------------------- brute oracles
def test_rhs_matches_jump_operator_form():
    rng = np.random.default_rng(7)
    for n_a in (1e27, 4e27, 1e28):
        c = cfg(n_a, detuning=3e13)
        for _ in range(5):
            rho = random_rho(rng)
            a = surrogate_rhs(rho, c)
            b = brute_rhs(rho, c)
            assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


def test_rk4_against_fine_euler():
    # first-order Euler at dt/100 is itself accurate to ~1e-7 at this drive
    c = cfg(4e27, 1.5e8)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v /= np.linalg.norm(v)
    rho0 = 0.5 * np.outer(v, v.conj()) + 0.5 * np.diag([0.4, 0.2, 0.2, 0.2])
    n = int(round(10e-15 / c.dt))
    got = rk4(rho0.astype(complex), c, n)
    ref = euler(rho0.astype(complex), c, c.dt / 100, 100 * n)
    assert np.max(np.abs(got - ref)) < 1e-6


@pytest.mark.slow
def test_euler_converges_to_rk4_at_full_drive():
    # at 1.5e9 V/m the Euler error at dt/100 is ~4e-5; halving h must halve the gap
    c = cfg(4e27, 1.5e9)
    rho0 = np.diag([1.0, 0, 0, 0]).astype(complex)
    n = int(round(10e-15 / c.dt))
    got = rk4(rho0, c, n)
    e1 = np.max(np.abs(euler(rho0, c, c.dt / 100, 100 * n) - got))
    e2 = np.max(np.abs(euler(rho0, c, c.dt / 200, 200 * n) - got))
    assert 1.8 < e1 / e2 < 2.2


# ---------------------------------------------------------------- dynamics
def test_weak_density_limit_is_two_level_rabi():
    c = cfg(1e20, 1.5e9, run_length=100e-15)
    ts = run_surrogate(c)
    om = 2 * rwa_hamiltonian(c)[0, 2].real / CONST.hbar
    expect = np.sin(om * ts.time / 2) ** 2
    assert np.max(np.abs(ts["rho_yy"] - expect)) < 0.01
    assert np.max(ts["rho_xx"]) < 1e-6


def test_standard_trajectory_shape_and_cost():
    t0 = time.process_time()
    ts = run_surrogate(cfg(4e27, 1.5e9))
    cpu = time.process_time() - t0
    assert cpu < 120.0
    assert ts.time[-1] == pytest.approx(300e-15)
    tail = ts.time > 250e-15
    # rho_yy oscillates and settles; rho_xx, rho_zz rise to equal nonzero values
    assert np.ptp(ts["rho_yy"][ts.time < 50e-15]) > 0.5
    assert np.ptp(ts["rho_yy"][tail]) < 0.1 * np.ptp(ts["rho_yy"])
    np.testing.assert_allclose(ts["rho_xx"], ts["rho_zz"], rtol=1e-12, atol=1e-15)
    assert ts["rho_xx"][-1] > 0.01
    assert np.all(ts["purity"] <= 1 + 1e-9) and np.all(ts["purity"] >= 0.25 - 1e-9)
    assert ts["purity"][-1] < 0.6
    trace = ts["rho_gg"] + ts["rho_xx"] + ts["rho_yy"] + ts["rho_zz"]
    assert np.max(np.abs(trace - 1)) < 1e-9


def test_monotone_density_response():
    runs = run_sweep(cfg(record_stride=4), "number_density", DENSITIES, workers=1)
    fitted = [fit_disorder_onset(ts.time, ts["rho_yy"]).params["gamma_ens"] for ts in runs]
    early = [envelope_rate(ts.time[ts.time < 150e-15], ts["rho_yy"][ts.time < 150e-15])[0] for ts in runs]
    assert all(b >= a for a, b in zip(fitted, fitted[1:]))
    assert all(b >= a for a, b in zip(early, early[1:]))


def test_reproducible_and_sweep_parallel_identical():
    c = cfg(run_length=20e-15)
    assert run_surrogate(c).equals(run_surrogate(c))
    serial = run_sweep(c, "number_density", (1e27, 4e27), workers=1)
    parallel = run_sweep(c, "number_density", (1e27, 4e27), workers=2)
    assert all(a.equals(b) for a, b in zip(serial, parallel))


def test_invalid_sweep_key():
    with pytest.raises(ConfigError):
        run_sweep(cfg(), "spec", [1.0])
