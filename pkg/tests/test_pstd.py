import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dense_ensemble.physics import CONST, DriveSpec
from dense_ensemble.pstd import (
    ConfigError,
    FieldGrid,
    NumericFailure,
    PMLConfig,
    SourcePlane,
    apply_source,
    pml_reflection_test,
    spectral_curl,
    stable_dt,
    step_E,
    step_H,
)

from conftest import zero_crossing_frequency

L = 1e-9


def periodic(dims=(8, 10, 12)):
    return FieldGrid(dims, L, stable_dt(L))


def coords(grid):
    return np.meshgrid(*[np.arange(n) * L for n in grid.dims], indexing="ij")


def test_stable_dt():
    dt = stable_dt(L)
    assert dt == pytest.approx(0.9 * 2 / (CONST.c * np.pi * np.sqrt(3)) * L)
    assert dt == pytest.approx(1.103e-18, rel=1e-3)
    # period cap only binds for coarse grids
    T = 1 / 241e12
    assert stable_dt(1e-6, 2 * np.pi * 241e12) == pytest.approx(T / 40)


def test_curl_uniform_field_zero():
    g = periodic()
    F = np.zeros((3,) + g.dims)
    F[:] = np.array([1.0, -2.0, 3.0]).reshape(3, 1, 1, 1)
    assert np.max(np.abs(spectral_curl(F, g))) < 1e-10 * 3 / L


@pytest.mark.parametrize("m", [1, 2, 5])
def test_curl_single_mode(m):
    g = periodic()
    x, y, z = coords(g)
    k = 2 * np.pi * m / (g.dims[2] * L)
    F = np.zeros((3,) + g.dims)
    F[1] = np.sin(k * z)
    c = spectral_curl(F, g)
    expect = -k * np.cos(k * z)
    assert np.max(np.abs(c[0] - expect)) < 1e-9 * k
    assert np.max(np.abs(c[1:])) < 1e-9 * k


def test_curl_of_gradient_zero():
    g = periodic()
    x, y, z = coords(g)
    kx, ky, kz = (2 * np.pi * np.array([1, 3, 2]) / (np.array(g.dims) * L))
    phase = kx * x + ky * y + kz * z
    grad = np.stack([kx * np.cos(phase), ky * np.cos(phase), kz * np.cos(phase)])
    c = spectral_curl(grad, g)
    assert np.max(np.abs(c)) < 1e-9 * np.sqrt(kx**2 + ky**2 + kz**2) ** 2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(0, 4), st.integers(0, 5), st.integers(0, 2), st.integers(0, 2))
def test_spectral_derivative_exact_for_resolvable_modes(mx, my, mz, comp, ax):
    g = periodic()
    m = (mx, my, mz)
    k = 2 * np.pi * np.array(m) / (np.array(g.dims) * L)
    x, y, z = coords(g)
    phase = k[0] * x + k[1] * y + k[2] * z
    F = np.cos(phase)[None]
    d = g.derivative(F, ax)[0]
    expect = -k[ax] * np.sin(phase)
    scale = max(np.linalg.norm(k), 1.0 / L * 1e-3)
    assert np.max(np.abs(d - expect)) <= 1e-9 * scale


def test_curl_shape_mismatch():
    g = periodic()
    with pytest.raises(ValueError):
        spectral_curl(np.zeros((3, 2, 2, 2)), g)


def test_step_H_zero_E_unchanged():
    g = periodic()
    g.H[:] = np.random.default_rng(0).standard_normal(g.H.shape)
    h0 = g.H.copy()
    step_H(g)
    assert np.array_equal(g.H, h0)


def test_step_H_standing_wave_linear_order():
    g = periodic()
    x, y, z = coords(g)
    k = 2 * np.pi * 2 / (g.dims[2] * L)
    g.E[1] = np.cos(k * z)
    step_H(g)
    # dH/dt = -curl E / mu0, curl E = (k sin kz, 0, 0)
    expect = -g.dt / CONST.mu0_perm * k * np.sin(k * z)
    assert np.max(np.abs(g.H[0] - expect)) < 1e-9 * np.max(np.abs(expect))
    assert np.max(np.abs(g.H[1:])) < 1e-9 * np.max(np.abs(expect))


def test_step_E_zero_H_unchanged():
    g = periodic()
    g.E[:] = 1.0
    step_E(g)
    assert np.all(g.E == 1.0)
    assert g.step_index == 1


def test_step_E_current_integrates():
    g = periodic()
    g.J[1, 3, 4, 5] = 2.5e12
    step_E(g)
    assert g.E[1, 3, 4, 5] == pytest.approx(-2.5e12 * g.dt / CONST.eps0, rel=1e-15)
    assert np.count_nonzero(g.E) == 1


def test_step_dt_mismatch():
    g = periodic()
    with pytest.raises(ValueError):
        step_H(g, dt=g.dt * 2)


def test_nan_is_numeric_failure():
    g = periodic()
    g.E[0, 1, 1, 1] = np.nan
    with pytest.raises(NumericFailure):
        g.step_H()


def test_vacuum_energy_conserved():
    g = periodic((16, 14, 15))
    rng = np.random.default_rng(3)
    # band-limited random field: low modes only
    spec = np.zeros((3, 16, 14, 15), dtype=complex)
    spec[:, :4, :4, :4] = rng.standard_normal((3, 4, 4, 4)) + 1j * rng.standard_normal((3, 4, 4, 4))
    g.E[:] = np.fft.ifftn(spec, axes=(1, 2, 3)).real * 1e9
    g.H[:] = 0.0
    energies = []
    for s in range(1000):
        h_prev = g.H.copy()
        g.step_H()
        if s == 0 or s == 999:
            energies.append(g.energy(H_prev=h_prev))
        g.step_E()
    assert abs(energies[1] - energies[0]) / energies[0] < 1e-6


def test_energy_mask():
    g = periodic()
    g.E[:] = 1.0
    mask = np.zeros(g.dims, bool)
    mask[0, 0, 0] = True
    assert g.energy(mask=mask) == pytest.approx(0.5 * CONST.eps0 * 3 * L**3)


def test_pml_config_validation():
    with pytest.raises(ConfigError):
        FieldGrid((1, 1, 40), L, stable_dt(L), PMLConfig(16, axes=(False, False, True)))
    with pytest.raises(ConfigError):
        FieldGrid((1, 1, 41), L, stable_dt(L), PMLConfig(7, axes=(False, False, True)))
    with pytest.raises(ConfigError):
        FieldGrid((1, 1, 31), L, stable_dt(L), PMLConfig(16, axes=(False, False, True)))


def test_pml_profile_grading():
    p = PMLConfig()
    prof = p.profile(L)
    assert len(prof) == p.thickness
    assert np.all(np.diff(prof) > 0)
    assert prof[-1] < p.sigma_max(L)
    assert np.all(PMLConfig(enabled=False).profile(L) == 0)


def test_pml_default_meets_bound():
    assert pml_reflection_test(PMLConfig()) <= 1e-5


def test_pml_disabled_order_unity():
    r = pml_reflection_test(PMLConfig(enabled=False))
    assert 0.3 < r < 3.0


def test_pml_thicker_not_worse():
    assert pml_reflection_test(PMLConfig(32)) <= pml_reflection_test(PMLConfig(16))


def test_source_validation(drive):
    g = FieldGrid((1, 1, 61), L, stable_dt(L), PMLConfig(16, axes=(False, False, True)))
    with pytest.raises(ConfigError):
        SourcePlane(10, drive).validate(g)
    SourcePlane(20, drive).validate(g)
    tilted = DriveSpec(1.0, 1e15, polarization=(1, 0, 0), propagation=(0, 0.6, 0.8))
    with pytest.raises(ConfigError):
        SourcePlane(20, tilted).axis
    with pytest.raises(ValueError):
        apply_source(g, SourcePlane(20, drive), -1.0)


def test_source_silent_at_t0(drive):
    g = FieldGrid((1, 1, 61), L, stable_dt(L), PMLConfig(16, axes=(False, False, True)))
    apply_source(g, SourcePlane(20, drive), 0.0)
    assert not np.any(g.J)


def test_even_axis_source_has_no_nyquist_component(drive):
    g = FieldGrid((1, 1, 64), L, stable_dt(L))
    src = SourcePlane(20, drive, waveform=lambda t: 1.0)
    apply_source(g, src, 1e-15)
    j = g.J[1, 0, 0]
    alt = (-1.0) ** np.arange(64)
    assert abs(j @ alt) < 1e-12 * np.abs(j).max()


def run_plane_wave(drive, periods, dims=(1, 1, 93), t=16, probe_offset=20):
    dt = stable_dt(L, drive.frequency)
    axes = (False, False, True)
    g = FieldGrid(dims, L, dt, PMLConfig(t, axes=axes))
    src = SourcePlane(t + 5, drive)
    probe = t + 5 + probe_offset
    nsteps = int(np.ceil(periods * drive.period / dt))
    out = np.empty((nsteps, 3))
    for s in range(nsteps):
        g.J[...] = 0.0
        g.step_H()
        apply_source(g, src, (s + 0.5) * dt)
        g.step_E()
        out[s] = g.E[:, dims[0] // 2, dims[1] // 2, probe]
    return (np.arange(nsteps) + 1) * dt, out


def test_plane_wave_amplitude_frequency(drive):
    t, e = run_plane_wave(drive, 15)
    late = t > 8 * drive.period
    ey = e[late, 1]
    amp = 0.5 * (ey.max() - ey.min())
    assert amp == pytest.approx(drive.amplitude, rel=1e-2)
    assert zero_crossing_frequency(t[late], ey) == pytest.approx(drive.frequency, rel=1e-3)


def test_plane_wave_polarization_purity():
    d = DriveSpec.from_hz(1.5e9, 241e12)
    t, e = run_plane_wave(d, 3, dims=(3, 4, 93))
    assert np.max(np.abs(e[:, 1])) > 0.1 * d.amplitude
    assert np.max(np.abs(e[:, [0, 2]])) < 1e-4 * d.amplitude


def test_determinism(drive):
    def once():
        g = FieldGrid((19, 19, 21), L, stable_dt(L), PMLConfig(8))
        src = SourcePlane(10, drive, ramp_periods=0.01)
        for s in range(30):
            g.J[...] = 0
            g.step_H()
            apply_source(g, src, (s + 0.5) * g.dt)
            g.step_E()
        return g.E.copy(), g.H.copy()

    a, b = once(), once()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_state_roundtrip(drive):
    g = FieldGrid((19, 19, 21), L, stable_dt(L), PMLConfig(8))
    g.E[:] = np.random.default_rng(1).standard_normal(g.E.shape)
    for _ in range(3):
        g.step_H()
        g.step_E()
    st_ = {k: v.copy() for k, v in g.state().items()}
    g2 = FieldGrid((19, 19, 21), L, stable_dt(L), PMLConfig(8))
    g2.load_state(st_, g.step_index)
    for _ in range(3):
        g.step_H(); g.step_E()
        g2.step_H(); g2.step_E()
    assert np.array_equal(g.E, g2.E)
    assert g2.time == g.time
