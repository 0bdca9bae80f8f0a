"""Post-processing: ensemble averages, spectra, fits, decay enhancement, comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnsembleAverage:
    time: float
    rho_bar: np.ndarray  # (4, 4) complex
    purity: float

    @property
    def populations(self) -> np.ndarray:
        return np.diag(self.rho_bar).real.copy()


def _exact_mean(a: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with correctly rounded sums (independent of ordering)."""
    n = a.shape[0]
    flat = a.reshape(n, -1)
    return np.array([math.fsum(flat[:, j]) / n for j in range(flat.shape[1])]).reshape(a.shape[1:])


def ensemble_average(states, time: float = 0.0) -> EnsembleAverage:
    """Arithmetic mean of (N, 4, 4) density matrices and the purity Tr(rho_bar^2).

    Sums are exactly rounded, so the result does not depend on the order in
    which cells are listed.
    """
    states = np.asarray(states)
    if states.ndim != 3 or states.shape[0] == 0:
        raise ValueError("ensemble_average needs at least one (4, 4) state")
    rb = _exact_mean(states.real) + 1j * _exact_mean(states.imag)
    # Tr(rho^2) = sum |rho_ab|^2 for Hermitian rho
    purity = math.fsum((rb.real**2 + rb.imag**2).ravel())
    return EnsembleAverage(time, rb, purity)


# ------------------------------------------------------------------ spectra
def windowed_spectrum(t, y, t0: float, t1: float, min_samples: int = 256) -> tuple:
    """One-sided amplitude spectrum of samples with t0 <= t <= t1 (rectangular window).

    Returns (frequencies in Hz, amplitudes). A unit sinusoid on an exact bin
    has amplitude 1; mean(y**2) == A[0]**2 + sum(A[1:]**2)/2 for odd counts
    (the Nyquist bin, when present, enters like the DC bin).
    """
    from .pstd import ConfigError

    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (t >= t0) & (t <= t1)
    n = int(m.sum())
    if n < min_samples:
        raise ConfigError(f"window [{t0:g}, {t1:g}] holds {n} samples, need >= {min_samples}", "window")
    ts, ys = t[m], y[m]
    dt = (ts[-1] - ts[0]) / (n - 1)
    X = np.fft.rfft(ys)
    amp = np.abs(X) / n
    amp[1:] *= 2.0
    if n % 2 == 0:
        amp[-1] /= 2.0
    return np.fft.rfftfreq(n, dt), amp


def spectrum_power_identity(amp: np.ndarray, n: int) -> float:
    """mean(y**2) reconstructed from a :func:`windowed_spectrum` amplitude array."""
    if n % 2 == 0:
        return float(amp[0] ** 2 + np.sum(amp[1:-1] ** 2) / 2 + amp[-1] ** 2)
    return float(amp[0] ** 2 + np.sum(amp[1:] ** 2) / 2)


def band_peak(freqs, amp, f_lo: float, f_hi: float) -> tuple:
    """(frequency, amplitude) of the largest bin in [f_lo, f_hi]."""
    m = (freqs >= f_lo) & (freqs <= f_hi)
    if not m.any():
        return float("nan"), 0.0
    i = np.argmax(np.where(m, amp, -np.inf))
    return float(freqs[i]), float(amp[i])


def local_peaks(freqs, amp, f_lo: float, f_hi: float, min_rel: float = 0.0) -> list:
    """Local maxima in [f_lo, f_hi] above ``min_rel`` of the band maximum, strongest first."""
    m = np.nonzero((freqs >= f_lo) & (freqs <= f_hi))[0]
    out = []
    top = amp[m].max() if len(m) else 0.0
    for i in m:
        if 0 < i < len(amp) - 1 and amp[i] >= amp[i - 1] and amp[i] > amp[i + 1] and amp[i] >= min_rel * top:
            out.append((float(freqs[i]), float(amp[i])))
    return sorted(out, key=lambda p: -p[1])


# --------------------------------------------------------------------- fits
@dataclass
class FitResult:
    params: dict
    stderr: dict
    residual_rms: float
    converged: bool
    iterations: int
    gradient_norm: float = float("nan")
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "residual_rms": self.residual_rms,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "message": self.message,
        }


def _lm_fit(model, p0, x, y, names, scales, max_nfev=20000, cond_max=1e12) -> FitResult:
    """Levenberg-Marquardt in scaled parameters q = p / scales."""
    from scipy.optimize import least_squares

    scales = np.asarray(scales, dtype=float)
    q0 = np.asarray(p0, dtype=float) / scales

    def resid(q):
        return model(x, *(q * scales)) - y

    sol = least_squares(resid, q0, method="lm", max_nfev=max_nfev, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    q = sol.x
    r = sol.fun
    m, n = len(y), len(q)
    J = sol.jac
    grad = float(np.linalg.norm(J.T @ r))
    jtj = J.T @ J
    s2 = float(r @ r) / max(m - n, 1)
    ok = bool(sol.status > 0 and np.all(np.isfinite(q)) and np.isfinite(s2))
    try:
        cond = np.linalg.cond(jtj)
    except np.linalg.LinAlgError:
        cond = np.inf
    if ok and cond < cond_max:
        cov = np.linalg.inv(jtj) * s2
        se = np.sqrt(np.abs(np.diag(cov))) * scales
    else:
        se = np.full(n, np.inf)
        ok = False
    # gradient small relative to the residual scale and the Jacobian size
    tol = 1e-6 * (np.linalg.norm(J) * np.linalg.norm(r) + 1e-300)
    if grad > tol:
        ok = False
    params = {k: float(v) for k, v in zip(names, q * scales)}
    stderr = {k: float(v) for k, v in zip(names, se)}
    rms = float(np.sqrt(np.mean(r**2)))
    return FitResult(params, stderr, rms, ok, int(sol.nfev), grad, sol.message)


def disorder_onset_model(t, a, gamma, omega, b, c, g):
    return a * np.exp(-gamma * t) * np.cos(omega * t) + b + c * np.exp(-g * t)


def _moving_average(y, k):
    if k <= 1:
        return y.copy()
    pad = np.pad(y, (k // 2, k - 1 - k // 2), mode="edge")
    return np.convolve(pad, np.ones(k) / k, mode="valid")


def oscillation_envelope(t, y, omega):
    """Extrema of y minus its one-period running mean: (times, |values|)."""
    dt = t[1] - t[0]
    k = max(1, int(round(2 * np.pi / omega / dt)))
    r = y - _moving_average(y, k)
    d = np.diff(r)
    idx = np.nonzero((d[:-1] > 0) & (d[1:] <= 0) | (d[:-1] < 0) & (d[1:] >= 0))[0] + 1
    # ignore the edges where the running mean is biased
    idx = idx[(idx >= k // 2) & (idx < len(t) - k // 2)]
    return t[idx], np.abs(r[idx])


def dominant_frequency(t, y) -> float:
    """Angular frequency of the largest non-DC spectral peak of the linearly detrended series."""
    from scipy.signal import detrend

    n = len(y)
    dt = t[1] - t[0]
    yd = detrend(y)
    nfft = 8 * n
    X = np.abs(np.fft.rfft(yd, nfft))
    f = np.fft.rfftfreq(nfft, dt)
    # skip the lowest bins, which carry what the linear detrend left of the slow decay
    lo = max(1, int(np.ceil(2.0 / (n * dt) / (f[1] - f[0]))))
    i = lo + int(np.argmax(X[lo:]))
    return 2 * np.pi * f[i]


def envelope_rate(t, y, omega=None) -> tuple:
    """(rate, log-amplitude at t[0]) from a log-linear fit to oscillation extrema."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if omega is None:
        omega = dominant_frequency(t, y)
    te, ae = oscillation_envelope(t, y, omega)
    keep = ae > 1e-12 * max(np.max(np.abs(y)), 1e-300)
    te, ae = te[keep], ae[keep]
    if len(te) < 3:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(te - t[0], np.log(ae), 1)
    return float(-slope), float(icpt)


DISORDER_PARAMS = ("a", "gamma_ens", "omega", "b", "c", "g")


def _profile_rss(t, y, rates_osc, omegas, rates_slow):
    """Best (rss, a, gamma, omega, b, c, g) with (a, b, c) solved linearly on a grid."""
    best = (np.inf,)
    one = np.ones_like(t)
    for g in rates_slow:
        es = np.exp(-g * t)
        for gam in rates_osc:
            eo = np.exp(-gam * t)
            for om in omegas:
                A = np.column_stack((eo * np.cos(om * t), one, es))
                coef, *_ = np.linalg.lstsq(A, y, rcond=None)
                rss = float(np.sum((A @ coef - y) ** 2))
                if rss < best[0]:
                    best = (rss, coef[0], gam, om, coef[1], coef[2], g)
    return best


def disorder_onset_guess(t, y) -> np.ndarray:
    """Deterministic starting point for :func:`fit_disorder_onset`.

    The slow part b + c exp(-g t) is profiled first; the oscillation frequency
    is the dominant peak of what remains. A coarse grid over (gamma, omega, g),
    with the linear amplitudes (a, b, c) solved exactly at each node, then
    picks the start for the nonlinear fit.
    """
    t = np.asarray(t, float) - t[0]
    y = np.asarray(y, float)
    span = t[-1]
    rates = np.geomspace(0.3 / span, 30.0 / span, 15)
    one = np.ones_like(t)
    trend, best = None, np.inf
    for g in rates:
        A = np.column_stack((one, np.exp(-g * t)))
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        rss = float(np.sum((A @ coef - y) ** 2))
        if rss < best:
            best, trend = rss, A @ coef
    omega0 = dominant_frequency(t, y - trend)
    omegas = omega0 * np.linspace(0.9, 1.1, 9)
    _, a, gam, om, b, c, g = _profile_rss(t, y, rates, omegas, rates)
    # refine the grid once around the coarse optimum
    f = rates[1] / rates[0]
    fine = np.geomspace(1 / f, f, 7)
    _, a, gam, om, b, c, g = _profile_rss(t, y, gam * fine, om * np.linspace(0.975, 1.025, 9), g * fine)
    return np.array([a, gam, om, b, c, g])


def fit_disorder_onset(t, y, p0=None) -> FitResult:
    """Least-squares fit of a exp(-gamma t) cos(omega t) + b + c exp(-g t) (t from t[0])."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if len(t) < 8:
        raise ValueError("series too short to fit")
    if np.ptp(y) <= 1e-12 * max(abs(y).max(), 1e-300):
        # no oscillation and no decay to identify: report the constant honestly
        return FitResult(
            dict(zip(DISORDER_PARAMS, [0.0, float("nan"), float("nan"), float(y.mean()), 0.0, float("nan")])),
            {k: float("inf") for k in DISORDER_PARAMS},
            float(np.sqrt(np.mean((y - y.mean()) ** 2))),
            False,
            0,
            message="constant series: rates are not identifiable",
        )
    tt = t - t[0]
    p0 = disorder_onset_guess(t, y) if p0 is None else np.asarray(p0, float)
    rate_scale = 1.0 / tt[-1]
    scales = [1.0, rate_scale, p0[2], 1.0, 1.0, rate_scale]
    return _lm_fit(disorder_onset_model, p0, tt, y, DISORDER_PARAMS, scales)


def logistic_model(x, L, k, a):
    return L / (1.0 + np.exp(-k * (x - a)))


def logistic_guess(x, y) -> np.ndarray:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    L = 1.05 * float(y.max())
    a = float(x[np.argmin(np.abs(y - L / 2))])
    k = 4.0 / max(float(np.ptp(x)), 1e-300)
    return np.array([L, k, a])


def fit_logistic(x, y, p0=None) -> FitResult:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 4:
        raise ValueError("logistic fit needs at least 4 points")
    p0 = logistic_guess(x, y) if p0 is None else np.asarray(p0, float)
    xs = max(float(np.max(np.abs(x))), 1e-300)
    ys = max(float(np.max(np.abs(y))), 1e-300)
    order = np.argsort(x)
    res = _lm_fit(logistic_model, p0, x[order], y[order], ("L", "k", "a"), [ys, 1.0 / xs, xs])
    return res


# ---------------------------------------------------------- decay enhancement
def decay_enhancement(j_d, E_local, E_drive) -> float:
    """gamma_d / gamma0 = 1 + Re(j* . E_ext) / Re(j* . E_drive), E_ext = E_local - E_drive."""
    j = np.asarray(j_d, dtype=complex)
    El = np.asarray(E_local, dtype=complex)
    Ed = np.asarray(E_drive, dtype=complex)
    den = float(np.real(np.vdot(j, Ed)))
    scale = np.linalg.norm(j) * np.linalg.norm(Ed)
    if scale == 0 or abs(den) <= 1e-12 * scale:
        raise ValueError("Re(j* . E_drive) vanishes; enhancement undefined")
    return 1.0 + float(np.real(np.vdot(j, El - Ed))) / den


def decay_enhancement_dipole(mu, E_ext, omega: float) -> float:
    """Oscillating-dipole form: 1 + 6 pi eps0 / |mu|^2 / k^3 * Im(mu* . E_ext), k = omega / c."""
    from .physics import CONST

    mu = np.asarray(mu, dtype=complex)
    n2 = float(np.real(np.vdot(mu, mu)))
    if n2 == 0:
        raise ValueError("dipole moment vanishes")
    k = omega / CONST.c
    return 1.0 + 6 * np.pi * CONST.eps0 / n2 / k**3 * float(np.imag(np.vdot(mu, np.asarray(E_ext, dtype=complex))))


# --------------------------------------------------------------- comparison
def population_ordering(values: dict, tie_factor: float = 2.0) -> list:
    """Columns ranked by value, grouped into ties.

    Walking down from the largest, a value joins the current group while it is
    within ``tie_factor`` of that group's largest member. Returns a list of
    sorted name lists, e.g. [["rho_yy"], ["rho_xx", "rho_zz"]].
    """
    groups = []
    top = None
    for name in sorted(values, key=lambda c: -values[c]):
        v = values[name]
        if top is not None and v * tie_factor >= top and (v > 0) == (top > 0):
            groups[-1].append(name)
        else:
            groups.append([name])
            top = v
    return [sorted(g) for g in groups]


def compare_runs(full, surrogate, columns=("rho_xx", "rho_yy", "rho_zz"), steady_fraction: float = 0.2,
                 tie_factor: float = 2.0) -> dict:
    """RMS deviations, steady-state deltas and envelope-rate ratio on a common time grid.

    Population orderings treat steady values within ``tie_factor`` of each
    other as equal, so a symmetric pair (rho_xx, rho_zz) counts as one rank.
    """
    from .pstd import ConfigError

    t0 = max(full.time[0], surrogate.time[0])
    t1 = min(full.time[-1], surrogate.time[-1])
    if not t1 > t0:
        raise ConfigError("time ranges do not overlap", "inputs")
    dt = max(np.median(np.diff(full.time)), np.median(np.diff(surrogate.time)))
    n = int(np.floor((t1 - t0) / dt + 1e-9)) + 1
    tg = t0 + dt * np.arange(n)
    report = {"t0": float(t0), "t1": float(t1), "samples": int(n), "columns": {}}
    steady = {}
    for c in columns:
        a = np.interp(tg, full.time, full[c])
        b = np.interp(tg, surrogate.time, surrogate[c])
        tail = tg >= t1 - steady_fraction * (t1 - t0)
        sa, sb = float(a[tail].mean()), float(b[tail].mean())
        steady[c] = (sa, sb)
        report["columns"][c] = {
            "rms_deviation": float(np.sqrt(np.mean((a - b) ** 2))),
            "max_deviation": float(np.max(np.abs(a - b))),
            "steady_full": sa,
            "steady_surrogate": sb,
            "steady_delta": sa - sb,
            "steady_ratio": sa / sb if sb != 0 else (1.0 if sa == 0 else float("inf")),
        }
    report["ordering_full"] = population_ordering({c: steady[c][0] for c in columns}, tie_factor)
    report["ordering_surrogate"] = population_ordering({c: steady[c][1] for c in columns}, tie_factor)
    report["same_ordering"] = report["ordering_full"] == report["ordering_surrogate"]
    if "rho_yy" in columns:
        ra, _ = envelope_rate(tg, np.interp(tg, full.time, full["rho_yy"]))
        rb, _ = envelope_rate(tg, np.interp(tg, surrogate.time, surrogate["rho_yy"]))
        if np.isfinite(ra) and np.isfinite(rb) and rb != 0:
            report["envelope_rate_ratio"] = ra / rb
        elif np.isfinite(ra) and np.isfinite(rb) and ra == rb:
            report["envelope_rate_ratio"] = 1.0
        else:
            report["envelope_rate_ratio"] = None
    return report


# ----------------------------------------------------------- spatial structure
def sign_correlation_length(plane: np.ndarray, mask=None) -> float:
    """First zero (in cells) of the radially averaged autocorrelation of sign(plane).

    Cells outside ``mask`` (default: nonzero entries) count as zero. Returns
    the largest separation considered when the correlation never turns
    negative, which is what a single uniform domain gives.
    """
    p = np.asarray(plane, dtype=float)
    if mask is None:
        mask = p != 0
    s = np.where(mask, np.sign(p), 0.0)
    nx, ny = s.shape
    F = np.fft.rfft2(s, (2 * nx, 2 * ny))
    ac = np.fft.irfft2(np.abs(F) ** 2, (2 * nx, 2 * ny))
    ac = np.fft.fftshift(ac)
    cx, cy = nx, ny
    ix, iy = np.indices(ac.shape)
    rad = np.sqrt((ix - cx) ** 2 + (iy - cy) ** 2)
    rmax = int(min(nx, ny))
    bins = np.rint(rad).astype(int)
    prof = np.array([ac[bins == r].mean() for r in range(rmax + 1)])
    if prof[0] <= 0:
        return 0.0
    prof = prof / prof[0]
    neg = np.nonzero(prof <= 0)[0]
    if len(neg) == 0:
        return float(rmax)
    r = neg[0]
    # linear interpolation between r - 1 and r
    return float(r - 1 + prof[r - 1] / (prof[r - 1] - prof[r]))
