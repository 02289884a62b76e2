"""Pulse-area bookkeeping, sideband timing, lifetime fits and peak handling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, signal
from scipy.interpolate import make_smoothing_spline
from scipy.special import erfc, erfcx

from .errors import DegenerateLifetimes, FitDiverged, NoSolution
from .model import HBAR, XX, DriveField, four_level, ket

# ---------------------------------------------------------------------------
# pulse area and power

_ARCOSH_SQRT2 = math.acosh(math.sqrt(2.0))

# Theta * hbar / (tau * E_b) below which the low-driving estimate is trusted
LOW_DRIVING_RATIO = 0.5


@dataclass(frozen=True)
class EffectiveArea:
    value: float
    valid: bool
    ratio: float  # Theta hbar / (tau E_b)


def effective_pulse_area(theta, tau, e_b, hbar=HBAR):
    """Low-driving estimate of the two-photon effective area Lambda(inf).

    ``Lambda = 4 hbar arcosh(sqrt 2) / (pi^2 E_b tau) * Theta^2``.  The
    estimate assumes ``Theta << tau E_b / hbar``; ``valid`` reports whether
    ``Theta hbar / (tau E_b)`` is below :data:`LOW_DRIVING_RATIO`.
    """
    if not tau > 0 or not e_b > 0:
        raise ValueError("tau and e_b must be positive")
    lam = 4.0 * hbar * _ARCOSH_SQRT2 / (math.pi**2 * e_b * tau) * theta**2
    ratio = abs(theta) * hbar / (tau * e_b)
    return EffectiveArea(float(lam), bool(ratio < LOW_DRIVING_RATIO), float(ratio))


def area_for_effective(lam, tau, e_b, hbar=HBAR):
    """Inverse of :func:`effective_pulse_area` (low-driving formula)."""
    return math.sqrt(lam * math.pi**2 * e_b * tau / (4.0 * hbar * _ARCOSH_SQRT2))


def power_axis(theta, tau, scale=1.0):
    """Square-root power axis ``scale * Theta / sqrt(tau)``.

    Average power scales as ``E0^2 tau`` while ``Theta`` scales as
    ``E0 tau``, so ``sqrt(P) ~ Theta / sqrt(tau)``.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    return scale * np.asarray(theta, dtype=float) / np.sqrt(tau)


def area_from_power(sqrt_power, tau, scale=1.0):
    """Inverse of :func:`power_axis`."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    return np.asarray(sqrt_power, dtype=float) * np.sqrt(tau) / scale


def first_maximum(x, y, min_prominence=0.05):
    """Position of the first prominent maximum of ``y(x)``, refined parabolically."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    idx, _ = signal.find_peaks(y, prominence=min_prominence * max(np.ptp(y), 1e-300))
    if idx.size == 0:
        raise NoSolution("no maximum in the scanned range")
    i = int(idx[0])
    return _parabolic(x, y, i)[0]


def _parabolic(x, y, i):
    if i <= 0 or i >= len(y) - 1:
        return float(x[i]), float(y[i])
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
    if a >= 0:
        return float(x1), float(y1)
    xv = -b / (2 * a)
    if not min(x0, x2) <= xv <= max(x0, x2):
        return float(x1), float(y1)
    c = y1 - a * x1**2 - b * x1
    return float(xv), float(a * xv**2 + b * xv + c)


def calibrate_power_scale(params, tau=14.0, reference=1.0, areas=None, coherent=False):
    """Scale constant placing the first XX-emission maximum for ``tau`` at ``reference``."""
    from .dynamics import rabi_scan

    if areas is None:
        areas = np.linspace(0.5, 40.0, 160)
    table = rabi_scan(params, [tau], areas=areas, coherent=coherent)
    theta1 = first_maximum(table.pulse_area, table.emission_xx)
    return reference * math.sqrt(tau) / theta1


def rotations_from_curve(x, y, min_prominence=0.05):
    """Effective area (in units of pi) reached at the end of a Rabi curve.

    Counts the alternating extrema of ``y`` and interpolates the last
    partial half-rotation with ``2 arcsin sqrt(u)``.
    """
    phase = unwrap_rabi_phase(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                              min_prominence=min_prominence)
    return float(phase[-1] / math.pi)


# ---------------------------------------------------------------------------
# effective Rabi phase of the cascade


def unwrap_rabi_phase(t, pop, min_prominence=0.05, start=0.0, full=1.0):
    """Monotone phase ``phi`` with ``pop ~ sin^2(phi / 2)`` between extrema.

    ``pop`` is split at its prominent extrema; inside each segment the
    normalized progress ``u`` between the segment's end values is mapped to
    ``m pi + 2 arcsin sqrt(u)``.  The open last segment is normalized to
    ``full`` (rising) or ``start`` (falling).
    """
    pop = np.asarray(pop, dtype=float)
    span = max(float(np.ptp(pop)), 1e-300)
    hi, _ = signal.find_peaks(pop, prominence=min_prominence * span)
    lo, _ = signal.find_peaks(-pop, prominence=min_prominence * span)
    ext = sorted([(int(i), 1) for i in hi] + [(int(i), -1) for i in lo])
    # keep alternating extrema beginning with a maximum
    cleaned = []
    want = 1
    for i, kind in ext:
        if kind == want:
            cleaned.append(i)
            want = -want
        elif cleaned:
            j = cleaned[-1]
            if (kind == 1 and pop[i] > pop[j]) or (kind == -1 and pop[i] < pop[j]):
                cleaned[-1] = i
    bounds = [0] + cleaned + [len(pop) - 1]
    phi = np.empty_like(pop)
    for m, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        rising = m % 2 == 0
        pa = pop[a] if m > 0 else start
        last = m == len(bounds) - 2
        pb = pop[b] if not last else (full if rising else start)
        den = pb - pa
        seg = slice(a, b + 1)
        if abs(den) < 1e-15:
            u = np.zeros(b + 1 - a)
        else:
            u = np.clip((pop[seg] - pa) / den, 0.0, 1.0)
        phi[seg] = m * math.pi + 2.0 * np.arcsin(np.sqrt(u))
    return np.maximum.accumulate(phi)


@dataclass
class FittedPhase:
    """Effective Rabi phase ``phi(t)`` of the decoherence-free XX population.

    ``phase`` holds the unwrapped samples.  Evaluation goes through a
    smoothing spline whose weights ``sin(phi)^2`` discount the samples near
    Rabi extrema, where ``arcsin`` amplifies any departure of the cascade
    from a clean ``sin^2`` law; the smoothing strength is set by
    generalized cross-validation.
    """

    times: np.ndarray
    phase: np.ndarray
    population: np.ndarray
    center_time: float = 0.0

    def _fit(self):
        if getattr(self, "_spline", None) is None:
            w = np.maximum(np.abs(np.sin(self.phase)), 0.05) ** 2
            self._spline = make_smoothing_spline(self.times, self.phase, w=w)
            self._rate = self._spline.derivative()

    def __call__(self, t):
        self._fit()
        t = np.asarray(t, dtype=float)
        return self._spline(np.clip(t, self.times[0], self.times[-1]))

    def rate(self, t):
        """Effective Rabi frequency ``d phi / dt`` (rad/ps)."""
        self._fit()
        t = np.asarray(t, dtype=float)
        inside = (t >= self.times[0]) & (t <= self.times[-1])
        r = self._rate(np.clip(t, self.times[0], self.times[-1]))
        return np.where(inside, r, 0.0)

    @property
    def total(self):
        """Effective pulse area Lambda(inf) from the unwrapped samples."""
        return float(self.phase[-1])


def fitted_phase(params, drive, step=None, min_prominence=0.05):
    """Effective phase from the decoherence-free two-photon dynamics."""
    from .dynamics import coherent_trajectory

    clean = replace(params, gamma_xx=0.0, gamma_x=0.0, dephasing=0.0)
    w0, w1 = drive.active_window(floor=1e-12)
    h = step if step is not None else min(0.05, drive.tau_field / 40.0)
    n = int(math.ceil((w1 - w0) / h))
    times = np.linspace(w0, w1, n + 1)
    psi = coherent_trajectory(four_level(clean, drive), ket(0), times, step=h)
    pop = np.abs(psi[:, XX]) ** 2
    phase = unwrap_rabi_phase(times, pop, min_prominence=min_prominence)
    return FittedPhase(times, phase, pop, center_time=drive.center_time)


def effective_area(params, drive, step=None, rel_step=1e-4):
    """Effective two-photon pulse area from the final fitted phase.

    Past a Rabi extremum the Stark-shifted rotation need not return to the
    pole within the pulse, so the open last half-rotation can look like it
    never turned.  Its branch follows from continuity in ``Theta``: the
    final population must move towards the segment's target as ``Theta``
    grows, otherwise the phase is reflected about the next multiple of pi.
    """
    lam = fitted_phase(params, drive, step=step).total
    m = math.floor(lam / math.pi)
    if not drive.is_pulsed or lam - m * math.pi < 1e-12:
        return lam
    up = replace(drive, pulse_area=drive.pulse_area * (1.0 + rel_step))
    p0 = _final_population(params, drive, step)
    p1 = _final_population(params, up, step)
    toward = (p1 - p0) if m % 2 == 0 else (p0 - p1)
    return lam if toward >= 0 else 2.0 * (m + 1) * math.pi - lam


def _final_population(params, drive, step):
    from .dynamics import coherent_trajectory

    clean = replace(params, gamma_xx=0.0, gamma_x=0.0, dephasing=0.0)
    w0, w1 = drive.active_window(floor=1e-12)
    h = step if step is not None else min(0.05, drive.tau_field / 40.0)
    psi = coherent_trajectory(four_level(clean, drive), ket(0), np.array([w0, w1]), step=h)
    return float(abs(psi[-1, XX]) ** 2)


def calibrate_effective_area(params, tau, target, detuning=0.0, step=None, bracket=None):
    """Pulse area Theta for which the fitted effective area equals ``target``.

    Root of ``Lambda(Theta) - target`` by Brent's method, bracketed around
    the low-driving estimate.
    """
    guess = area_for_effective(target, tau, params.binding_energy, params.hbar)

    def f(theta):
        d = DriveField.pulse(theta, tau, laser_detuning=detuning)
        return effective_area(params, d, step=step) - target

    if bracket is None:
        lo, hi = 0.5 * guess, 1.5 * guess
        while f(lo) > 0 and lo > 1e-3:
            lo *= 0.7
        while f(hi) < 0:
            hi *= 1.3
            if hi > 50 * guess:
                raise NoSolution(f"effective area {target} not reached")
    else:
        lo, hi = bracket
    return optimize.brentq(f, lo, hi, xtol=1e-6)


# ---------------------------------------------------------------------------
# sideband emergence times


def sideband_lhs(t, phase, rate):
    """``phi(t) - phi(-t) - 2 Omega(t) t`` for a pulse centred at 0."""
    t = np.asarray(t, dtype=float)
    return phase(t) - phase(-t) - 2.0 * rate(t) * t


def sideband_times(drive, phase=None, n_max=None, t_max=None, resolution=1e-3):
    """Times ``t_n`` with ``phi(t) - phi(-t) - 2 Omega(t) t = (2n + 1/2) pi``.

    Parameters
    ----------
    drive : DriveField
        Pulsed drive; times are returned relative to its centre.
    phase : FittedPhase, optional
        Effective phase for the cascade.  Without it the two-level Rabi
        phase of ``drive`` is used.
    n_max : int, optional
        Highest order requested.  Orders that the pulse cannot reach raise
        :class:`NoSolution`; with ``n_max=None`` every reachable order is
        returned.
    resolution : float
        Bisection tolerance in ps.
    """
    if not drive.is_pulsed:
        raise ValueError("sideband times need a pulsed drive")
    c = drive.center_time
    if phase is None:
        def ph(t):
            return drive.rabi_phase(np.asarray(t) + c)

        def om(t):
            return drive.envelope(np.asarray(t) + c)
    else:
        def ph(t):
            return phase(np.asarray(t) + phase.center_time)

        def om(t):
            return phase.rate(np.asarray(t) + phase.center_time)
    if t_max is None:
        t_max = 8.0 * drive.tau_field
    grid = np.linspace(0.0, t_max, int(math.ceil(t_max / 0.01)) + 1)
    lhs = sideband_lhs(grid, ph, om)
    top = float(np.max(lhs))
    times = []
    n = 0
    prev = 0.0
    while True:
        if n_max is not None and n > n_max:
            break
        level = (2 * n + 0.5) * math.pi
        if top < level:
            if n_max is not None:
                raise NoSolution(f"order {n} needs {level:.4g} rad; the pulse reaches {top:.4g}")
            break
        d = lhs - level
        idx = np.nonzero((d[:-1] < 0) & (d[1:] >= 0) & (grid[1:] > prev))[0]
        if idx.size == 0:
            if n_max is not None:
                raise NoSolution(f"order {n} has no crossing after {prev:.4g} ps")
            break
        i = int(idx[0])
        a, b = grid[i], grid[i + 1]
        while b - a > resolution:
            mid = 0.5 * (a + b)
            if sideband_lhs(mid, ph, om) - level < 0:
                a = mid
            else:
                b = mid
        prev = 0.5 * (a + b)
        times.append(prev)
        n += 1
    return np.array(times)


# ---------------------------------------------------------------------------
# lifetimes


def bateman_curves(t, tau_xx, tau_x):
    """Normalized cascade intensities ``(I_XX, I_X)`` with ``I_X(0) = 0``."""
    if not (tau_xx > 0 and tau_x > 0):
        raise ValueError("lifetimes must be positive")
    if abs(tau_xx - tau_x) < 1e-9:
        raise DegenerateLifetimes("tau_xx and tau_x coincide")
    t = np.asarray(t, dtype=float)
    on = t >= 0
    tt = np.where(on, t, 0.0)
    ixx = np.where(on, np.exp(-tt / tau_xx), 0.0)
    ix = np.where(on, tau_x / (tau_xx - tau_x) * (np.exp(-tt / tau_xx) - np.exp(-tt / tau_x)), 0.0)
    return ixx, ix


def _conv_exp(t, tau, sigma, t0):
    """``e^{(s/tau)^2/2 - (t-t0)/tau} (1 + erf((t-t0)/(sqrt2 s) - s/(sqrt2 tau)))``."""
    u = np.asarray(t, dtype=float) - t0
    if sigma <= 0:
        return np.where(u >= 0, 2.0 * np.exp(-np.maximum(u, 0) / tau), 0.0)
    z = u / (math.sqrt(2.0) * sigma) - sigma / (math.sqrt(2.0) * tau)
    out = np.empty(np.shape(z))
    late = z > 0
    # for z > 0 the plain form cannot overflow: the exponent is below -(s/tau)^2/2
    ul = u[late] if np.ndim(u) else u
    out[late] = np.exp(0.5 * (sigma / tau) ** 2 - ul / tau) * (2.0 - erfc(z[late]))
    # 1 + erf(z) = erfcx(-z) exp(-z^2); the exponents then combine to -u^2/2s^2
    ue = u[~late] if np.ndim(u) else u
    out[~late] = np.exp(-(ue**2) / (2.0 * sigma**2)) * erfcx(-z[~late])
    return out


def lifetime_model_xx(t, amplitude, tau_xx, sigma, t0):
    """IRF-convolved biexciton decay (erf closed form)."""
    return amplitude * _conv_exp(t, tau_xx, sigma, t0)


def lifetime_model_x(t, amplitude, tau_xx, tau_x, sigma, t0):
    """IRF-convolved exciton intensity fed by the cascade."""
    if abs(tau_xx - tau_x) < 1e-9:
        raise DegenerateLifetimes("tau_xx and tau_x coincide")
    k = tau_x / (tau_xx - tau_x)
    return -k * amplitude * (_conv_exp(t, tau_x, sigma, t0) - _conv_exp(t, tau_xx, sigma, t0))


@dataclass
class LifetimeFit:
    tau_xx: float
    tau_x: float
    sigma_irf: float
    amplitude: float
    amplitude_x: float
    t0: float
    errors: dict
    chi2_dof: float
    n_bins: int

    def report(self):
        """Key-value lines (``name = value``) for the fit report."""
        lines = []
        for k in ("tau_xx", "tau_x", "sigma_irf", "amplitude", "amplitude_x", "t0"):
            lines.append(f"{k} = {getattr(self, k):.10g}")
            lines.append(f"{k}_ci95 = {self.errors[k]:.6g}")
        lines.append(f"chi2_dof = {self.chi2_dof:.6g}")
        lines.append(f"n_bins = {self.n_bins}")
        return "\n".join(lines) + "\n"


_FIT_NAMES = ("tau_xx", "tau_x", "sigma_irf", "amplitude", "amplitude_x", "t0")


def _initial_guess(t, cxx, cx):
    i = int(np.argmax(cxx))
    t0 = float(t[i])
    tail = (t > t0 + 20) & (cxx > 0.05 * cxx[i])
    if np.count_nonzero(tail) > 3:
        slope = np.polyfit(t[tail], np.log(cxx[tail]), 1)[0]
        tau_xx = -1.0 / slope if slope < 0 else 100.0
    else:
        tau_xx = 100.0
    tau_xx = float(np.clip(tau_xx, 1.0, 1e4))
    dt = float(np.median(np.diff(t)))
    sigma = max(2.0 * dt, 1.0)
    ax = float(np.max(cx)) if np.max(cx) > 0 else 1.0
    return [tau_xx, 2.0 * tau_xx, sigma, 0.5 * float(cxx[i]), ax, t0]


def fit_lifetimes(t_xx, counts_xx, t_x, counts_x, guess=None, chi2_cap=100.0):
    """Joint Poisson-weighted fit of both cascade histograms.

    Both models share ``sigma_irf`` and ``t0``; each histogram keeps its
    own amplitude.  Bins are weighted by ``1 / max(counts, 1)``.
    Confidence half-widths are 95 % intervals from the Jacobian.
    """
    t_xx = np.asarray(t_xx, dtype=float)
    t_x = np.asarray(t_x, dtype=float)
    cxx = np.asarray(counts_xx, dtype=float)
    cx = np.asarray(counts_x, dtype=float)
    for name, c in (("histogram_xx", cxx), ("histogram_x", cx)):
        if c.ndim != 1 or c.size < 50:
            raise ValueError(f"{name} needs at least 50 bins")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError(f"{name} must be finite and non-negative")
    if t_xx.shape != cxx.shape or t_x.shape != cx.shape:
        raise ValueError("time and count arrays differ in length")
    wxx = 1.0 / np.sqrt(np.maximum(cxx, 1.0))
    wx = 1.0 / np.sqrt(np.maximum(cx, 1.0))
    p0 = np.asarray(guess if guess is not None else _initial_guess(t_xx, cxx, cx), dtype=float)
    # log-parametrize the positive quantities; t0 stays linear
    pos = np.array([True, True, True, True, True, False])

    def unpack(q):
        return np.where(pos, np.exp(np.where(pos, q, 0.0)), q)

    def resid(q):
        tau_xx, tau_x, sig, a_xx, a_x, t0 = unpack(q)
        if abs(tau_xx - tau_x) < 1e-6:
            tau_x = tau_xx + 1e-6
        rx = (lifetime_model_xx(t_xx, a_xx, tau_xx, sig, t0) - cxx) * wxx
        r = (lifetime_model_x(t_x, a_x, tau_xx, tau_x, sig, t0) - cx) * wx
        return np.concatenate([rx, r])

    q0 = np.where(pos, np.log(np.where(pos, np.maximum(p0, 1e-12), 1.0)), p0)
    try:
        # wild trial steps may overflow; non-finite outcomes are caught below
        with np.errstate(over="ignore", invalid="ignore"):
            sol = optimize.least_squares(resid, q0, method="trf", x_scale="jac",
                                         xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
    except (FloatingPointError, ValueError) as exc:
        raise FitDiverged(str(exc)) from exc
    p = unpack(sol.x)
    r = sol.fun
    dof = max(r.size - p.size, 1)
    chi2 = float(r @ r) / dof
    if not np.all(np.isfinite(p)) or not np.isfinite(chi2) or chi2 > chi2_cap:
        raise FitDiverged(f"fit did not converge (chi2/dof = {chi2:.4g})")
    # covariance in the natural parameters: J_p = J_q / (dp/dq)
    dp_dq = np.where(pos, p, 1.0)
    jac = sol.jac / dp_dq[None, :]
    try:
        cov = np.linalg.pinv(jac.T @ jac)
        err = 1.959964 * np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        err = np.full(p.size, np.nan)
    tau_xx, tau_x, sig, a_xx, a_x, t0 = p
    return LifetimeFit(float(tau_xx), float(tau_x), float(sig), float(a_xx), float(a_x), float(t0),
                       dict(zip(_FIT_NAMES, map(float, err))), chi2, int(r.size))


def synthetic_histograms(t, tau_xx=157.0, tau_x=295.0, sigma=9.0, t0=0.0, peak=1e4, rng=None):
    """Cascade histograms from the closed-form model, optionally Poisson-sampled.

    Each histogram is scaled so its noiseless maximum equals ``peak``.
    """
    t = np.asarray(t, dtype=float)
    ixx = lifetime_model_xx(t, 1.0, tau_xx, sigma, t0)
    ix = lifetime_model_x(t, 1.0, tau_xx, tau_x, sigma, t0)
    ixx = peak * ixx / ixx.max()
    ix = peak * ix / ix.max()
    if rng is not None:
        ixx = rng.poisson(ixx).astype(float)
        ix = rng.poisson(ix).astype(float)
    return ixx, ix


# ---------------------------------------------------------------------------
# peaks

PEAK_CLASSES = ("XX-line", "X-line", "sideband", "laser")


@dataclass
class PeakList:
    """Spectral peaks sorted by energy."""

    energies: np.ndarray
    heights: np.ndarray
    fwhm: np.ndarray
    labels: tuple
    parents: tuple = ()

    def __len__(self):
        return int(self.energies.size)

    def select(self, label=None, parent=None):
        keep = np.ones(len(self), dtype=bool)
        if label is not None:
            keep &= np.array([lab == label for lab in self.labels], dtype=bool)
        if parent is not None:
            keep &= np.array([p == parent for p in self.parents], dtype=bool)
        idx = np.nonzero(keep)[0]
        return PeakList(self.energies[idx], self.heights[idx], self.fwhm[idx],
                        tuple(self.labels[i] for i in idx),
                        tuple(self.parents[i] for i in idx) if self.parents else ())

    def sidebands(self, parent=None):
        return self.select("sideband", parent)

    def count(self, label=None, parent=None):
        return len(self.select(label, parent))


def line_energies(params, drive):
    """Reference energies used for peak classification."""
    return {"XX-line": params.xx_line, "X-line": params.x_line,
            "laser": drive.laser_energy(params)}


def find_peaks(energies, row, threshold_rel=1e-3, lines=None, radius_cells=3, log_refine=True):
    """Local maxima above ``threshold_rel * max(row)`` with sub-cell refinement.

    Positions are refined by a parabola through the log intensity of the
    three highest samples.  Peaks within ``radius_cells`` grid cells of a
    reference energy in ``lines`` take its label; others are sidebands and
    record the nearer of the XX and X lines as ``parent``.
    """
    if not 0 < threshold_rel < 1:
        raise ValueError("threshold_rel must lie in (0, 1)")
    e = np.asarray(energies, dtype=float)
    y = np.asarray(row, dtype=float)
    top = float(np.max(y)) if y.size else 0.0
    if top <= 0:
        return PeakList(np.array([]), np.array([]), np.array([]), (), ())
    idx, _ = signal.find_peaks(y, height=threshold_rel * top)
    de = float(np.median(np.diff(e)))
    pos, hts = [], []
    for i in idx:
        if log_refine and 0 < i < len(y) - 1 and np.all(y[i - 1:i + 2] > 0):
            xv, yv = _parabolic(e[i - 1:i + 2], np.log(y[i - 1:i + 2]), 1)
            pos.append(xv)
            hts.append(math.exp(yv))
        else:
            pos.append(float(e[i]))
            hts.append(float(y[i]))
    if idx.size:
        widths = signal.peak_widths(y, idx, rel_height=0.5)[0] * de
    else:
        widths = np.array([])
    labels, parents = [], []
    lines = lines or {}
    for x in pos:
        label = "sideband"
        for name, ref in lines.items():
            if abs(x - ref) <= radius_cells * de:
                label = name
                break
        labels.append(label)
        if "XX-line" in lines and "X-line" in lines:
            parents.append("XX" if abs(x - lines["XX-line"]) < abs(x - lines["X-line"]) else "X")
        else:
            parents.append("")
    return PeakList(np.array(pos), np.array(hts), np.asarray(widths, dtype=float),
                    tuple(labels), tuple(parents))


def track_peaks(axis, peak_lists, max_jump):
    """Link peaks across successive scan values into trajectories.

    Returns an array ``(n_tracks, len(axis))`` of energies with NaN where a
    track has no peak.  Linking minimizes the total energy displacement
    between neighbouring scan values; jumps above ``max_jump`` start a new
    track.
    """
    from scipy.optimize import linear_sum_assignment

    axis = np.asarray(axis, dtype=float)
    tracks = []  # list of lists of (index, energy)
    active = []  # track ids alive at previous step
    for j, pl in enumerate(peak_lists):
        cur = list(np.asarray(pl.energies if isinstance(pl, PeakList) else pl, dtype=float))
        new_active = []
        used = set()
        if active and cur:
            prev_e = np.array([tracks[k][-1][1] for k in active])
            cost = np.abs(prev_e[:, None] - np.array(cur)[None, :])
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if cost[r, c] <= max_jump:
                    tracks[active[r]].append((j, cur[c]))
                    new_active.append(active[r])
                    used.add(c)
        for c, en in enumerate(cur):
            if c not in used:
                tracks.append([(j, en)])
                new_active.append(len(tracks) - 1)
        active = new_active
    out = np.full((len(tracks), axis.size), np.nan)
    for k, tr in enumerate(tracks):
        for j, en in tr:
            out[k, j] = en
    return out


# ---------------------------------------------------------------------------
# time-domain metrics


def lock_in_times(drive, offsets, hbar=HBAR):
    """Times at which side peaks at ``offsets`` (meV from the carrier) lock in.

    A side peak at offset ``delta`` stops moving once the instantaneous
    dressed splitting ``hbar*Omega(t)`` of the falling pulse edge has
    dropped to ``delta``.  For a Gaussian envelope this happens at
    ``t_c + tau_field * sqrt(2 ln(hbar Omega_0 / delta))``.  Offsets that
    the pulse never reaches give NaN.
    """
    if not drive.is_pulsed:
        raise ValueError("lock-in times need a pulsed drive")
    top = hbar * drive.peak_rabi
    d = np.abs(np.atleast_1d(np.asarray(offsets, dtype=float)))
    out = np.full(d.shape, np.nan)
    ok = (d > 0) & (d < top)
    out[ok] = drive.center_time + drive.tau_field * np.sqrt(2.0 * np.log(top / d[ok]))
    return out


def fringe_contrast(series):
    """Largest interference-fringe depth relative to the global maximum.

    For every interior local minimum the depth is measured against the
    lower of its two neighbouring maxima.
    """
    y = np.asarray(series, dtype=float)
    top = float(np.max(y)) if y.size else 0.0
    if top <= 0:
        return 0.0
    maxima, _ = signal.find_peaks(y)
    minima, _ = signal.find_peaks(-y)
    best = 0.0
    for m in minima:
        left = maxima[maxima < m]
        right = maxima[maxima > m]
        if left.size == 0 or right.size == 0:
            continue
        depth = min(y[left[-1]], y[right[0]]) - y[m]
        best = max(best, depth / top)
    return float(best)


def emission_maximum_time(times, series):
    """Time of the global maximum, refined parabolically."""
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    return _parabolic(times, series, int(np.argmax(series)))[0]
