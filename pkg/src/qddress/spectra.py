"""Emission spectra from two-time correlations, sensor filtering and IRFs.

Spectra use ``S(w, t) = Re int^t dt' int_0^{t - t'} dtau G1(t', tau) e^{-i w tau}``
with ``w`` the angular frequency in the rotating frame.  Intensities are
therefore in units of ps^2 for pulsed spectra (ps for cw rates).  The
frequency integral obeys ``int S dw = pi int <sigma^dag sigma> dt`` and
:func:`photon_number` converts back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from .dynamics import Evolution, Trajectory, correlation_system, ground_state
from .errors import CouplingTooStrong, GridTooCoarse, NonUniformGrid
from .liouville import liouvillian_parts, steady_state, trace_row, unvec, vec
from .model import DrivenSystem, four_level, projector

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass
class SpectrumMap:
    """Intensity on an (axis2, energy) grid; rows follow ``axis2``.

    ``energy_grid`` is absolute emission energy in meV.  ``axis2_name``
    describes the scan axis (``"sqrtP"``, ``"detuning_meV"``, ``"t_ps"``,
    ``"row"``...).
    """

    energy_grid: np.ndarray
    axis2: np.ndarray
    intensity: np.ndarray
    axis2_name: str = "row"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.energy_grid = np.asarray(self.energy_grid, dtype=float)
        self.axis2 = np.atleast_1d(np.asarray(self.axis2, dtype=float))
        self.intensity = np.atleast_2d(np.asarray(self.intensity, dtype=float))
        if self.intensity.shape != (self.axis2.size, self.energy_grid.size):
            raise ValueError("intensity shape must be (len(axis2), len(energy_grid))")

    @property
    def row(self):
        return self.intensity[0]

    def stack(self, other_rows):
        """Concatenate single-row maps taken at successive ``axis2`` values."""
        maps = [self] + list(other_rows)
        return SpectrumMap(self.energy_grid, np.concatenate([m.axis2 for m in maps]),
                           np.vstack([m.intensity for m in maps]), self.axis2_name,
                           dict(self.meta))


@dataclass(frozen=True)
class SensorConfig:
    """Lossy two-level sensor used as a tunable frequency filter.

    ``sensor_energy`` is absolute (meV); ``linewidth`` is Gamma_s (meV) and
    the sensor population decays at ``linewidth / hbar``.  ``coupling``
    defaults to ``linewidth / 1000``.
    """

    sensor_energy: float
    linewidth: float = 0.05
    coupling: Optional[float] = None

    def __post_init__(self):
        if not self.linewidth > 0:
            raise ValueError("linewidth must be positive")
        if self.coupling is None:
            object.__setattr__(self, "coupling", self.linewidth / 1000.0)
        if self.coupling < 0:
            raise ValueError("coupling must be non-negative")
        if self.coupling > self.linewidth / 100.0:
            raise CouplingTooStrong(
                f"coupling {self.coupling} meV exceeds linewidth/100 = {self.linewidth / 100.0} meV")


def _spacing(x, name, rtol=1e-6):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise NonUniformGrid(f"{name} needs at least two points")
    d = np.diff(x)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > rtol * abs(d[0]):
        raise NonUniformGrid(f"{name} is not uniformly spaced")
    return float(d[0])


def _omega(g1, energy_grid):
    energy_grid = np.asarray(energy_grid, dtype=float)
    omega = (energy_grid - g1.carrier) / g1.hbar
    dtau = _spacing(g1.tau_grid, "tau_grid")
    limit = math.pi / dtau
    if omega.size and np.max(np.abs(omega)) > limit:
        raise GridTooCoarse(
            f"energies reach {np.max(np.abs(omega)) * g1.hbar:.4g} meV from the carrier; "
            f"tau spacing {dtau} ps resolves only {limit * g1.hbar:.4g} meV")
    return omega, dtau


def _phases(tau, omega):
    return np.exp(-1j * np.outer(tau, omega))


def integrated_spectrum(g1, energy_grid, use_tail=True):
    """Time-integrated spectrum (``t -> inf``) as a single-row map.

    When ``g1`` carries a :class:`~qddress.dynamics.SpectralTail` the parts
    of the integration domain beyond the grid are added as closed-form
    geometric sums of the same trapezoid rule.
    """
    omega, dtau = _omega(g1, energy_grid)
    dt = _spacing(g1.t_grid, "t_grid")
    a = np.full(g1.t_grid.size, dt)
    a[0] *= 0.5
    a[-1] *= 0.5
    b = np.full(g1.tau_grid.size, dtau)
    b[0] *= 0.5
    b[-1] *= 0.5
    row = (a @ g1.values) * b
    s = row @ _phases(g1.tau_grid, omega)
    tail = g1.tail if use_tail else None
    if tail is not None:
        v_rows = a @ tail.row_end
        parts = tail.series_apply(omega, np.column_stack([v_rows, tail.late_source]))
        s = s + np.exp(-1j * omega * tail.tau_end) * parts[:, 0] + parts[:, 1]
    return SpectrumMap(energy_grid, [np.inf], np.real(s)[None, :], "t_ps",
                       meta={"carrier_meV": g1.carrier, "hbar": g1.hbar, "tail": tail is not None})


def time_dependent_spectrum(g1, energy_grid, t_upper):
    """Spectrum accumulated up to each time in ``t_upper``.

    Only pairs with ``t' + tau <= t`` contribute.  The t and tau grids must
    share one spacing so the mask follows the grid anti-diagonals.
    """
    omega, dtau = _omega(g1, energy_grid)
    dt = _spacing(g1.t_grid, "t_grid")
    if abs(dt - dtau) > 1e-9 * dt:
        raise NonUniformGrid("t_grid and tau_grid must have the same spacing")
    t_upper = np.atleast_1d(np.asarray(t_upper, dtype=float))
    t0 = g1.t_grid[0]
    span = g1.t_grid[-1] - t0
    if np.any(t_upper > g1.t_grid[-1] + 1e-9) or g1.tau_grid[-1] < min(span, np.max(t_upper) - t0) - 1e-9:
        raise ValueError("g1 does not cover the requested accumulation times")
    n_t, n_tau = g1.values.shape
    a = np.full(n_t, dt)
    a[0] *= 0.5
    b = np.full(n_tau, dtau)
    b[0] *= 0.5
    n_s = n_t
    # q[s, m] = a_{s-m} b_m G[s-m, m]: contributions emitted at t0 + s*dt
    q = np.zeros((n_s, n_tau), dtype=complex)
    weighted = g1.values * a[:, None] * b[None, :]
    for m in range(min(n_tau, n_s)):
        q[m:, m] = weighted[: n_s - m, m]
    h = q @ _phases(g1.tau_grid, omega)
    acc = np.cumsum(h, axis=0) - 0.5 * h  # boundary diagonal at half weight
    acc = np.vstack([np.zeros((1, omega.size)), acc])
    # linear interpolation between diagonals
    pos = (t_upper - t0) / dt
    lo = np.clip(np.floor(pos).astype(int), 0, n_s - 1)
    frac = np.clip(pos - lo, 0.0, 1.0)[:, None]
    rows = acc[lo + 1] * (1 - frac) + acc[np.minimum(lo + 2, n_s)] * frac
    below = (t_upper < t0)[:, None]
    rows = np.where(below, 0.0, rows)
    return SpectrumMap(energy_grid, t_upper, np.real(rows), "t_ps",
                       meta={"carrier_meV": g1.carrier, "hbar": g1.hbar})


def photon_number(spectrum, row=0):
    """``int S dE / (pi hbar)``: the emission integral ``int <sigma^dag sigma> dt``."""
    hbar = spectrum.meta.get("hbar", 0.6582119569)
    return float(np.trapezoid(spectrum.intensity[row], spectrum.energy_grid) / (math.pi * hbar))


def resolution_window(spectrum, fwhm):
    """Gaussian detector resolution (meV FWHM) applied along the energy axis.

    Equivalent to apodizing G1 with a Gaussian in tau; off when ``fwhm`` is
    0 or ``None``.
    """
    if not fwhm:
        return spectrum
    de = _spacing(spectrum.energy_grid, "energy_grid")
    sig = fwhm / FWHM_PER_SIGMA / de
    half = int(math.ceil(6 * sig))
    x = np.arange(-half, half + 1)
    kern = np.exp(-0.5 * (x / sig) ** 2)
    kern /= kern.sum()
    out = np.array([np.convolve(r, kern, mode="same") for r in spectrum.intensity])
    return replace(spectrum, intensity=out, meta={**spectrum.meta, "resolution_fwhm": fwhm})


# ---------------------------------------------------------------------------
# convenience drivers for the four-level cascade


def pulse_grids(drive, step=0.1, t_after=0.0):
    """Square (t, tau) grids covering the pulse window plus ``t_after`` ps."""
    w0, w1 = drive.active_window()
    n = int(math.ceil((w1 - w0 + t_after) / step))
    t = w0 + step * np.arange(n + 1)
    tau = step * np.arange(n + 1)
    return t, tau


def pulsed_g1(params, drive, detect="V", step=0.1, t_after=0.0, weighted=False):
    """G1 of a pulsed cascade on grids covering the pulse, with tails."""
    system = four_level(params, drive, detect=detect, weighted=weighted)
    t, tau = pulse_grids(drive, step, t_after)
    g1 = correlation_system(system, t, tau, step=step, tail=True)
    g1.meta["hbar"] = params.hbar
    return g1


def pulsed_spectrum(params, drive, energy_grid, detect="V", step=0.1, weighted=False):
    """Time-integrated emission spectrum of one pulse (absolute meV axis)."""
    g1 = pulsed_g1(params, drive, detect=detect, step=step, weighted=weighted)
    spec = integrated_spectrum(g1, energy_grid)
    spec.meta["hbar"] = params.hbar
    return spec


def stationary_spectrum(system, energy_grid):
    """Incoherent steady-state spectrum of a cw-driven system.

    Returns the map and the coherent (elastic) weight ``|<sigma>|^2``, which
    contributes a delta line at the laser energy and is not included.
    """
    l0, l1 = liouvillian_parts(system)
    gen = l0 + system.drive.rabi_amplitude * l1 if system.is_cw else l0
    dim = system.dim
    rho_ss = steady_state(gen)
    sig = system.detector
    s_row = vec(sig.conj())
    v = vec(sig @ unvec(rho_ss, dim))
    tr = trace_row(dim)
    v_inc = v - rho_ss * (tr @ v)
    base = np.outer(rho_ss, tr) - gen
    omega = (np.asarray(energy_grid, dtype=float) - system.carrier) / system.hbar
    mats = 1j * omega[:, None, None] * np.eye(base.shape[0])[None] + base[None]
    w = np.linalg.solve(mats, np.broadcast_to(v_inc, (omega.size, v_inc.size))[..., None])[..., 0]
    s = np.real(w @ s_row)
    coherent = float(abs(tr @ v) ** 2)
    return (SpectrumMap(energy_grid, [0.0], s[None, :], "row",
                        meta={"carrier_meV": system.carrier, "coherent_weight": coherent,
                              "hbar": system.hbar}),
            coherent)


def cw_spectrum(params, drive, energy_grid, detect="V"):
    """Steady-state spectrum of the cw-driven cascade (rate per unit energy)."""
    return stationary_spectrum(four_level(params, drive, detect=detect), energy_grid)


# ---------------------------------------------------------------------------
# sensor formalism


def with_sensor(system, sensor, detector=None):
    """Append a lossy two-level sensor coupled to ``detector`` (default: the system's).

    The combined basis is ``system (x) sensor`` with the sensor index
    running fastest.
    """
    d = system.dim
    eye_s = np.eye(2, dtype=complex)
    eye_d = np.eye(d, dtype=complex)
    lower = np.array([[0, 1], [0, 0]], dtype=complex)  # sensor lowering
    sig = system.detector if detector is None else detector
    det = sensor.sensor_energy - system.carrier
    static = (np.kron(system.static, eye_s)
              + det * np.kron(eye_d, lower.conj().T @ lower)
              + sensor.coupling * (np.kron(sig, lower.conj().T) + np.kron(sig.conj().T, lower)))
    coupling = np.kron(system.coupling, eye_s)
    collapse = tuple((np.kron(c, eye_s), r) for c, r in system.collapse)
    collapse = collapse + ((np.kron(eye_d, lower), sensor.linewidth / system.hbar),)
    labels = tuple(f"{s}{j}" for s in system.labels for j in (0, 1))
    return DrivenSystem(static=static, coupling=coupling, drive=system.drive,
                        collapse=collapse, hbar=system.hbar, carrier=system.carrier,
                        labels=labels, detector=np.kron(eye_d, lower),
                        extras={"sensor": sensor})


def sensor_population_operator(dim):
    return np.kron(np.eye(dim), projector(1, 1, 2))


def sensor_emission(params, drive, sensor, times=None, step=0.1, detect="V", t_after=300.0):
    """Sensor population ``<s^dag s>(t)`` for the pulsed (or cw) cascade.

    ``times`` defaults to the pulse window extended by ``t_after`` ps on a
    ``step`` grid.  Returns ``(times, population)``.
    """
    system = with_sensor(four_level(params, drive, detect=detect), sensor)
    if times is None:
        w = drive.active_window()
        if w is None:
            raise ValueError("times must be given for drives without a pulse window")
        n = int(math.ceil((w[1] - w[0] + t_after) / step))
        times = w[0] + step * np.arange(n + 1)
    times = np.asarray(times, dtype=float)
    rho0 = np.kron(ground_state(4), projector(0, 0, 2))
    evo = Evolution(system, step=step)
    ys = evo.run(vec(rho0), times)
    nop = vec(sensor_population_operator(4).T)
    return times, np.real(ys @ nop)


def sensor_trajectory(params, drive, sensor, times, step=0.1, detect="V"):
    """Full 8x8 density matrices along ``times`` (for hygiene checks)."""
    system = with_sensor(four_level(params, drive, detect=detect), sensor)
    rho0 = np.kron(ground_state(4), projector(0, 0, 2))
    ys = Evolution(system, step=step).run(vec(rho0), times)
    return Trajectory(times=np.asarray(times, dtype=float), states=unvec(ys, 8))


def sensor_steady_state(params, drive, sensor_energies, linewidth=0.05, coupling=None, detect="V"):
    """Steady-state sensor population versus sensor energy under cw driving."""
    base = four_level(params, drive, detect=detect)
    out = np.empty(len(sensor_energies))
    nop = vec(sensor_population_operator(4).T)
    for i, e in enumerate(sensor_energies):
        cfg = SensorConfig(float(e), linewidth, coupling)
        system = with_sensor(base, cfg)
        l0, l1 = liouvillian_parts(system)
        rho = steady_state(l0 + drive.rabi_amplitude * l1)
        out[i] = np.real(nop @ rho)
    return out


# ---------------------------------------------------------------------------
# detector response


def irf_convolve(series, sigma, times=None, dt=None):
    """Convolve a time series with a normalized Gaussian IRF of width ``sigma`` (ps).

    The kernel is renormalized per source sample so the series sum is
    preserved exactly, including near the grid edges.
    """
    series = np.asarray(series, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if times is not None:
        dt = _spacing(times, "times")
    elif dt is None:
        raise ValueError("give times or dt")
    if sigma == 0:
        return series.copy()
    s = sigma / dt
    half = min(int(math.ceil(8 * s)), 4 * series.size)
    x = np.arange(-half, half + 1)
    kern = np.exp(-0.5 * (x / s) ** 2)
    norm = fftconvolve(np.ones_like(series), kern, mode="same")
    return fftconvolve(series / norm, kern, mode="same")
