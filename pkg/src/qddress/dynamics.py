"""Lindblad propagation and two-time correlations (quantum regression).

Two propagation routes are provided:

* :func:`propagate` -- adaptive Dormand-Prince (DOP853) integration of the
  vectorised master equation, with error control set by ``tol``.
* :class:`Evolution` -- exponential (fourth-order Magnus) stepping on a
  fixed grid.  Outside the pulse the generator is constant and segments
  are exact matrix exponentials.  All two-time quantities use this route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import StepUnderflow
from .liouville import (
    MagnusStepper,
    liouvillian_parts,
    schrodinger_parts,
    spre,
    steady_state,
    trace_row,
    unvec,
    vec,
)
from .model import ENVELOPE_FLOOR, XX, four_level, ket

MIN_STEP = 1e-6  # ps


@dataclass
class Trajectory:
    """Density matrices sampled on a time grid."""

    times: np.ndarray
    states: np.ndarray  # (n, d, d)

    @property
    def populations(self):
        return np.real(np.einsum("nii->ni", self.states))

    def expect(self, op):
        return np.einsum("ij,nji->n", op, self.states)

    def traces(self):
        return np.real(np.einsum("nii->n", self.states))

    def min_eigenvalues(self):
        herm = 0.5 * (self.states + np.conj(np.swapaxes(self.states, 1, 2)))
        return np.linalg.eigvalsh(herm)[:, 0]

    def hermiticity_error(self):
        return float(np.max(np.abs(self.states - np.conj(np.swapaxes(self.states, 1, 2)))))


def ground_state(dim=4):
    return np.outer(ket(0, dim), ket(0, dim)).astype(complex)


def pure_state(i, dim=4):
    return np.outer(ket(i, dim), ket(i, dim)).astype(complex)


def propagate(params, drive, rho0, t0, t1, tol=1e-9, t_eval=None):
    """Adaptive propagation of the four-level cascade from ``t0`` to ``t1``."""
    return propagate_system(four_level(params, drive), rho0, t0, t1, tol=tol, t_eval=t_eval)


def propagate_system(system, rho0, t0, t1, tol=1e-9, t_eval=None, min_step=MIN_STEP):
    """Adaptive DOP853 integration of ``d rho/dt = (L0 + Omega(t) L1) rho``.

    The interval is split at the edges of the pulse window so the step size
    is capped only while the field is on.  Raises :class:`StepUnderflow`
    when the integrator needs steps shorter than ``min_step``.
    """
    if not t1 > t0:
        raise ValueError("t1 must be larger than t0")
    if not tol > 0:
        raise ValueError("tol must be positive")
    l0, l1 = liouvillian_parts(system)
    dim = system.dim
    envelope = system.envelope

    def rhs(t, y):
        return l0 @ y + envelope(t) * (l1 @ y)

    if t_eval is None:
        t_eval = np.linspace(t0, t1, 201)
    t_eval = np.asarray(t_eval, dtype=float)

    edges = [t0, t1]
    window = system.window()
    if window is not None:
        for w in window:
            if t0 < w < t1:
                edges.append(w)
        cap_step = system.drive.tau_field / 8.0
    elif system.is_cw:
        cap_step = 0.25 / max(system.drive.peak_rabi, 1e-12)
    else:
        cap_step = np.inf
    edges = sorted(set(edges))

    y = vec(np.asarray(rho0, dtype=complex))
    out = np.empty((t_eval.size, dim * dim), dtype=complex)
    filled = np.zeros(t_eval.size, dtype=bool)
    for a, b in zip(edges[:-1], edges[1:]):
        inside = window is not None and a >= window[0] - 1e-12 and b <= window[1] + 1e-12
        max_step = cap_step if (inside or system.is_cw) else np.inf
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=tol, atol=tol,
                        max_step=max_step, dense_output=True)
        if sol.status < 0:
            raise StepUnderflow(sol.message)
        steps = np.diff(sol.t)
        if steps.size > 1 and np.min(steps[:-1]) < min_step:
            raise StepUnderflow(f"step {np.min(steps[:-1]):.3g} ps below {min_step} ps")
        sel = (t_eval >= a) & (t_eval <= b) & ~filled
        if np.any(sel):
            out[sel] = sol.sol(t_eval[sel]).T
            filled |= sel
        y = sol.y[:, -1]
    states = unvec(out, dim)
    return Trajectory(times=t_eval, states=states)


class Evolution:
    """Fixed-step exponential propagation of a :class:`DrivenSystem`.

    Parameters
    ----------
    system : DrivenSystem
    step : float
        Maximum Magnus step (ps) while the drive is on.
    closed : bool
        Propagate state vectors with ``-iH/hbar`` instead of density
        matrices.
    """

    def __init__(self, system, step=0.1, closed=False):
        self.system = system
        self.step = float(step)
        self.closed = closed
        a, b = schrodinger_parts(system) if closed else liouvillian_parts(system)
        self.stepper = MagnusStepper(a, b, system.envelope)
        self.window = system.window()
        if system.is_cw:
            self.free = a + system.drive.rabi_amplitude * b
        else:
            self.free = a
        self._cache = {}

    @property
    def generator_free(self):
        return self.free

    def _is_free(self, ta, tb):
        if self.system.is_cw or self.system.drive is None:
            return True
        if self.window is None:
            return True
        return tb <= self.window[0] or ta >= self.window[1]

    def _free_prop(self, dt):

        key = round(dt, 12)
        u = self._cache.get(key)
        if u is None:
            u = expm(self.free * dt)
            if len(self._cache) < 4096:
                self._cache[key] = u
        return u

    def segment_propagators(self, points):
        """Propagators between consecutive ``points`` (shape ``(n-1, D, D)``)."""
        points = np.asarray(points, dtype=float)
        n = points.size - 1
        dim = self.free.shape[0]
        out = np.empty((max(n, 0), dim, dim), dtype=complex)
        driven = []
        starts, hs = [], []
        for i in range(n):
            ta, tb = points[i], points[i + 1]
            if self._is_free(ta, tb):
                out[i] = self._free_prop(tb - ta)
                continue
            lo, hi = max(ta, self.window[0]), min(tb, self.window[1])
            m = max(1, int(math.ceil((hi - lo) / self.step - 1e-9)))
            h = (hi - lo) / m
            driven.append((i, lo, hi, len(starts), m))
            starts.extend(lo + j * h for j in range(m))
            hs.extend([h] * m)
        if starts:
            props = self.stepper.propagators(np.array(starts), np.array(hs))
            for i, lo, hi, first, m in driven:
                ta, tb = points[i], points[i + 1]
                acc = self._free_prop(lo - ta) if lo > ta else np.eye(dim, dtype=complex)
                for u in props[first:first + m]:
                    acc = u @ acc
                if tb > hi:
                    acc = self._free_prop(tb - hi) @ acc
                out[i] = acc
        return out

    def run(self, y0, times):
        """Propagate ``y0`` (vector, or matrix of column vectors) through ``times``."""
        times = np.asarray(times, dtype=float)
        y = np.asarray(y0, dtype=complex)
        props = self.segment_propagators(times)
        out = np.empty((times.size,) + y.shape, dtype=complex)
        out[0] = y
        for i, u in enumerate(props):
            y = u @ y
            out[i + 1] = y
        return out


def grid_trajectory(system, rho0, times, step=0.1):
    """Density matrices on ``times`` from exponential stepping."""
    evo = Evolution(system, step=step)
    ys = evo.run(vec(np.asarray(rho0, dtype=complex)), times)
    return Trajectory(times=np.asarray(times, dtype=float), states=unvec(ys, system.dim))


def coherent_trajectory(system, psi0, times, step=0.1):
    """State vectors of the decoherence-free dynamics on ``times``."""
    evo = Evolution(system, step=step, closed=True)
    return evo.run(np.asarray(psi0, dtype=complex), times)


# ---------------------------------------------------------------------------
# two-time correlations


@dataclass
class SpectralTail:
    """Continuation of a correlation grid past its edges.

    After the pulse the generator ``free`` is constant, so the remaining
    trapezoid sums are geometric series of the one-step propagator
    ``exp(free * step)``.  Using the same quadrature as on the grid keeps
    the seam at ``tau_end`` free of truncation ripple.  ``row_end[k]`` is
    the propagated ``sigma rho(t_k)`` at delay ``tau_end``; ``late_source``
    is ``sigma`` applied to the trapezoid sum of ``rho - rho_ss`` over
    ``t >= t_last`` (first point at half weight).
    """

    free: np.ndarray
    detect_row: np.ndarray
    rho_ss: np.ndarray
    row_end: np.ndarray
    tau_end: float
    late_source: np.ndarray
    step: float

    def _deflate(self, v):
        tr = trace_row(math.isqrt(self.free.shape[0]))
        return v - np.outer(self.rho_ss, tr @ v), np.outer(self.rho_ss, tr)

    def series_apply(self, omega, vectors):
        """``s [h (1 - z P)^-1 - h/2] v`` with ``z = exp(-i omega h)``, ``P = exp(L h)``.

        This is the trapezoid sum of ``s exp(L tau) v exp(-i omega tau)``
        over ``tau = 0, h, 2h, ...``.  The stationary component of ``v`` is
        removed first; the detector row annihilates it for pulsed problems.
        """
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        v = np.atleast_2d(np.asarray(vectors, dtype=complex))
        if v.shape[0] != self.free.shape[0]:
            v = v.T
        v, p = self._deflate(v)
        h = self.step
        prop = expm(self.free * h) - p
        eye = np.eye(prop.shape[0])
        z = np.exp(-1j * omega * h)
        mats = eye[None] - z[:, None, None] * prop[None]
        # s M^-1 v == ((M^T)^-1 s)^T v
        w = np.linalg.solve(np.transpose(mats, (0, 2, 1)),
                            np.broadcast_to(self.detect_row, (omega.size, prop.shape[0]))[..., None])[..., 0]
        return h * (w @ v) - 0.5 * h * (self.detect_row @ v)[None, :]


@dataclass
class TwoTimeGrid:
    """``G1(t, tau) = <sigma^dag(t + tau) sigma(t)>`` on a rectangular grid."""

    t_grid: np.ndarray
    tau_grid: np.ndarray
    values: np.ndarray
    emission: np.ndarray  # <sigma^dag sigma>(t) from the single-time states
    carrier: float = 0.0
    hbar: float = 0.6582119569
    tail: Optional[SpectralTail] = None
    meta: dict = field(default_factory=dict)

    def population_identity_error(self):
        return float(np.max(np.abs(self.values[:, 0] - self.emission)))


def _uniform(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
        raise ValueError(f"{name} must be strictly increasing with at least two points")
    return x


def correlation_g1(params, drive, t_grid, tau_grid, op="V", rho0=None, step=0.1, tail=True):
    """G1 of the four-level cascade for detection polarization ``op``."""
    return correlation_system(four_level(params, drive, detect=op), t_grid, tau_grid,
                              rho0=rho0, step=step, tail=tail)


def correlation_system(system, t_grid, tau_grid, rho0=None, step=0.1, tail=True, detector=None):
    """Quantum-regression evaluation of G1 on ``t_grid x tau_grid``.

    For every ``t_k`` the operator ``sigma rho(t_k)`` is evolved over the
    delays with the full time-dependent generator and projected on
    ``sigma^dag``.  All rows are advanced together on the union lattice of
    ``t_k + tau_m``.
    """
    t_grid = _uniform(t_grid, "t_grid")
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.ndim != 1 or tau_grid.size < 1 or tau_grid[0] != 0 or np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau_grid must start at 0 and be strictly increasing")
    dim = system.dim
    sig = system.detector if detector is None else detector
    if rho0 is None:
        rho0 = ground_state(dim)
    # Tr(A X) == vec(A.T) @ vec(X)
    s_row = vec(sig.conj()).astype(complex)
    sup_sigma = spre(sig)

    evo = Evolution(system, step=step)
    pairs = np.round(t_grid[:, None] + tau_grid[None, :], 9)
    lattice = np.union1d(np.unique(pairs), np.round(t_grid, 9))
    inverse = np.searchsorted(lattice, pairs)
    starts = np.searchsorted(lattice, np.round(t_grid, 9))

    props = evo.segment_propagators(lattice)
    n_t, n_tau = t_grid.size, tau_grid.size
    values = np.zeros((n_t, n_tau), dtype=complex)
    row_end = np.zeros((n_t, dim * dim), dtype=complex)
    emission = np.zeros(n_t)

    # pair bookkeeping, grouped by lattice index
    flat = inverse.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(lattice.size + 1))
    ks_all = order // n_tau
    ms_all = order % n_tau

    rho = vec(np.asarray(rho0, dtype=complex))
    rho_last = rho
    ys = np.zeros((dim * dim, n_t), dtype=complex)
    nsig = vec((sig.conj().T @ sig).T)
    row_of_start = {int(p): k for k, p in enumerate(starts)}
    lo = 0  # first unfinished row
    hi = 0  # one past the last started row
    finish = inverse[:, -1]
    for p in range(lattice.size):
        if p > 0:
            u = props[p - 1]
            rho = u @ rho
            if hi > lo:
                ys[:, lo:hi] = u @ ys[:, lo:hi]
        k = row_of_start.get(p)
        if k is not None:
            ys[:, k] = sup_sigma @ rho
            emission[k] = np.real(nsig @ rho)
            hi = k + 1
        a, b = bounds[p], bounds[p + 1]
        if b > a:
            ks = ks_all[a:b]
            ms = ms_all[a:b]
            values[ks, ms] = s_row @ ys[:, ks]
            last = ms == n_tau - 1
            if np.any(last):
                row_end[ks[last]] = ys[:, ks[last]].T
        if p == starts[-1]:
            rho_last = rho.copy()
        while lo < hi and finish[lo] <= p:
            lo += 1

    grid = TwoTimeGrid(t_grid=t_grid, tau_grid=tau_grid, values=values, emission=emission,
                       carrier=system.carrier, hbar=system.hbar)
    if tail and not system.is_cw:
        grid.tail = _build_tail(system, evo, t_grid, tau_grid, row_end, rho_last, sup_sigma, s_row)
    return grid


def _build_tail(system, evo, t_grid, tau_grid, row_end, rho_last, sup_sigma, s_row):
    window = system.window()
    if window is not None:
        # continuation needs the drive to be off at both grid edges
        edges = np.array([t_grid[-1], t_grid[0] + tau_grid[-1]])
        late = edges >= window[1] - 1e-9
        if not np.all(late | (np.abs(system.envelope(edges)) <= 10 * ENVELOPE_FLOOR)):
            return None
        if np.any(edges < system.drive.center_time):
            return None
    if not system.collapse:
        return None
    free = evo.generator_free
    rho_ss = steady_state(free)
    dim = system.dim
    tr = trace_row(dim)
    p = np.outer(rho_ss, tr)
    dt = float(t_grid[1] - t_grid[0]) if t_grid.size > 1 else float(tau_grid[1] - tau_grid[0])
    r = rho_last - rho_ss * (tr @ rho_last)
    prop = expm(free * dt) - p
    y = dt * np.linalg.solve(np.eye(prop.shape[0]) - prop, r) - 0.5 * dt * r
    late = sup_sigma @ y
    return SpectralTail(free=free, detect_row=s_row, rho_ss=rho_ss, row_end=row_end,
                        tau_end=float(tau_grid[-1]), late_source=late,
                        step=float(tau_grid[1] - tau_grid[0]))


# ---------------------------------------------------------------------------
# pulse-area scans


@dataclass
class RabiTable:
    tau: np.ndarray
    scan_value: np.ndarray
    pulse_area: np.ndarray
    final_xx: np.ndarray
    emission_xx: np.ndarray

    def rows(self):
        return np.column_stack([self.tau, self.scan_value, self.pulse_area,
                                self.final_xx, self.emission_xx])


def _batched_pulse(params, drive, areas, step, closed):
    """Final XX population and integrated XX population for many areas.

    Returns ``(p_final, p_integral)`` where the integral runs over the pulse
    window only.
    """

    unit = drive.with_area(1.0)
    system = four_level(params, unit)
    window = unit.active_window(floor=1e-12)
    t_lo, t_hi = window
    m = int(math.ceil((t_hi - t_lo) / step))
    h = (t_hi - t_lo) / m
    a, b = schrodinger_parts(system) if closed else liouvillian_parts(system)
    comm = b @ a - a @ b
    areas = np.asarray(areas, dtype=float)
    n = areas.size
    dim = system.dim
    if closed:
        y = np.zeros((n, dim), dtype=complex)
        y[:, 0] = 1.0
    else:
        y = np.zeros((n, dim * dim), dtype=complex)
        y[:, 0] = 1.0
    xx_index = XX if closed else XX * dim + XX
    c = math.sqrt(3.0) / 6.0
    integral = np.zeros(n)
    prev = np.zeros(n)
    for j in range(m):
        t0 = t_lo + j * h
        g1 = unit.envelope(t0 + (0.5 - c) * h)
        g2 = unit.envelope(t0 + (0.5 + c) * h)
        gen = (h * a)[None] + (0.5 * h * (g1 + g2) * areas)[:, None, None] * b[None] \
            + ((math.sqrt(3.0) / 12.0) * h * h * (g2 - g1) * areas)[:, None, None] * comm[None]
        if closed:
            # gen = -i K with K Hermitian
            kmat = 1j * gen
            kmat = 0.5 * (kmat + np.conj(np.swapaxes(kmat, 1, 2)))
            w, v = np.linalg.eigh(kmat)
            u = np.einsum("bij,bj,bkj->bik", v, np.exp(-1j * w), np.conj(v))
        else:
            u = expm(gen)
        y = np.einsum("bij,bj->bi", u, y)
        cur = np.abs(y[:, XX]) ** 2 if closed else np.real(y[:, xx_index])
        integral += 0.5 * h * (prev + cur)
        prev = cur
    return prev, integral


def rabi_scan(params, tau_list, areas=None, sqrt_powers=None, power_scale=1.0,
              step=None, coherent=False, template=None):
    """Rabi rotations of the G <-> XX transition under resonant pulses.

    Exactly one of ``areas`` (pulse areas Theta) or ``sqrt_powers`` (the
    square-root power axis, see :func:`qddress.analysis.power_axis`) must be
    given.  The time-integrated XX emission is ``gamma_xx * int P_XX dt``
    over all times; after the pulse P_XX decays mono-exponentially so the
    tail is added in closed form.
    """
    from .analysis import area_from_power
    from .model import DriveField

    if (areas is None) == (sqrt_powers is None):
        raise ValueError("give exactly one of areas or sqrt_powers")
    tau_list = np.atleast_1d(np.asarray(tau_list, dtype=float))
    grid = np.asarray(areas if areas is not None else sqrt_powers, dtype=float)
    if tau_list.size == 0 or grid.size == 0:
        raise ValueError("scan grids must be non-empty")
    rows = []
    for tau in tau_list:
        theta = grid if areas is not None else area_from_power(grid, tau, power_scale)
        drive = template if template is not None else DriveField.pulse(1.0, tau)
        if template is not None:
            from dataclasses import replace
            drive = replace(template, tau_intensity_fwhm=float(tau))
        h = step if step is not None else min(0.2, drive.tau_field / 20.0)
        p_final, p_int = _batched_pulse(params, drive, theta, h, closed=coherent)
        emission = params.gamma_xx * p_int + p_final
        rows.append((np.full(grid.size, tau), grid, theta, p_final, emission))
    cols = [np.concatenate(c) for c in zip(*rows)]
    return RabiTable(*cols)
