"""Scan runners behind ``qddress run``.

Each scan kind turns a validated :class:`~qddress.io.ScanSpec` into data
files (binary grid plus columnar text) and, when plotting is on, SVG
figures.  Independent scan points are distributed over a process pool;
all file writing happens in the calling process.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import io
from .analysis import (
    area_from_power,
    calibrate_effective_area,
    calibrate_power_scale,
    emission_maximum_time,
    find_peaks,
    fit_lifetimes,
    fitted_phase,
    fringe_contrast,
    lifetime_model_x,
    lifetime_model_xx,
    line_energies,
    power_axis,
    rotations_from_curve,
    first_maximum,
    sideband_times,
    synthetic_histograms,
    track_peaks,
)
from .dressed import dress, transition_catalog
from .dynamics import rabi_scan
from .errors import ConfigInvalid, IoFailure, NoSolution
from .model import build_hamiltonian
from .spectra import (
    SensorConfig,
    SpectrumMap,
    cw_spectrum,
    irf_convolve,
    pulse_grids,
    pulsed_g1,
    pulsed_spectrum,
    resolution_window,
    sensor_emission,
    time_dependent_spectrum,
)

WORKERS_ENV = "QDDRESS_WORKERS"


def worker_count(requested=None):
    """Worker processes: explicit request, else ``$QDDRESS_WORKERS``, else 1."""
    if requested is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if not raw:
            return 1
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigInvalid(WORKERS_ENV, f"not an integer: {raw!r}") from None
    if requested < 1:
        raise ConfigInvalid("workers", "must be at least 1")
    return int(requested)


def parallel_map(func, items, workers=1):
    """Ordered map over ``items``; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# point tasks (module level so they pickle)


def _task_pulsed_row(args):
    params, drive, energy, step, detect, weighted, fwhm = args
    spec = pulsed_spectrum(params, drive, energy, detect=detect, step=step, weighted=weighted)
    if fwhm:
        spec = resolution_window(spec, fwhm)
    return spec.row


def _task_cw_row(args):
    params, drive, energy, detect, fwhm = args
    smap, _ = cw_spectrum(params, drive, energy, detect=detect)
    if fwhm:
        smap = resolution_window(smap, fwhm)
    return smap.row


def _task_calibrate(args):
    params, tau, lam, detuning = args
    return calibrate_effective_area(params, tau, lam, detuning=detuning)


def _task_sensor(args):
    params, drive, sensor, step, detect, t_after = args
    return sensor_emission(params, drive, sensor, step=step, detect=detect, t_after=t_after)[1]


def _task_rabi(args):
    params, tau, areas, sqrt_powers, scale = args
    return rabi_scan(params, [tau], areas=areas, sqrt_powers=sqrt_powers, power_scale=scale)


# ---------------------------------------------------------------------------
# helpers


def _numerics(spec):
    return (spec.get("numerics.step"), str(spec.get("numerics.detect")).upper(),
            bool(spec.get("numerics.weighted")), spec.get("numerics.resolution_fwhm"))


def pulse_area_for(spec, params):
    """Pulse area from ``drive.pulse_area`` or a calibrated ``drive.effective_area_pi``."""
    lam = spec.get("drive.effective_area_pi")
    if lam is None:
        return float(spec.get("drive.pulse_area"))
    tau = spec.get("drive.tau_intensity_fwhm")
    return float(calibrate_effective_area(params, tau, lam * math.pi))


def power_scale_for(spec, params, tau):
    """``scan.power_scale`` or, when unset, the scale putting the first XX maximum at 1."""
    scale = spec.get("scan.power_scale")
    if scale is None:
        scale = calibrate_power_scale(params, tau)
    return float(scale)


def _write_map(spec, smap, stem, markers=None, title=None):
    out = spec.output_dir
    paths = [os.path.join(out, f"{stem}.qdg"), os.path.join(out, f"{stem}.txt")]
    io.write_grid(paths[0], smap, {"config_sha256": spec.config_hash(), "scan_kind": spec.kind,
                                   "config": spec.echo(),
                                   "markers": [] if markers is None else list(markers)})
    io.write_map_text(paths[1], smap, spec)
    if spec.get("scan.plot"):
        from .plotting import render_map

        paths.append(os.path.join(out, f"{stem}.svg"))
        render_map(smap, paths[-1], markers=markers, title=title)
    return paths


def _peak_table(spec, params, drives, smap):
    """Sideband census per map row: ``axis2, n_sidebands_XX, n_sidebands_X``."""
    thr = spec.get("numerics.threshold")
    rows, lists = [], []
    for drive, a2, row in zip(drives, smap.axis2, smap.intensity):
        pk = find_peaks(smap.energy_grid, row, thr, lines=line_energies(params, drive))
        lists.append(pk.sidebands("XX"))
        rows.append((a2, pk.count("sideband", "XX"), pk.count("sideband", "X")))
    return np.array(rows, dtype=float).reshape(-1, 3), lists


# ---------------------------------------------------------------------------
# scan kinds


def run_power_map(spec, workers=1):
    params = spec.system()
    base = spec.drive()
    tau = base.tau_intensity_fwhm
    scale = power_scale_for(spec, params, tau)
    step, detect, weighted, fwhm = _numerics(spec)
    if spec.grid("pulse_area") is not None:
        areas = spec.grid("pulse_area")
    elif spec.grid("sqrt_power") is not None:
        areas = area_from_power(spec.grid("sqrt_power"), tau, scale)
    else:
        lams = spec.grid("effective_area_pi") * math.pi
        areas = np.array(parallel_map(_task_calibrate, [(params, tau, lam, base.laser_detuning)
                                                        for lam in lams], workers))
    energy = spec.grid("energy")
    drives = [replace(base, pulse_area=float(a)) for a in areas]
    rows = parallel_map(_task_pulsed_row, [(params, d, energy, step, detect, weighted, fwhm)
                                           for d in drives], workers)
    sqrt_p = power_axis(areas, tau, scale)
    smap = SpectrumMap(energy, sqrt_p, np.array(rows), "sqrtP",
                       {"tau_ps": tau, "power_scale": scale, "detect": detect})
    paths = _write_map(spec, smap, "power_map", title=f"tau = {tau:g} ps")
    census, _ = _peak_table(spec, params, drives, smap)
    p = os.path.join(spec.output_dir, "power_map_points.txt")
    io.write_columns(p, [sqrt_p, areas, census[:, 1], census[:, 2]],
                     ["sqrtP", "pulse_area_rad", "sidebands_xx", "sidebands_x"], spec,
                     units="sqrtP arb., pulse area rad")
    return paths + [p]


def run_detuning_map_cw(spec, workers=1):
    params = spec.system()
    step, detect, weighted, fwhm = _numerics(spec)
    energy = spec.grid("energy")
    dets = spec.grid("detuning")
    drives = [spec.drive(laser_detuning=d) for d in dets]
    rows = parallel_map(_task_cw_row, [(params, d, energy, detect, fwhm) for d in drives], workers)
    smap = SpectrumMap(energy, dets, np.array(rows), "detuning_meV",
                       {"rabi_energy_meV": spec.get("drive.rabi_energy"), "detect": detect})
    paths = _write_map(spec, smap, "detuning_map_cw")
    # dressed-state transition energies (absolute) for every detuning
    cols = [[], [], [], []]
    for d, drive in zip(dets, drives):
        frame = dress(build_hamiltonian(params, drive, 0.0))
        carrier = drive.laser_energy(params)
        for ln in transition_catalog(frame, detect):
            if ln.from_index == ln.to_index:
                continue
            cols[0].append(d)
            cols[1].append(carrier + ln.energy)
            cols[2].append(ln.weight)
            cols[3].append(1.0 if ln.line_class == "XX" else 0.0)
    p = os.path.join(spec.output_dir, "detuning_map_cw_lines.txt")
    io.write_columns(p, cols, ["detuning_meV", "energy_meV", "weight", "xx_class"], spec,
                     units="meV absolute")
    return paths + [p]


def run_detuning_map_pulsed(spec, workers=1):
    params = spec.system()
    step, detect, weighted, fwhm = _numerics(spec)
    theta = pulse_area_for(spec, params)
    energy = spec.grid("energy")
    dets = spec.grid("detuning")
    drives = [spec.drive(pulse_area=theta, laser_detuning=d) for d in dets]
    rows = parallel_map(_task_pulsed_row, [(params, d, energy, step, detect, weighted, fwhm)
                                           for d in drives], workers)
    smap = SpectrumMap(energy, dets, np.array(rows), "detuning_meV",
                       {"pulse_area": theta, "tau_ps": drives[0].tau_intensity_fwhm})
    paths = _write_map(spec, smap, "detuning_map_pulsed")
    _, lists = _peak_table(spec, params, drives, smap)
    tracks = track_peaks(dets, lists, max_jump=4 * max(abs(dets[1] - dets[0]), 1e-3)
                         if dets.size > 1 else 1.0)
    p = os.path.join(spec.output_dir, "detuning_map_pulsed_tracks.txt")
    io.write_columns(p, [dets] + list(tracks), ["detuning_meV"] +
                     [f"track_{k}" for k in range(tracks.shape[0])], spec,
                     units="meV absolute; nan where a track has no peak")
    return paths + [p]


def run_time_spectrum(spec, workers=1):
    params = spec.system()
    step, detect, weighted, fwhm = _numerics(spec)
    theta = pulse_area_for(spec, params)
    drive = spec.drive(pulse_area=theta)
    energy = spec.grid("energy")
    times = spec.grid("times")
    w0, w1 = drive.active_window()
    t_after = max(0.0, float(times[-1]) - w1)
    t_grid, _ = pulse_grids(drive, step, t_after)
    if times[0] < t_grid[0] or times[-1] > t_grid[-1]:
        raise ConfigInvalid("scan.times", f"must lie within [{t_grid[0]:.6g}, {t_grid[-1]:.6g}] ps")
    g1 = pulsed_g1(params, drive, detect=detect, step=step, t_after=t_after, weighted=weighted)
    smap = time_dependent_spectrum(g1, energy, times)
    if fwhm:
        smap = resolution_window(smap, fwhm)
    smap.meta.update({"pulse_area": theta, "tau_ps": drive.tau_intensity_fwhm})
    # effective-phase sideband times for the cascade
    try:
        t_n = drive.center_time + sideband_times(drive, phase=fitted_phase(params, drive))
    except NoSolution:
        t_n = np.array([])
    paths = _write_map(spec, smap, "time_spectrum", markers=t_n)
    p = os.path.join(spec.output_dir, "sideband_times.txt")
    io.write_columns(p, [np.arange(t_n.size), t_n], ["n", "t_n_ps"], spec, units="ps")
    return paths + [p]


def run_rabi_curves(spec, workers=1):
    params = spec.system()
    taus = spec.grid("tau")
    scale = power_scale_for(spec, params, float(np.max(taus)))
    areas = spec.grid("pulse_area")
    powers = spec.grid("sqrt_power")
    tables = parallel_map(_task_rabi, [(params, t, areas, powers, scale) for t in taus], workers)
    cols = [np.concatenate(c) for c in zip(*(t.rows().T for t in tables))]
    from .dynamics import RabiTable

    table = RabiTable(*cols)
    out = spec.output_dir
    p = os.path.join(out, "rabi_curves.txt")
    io.write_columns(p, list(table.rows().T),
                     ["tau_ps", "scan_value", "pulse_area_rad", "final_xx", "emission_xx"], spec,
                     units="ps, scan axis, rad, population, population")
    summary = []
    for t in tables:
        x = power_axis(t.pulse_area, t.tau[0], scale)
        try:
            first = first_maximum(x, t.emission_xx)
        except NoSolution:
            first = float("nan")
        summary.append((t.tau[0], first, rotations_from_curve(x, t.final_xx)))
    s = np.array(summary)
    p2 = os.path.join(out, "rabi_summary.txt")
    io.write_columns(p2, list(s.T), ["tau_ps", "first_max_sqrtP", "rotations_pi"], spec,
                     units="ps, sqrtP arb., multiples of pi", power_scale=repr(scale))
    paths = [p, p2]
    if spec.get("scan.plot"):
        from .plotting import render_rabi

        paths.append(os.path.join(out, "rabi_curves.svg"))
        render_rabi(table, paths[-1], scale)
    return paths


def run_sensor_traces(spec, workers=1):
    params = spec.system()
    step, detect, _, _ = _numerics(spec)
    theta = pulse_area_for(spec, params)
    drive = spec.drive(pulse_area=theta)
    lw = spec.get("numerics.sensor_linewidth")
    coupling = spec.get("numerics.sensor_coupling")
    t_after = spec.get("numerics.t_after")
    energies = spec.grid("sensor_energy")
    sensors = [SensorConfig(float(e), lw, coupling) for e in energies]
    traces = parallel_map(_task_sensor, [(params, drive, s, step, detect, t_after)
                                         for s in sensors], workers)
    w0, _ = drive.active_window()
    times = w0 + step * np.arange(len(traces[0]))
    cols, names, summary = [times], ["time_ps"], []
    for e, tr in zip(energies, traces):
        for sig in spec.grid("irf_sigma"):
            y = irf_convolve(tr, sig, dt=step)
            cols.append(y)
            names.append(f"E{e:.4f}_sigma{sig:g}")
            summary.append((e, sig, emission_maximum_time(times, y), fringe_contrast(y)))
    out = spec.output_dir
    p = os.path.join(out, "sensor_traces.txt")
    io.write_columns(p, cols, names, spec, units="time ps, sensor population",
                     pulse_area=repr(theta))
    s = np.array(summary)
    p2 = os.path.join(out, "sensor_summary.txt")
    io.write_columns(p2, list(s.T), ["sensor_energy_meV", "irf_sigma_ps", "t_max_ps",
                                     "fringe_contrast"], spec, units="meV, ps, ps, relative")
    paths = [p, p2]
    if spec.get("scan.plot"):
        from .plotting import render_traces

        paths.append(os.path.join(out, "sensor_traces.svg"))
        render_traces(times, cols[1:], names[1:], paths[-1])
    return paths


def run_lifetime_fit(spec, workers=1):
    params = spec.system()
    out = spec.output_dir
    paths = []
    if spec.get("scan.hist_xx") is not None:
        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(spec.base_dir, p)

        t_xx, c_xx = io.read_histogram(resolve(spec.get("scan.hist_xx")))
        t_x, c_x = io.read_histogram(resolve(spec.get("scan.hist_x")))
    else:
        t = spec.grid("times")
        rng = np.random.default_rng(spec.get("scan.seed"))
        c_xx, c_x = synthetic_histograms(t, 1.0 / params.gamma_xx, 1.0 / params.gamma_x,
                                         spec.grid("irf_sigma")[0], peak=spec.get("scan.peak_counts"),
                                         rng=rng)
        t_xx = t_x = t
        for name, c in (("hist_xx.txt", c_xx), ("hist_x.txt", c_x)):
            paths.append(os.path.join(out, name))
            io.write_histogram(paths[-1], t, c, seed=spec.get("scan.seed"))
    fit = fit_lifetimes(t_xx, c_xx, t_x, c_x)
    paths.append(os.path.join(out, "lifetime_fit.txt"))
    io.write_report(paths[-1], fit.report(), spec, units="ps; amplitudes in counts")
    if spec.get("scan.plot"):
        from .plotting import render_histograms

        paths.append(os.path.join(out, "lifetime_fit.svg"))
        mx = lifetime_model_xx(t_xx, fit.amplitude, fit.tau_xx, fit.sigma_irf, fit.t0)
        m = lifetime_model_x(t_x, fit.amplitude_x, fit.tau_xx, fit.tau_x, fit.sigma_irf, fit.t0)
        render_histograms(t_xx, c_xx, mx, t_x, c_x, m, paths[-1])
    return paths


RUNNERS = {
    "power_map": run_power_map,
    "detuning_map_cw": run_detuning_map_cw,
    "detuning_map_pulsed": run_detuning_map_pulsed,
    "time_spectrum": run_time_spectrum,
    "rabi_curves": run_rabi_curves,
    "sensor_traces": run_sensor_traces,
    "lifetime_fit": run_lifetime_fit,
}


def run_scan(spec, workers=1):
    """Run ``spec`` and return the written file paths."""
    try:
        os.makedirs(spec.output_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {spec.output_dir}: {exc}") from None
    return RUNNERS[spec.kind](spec, workers)
