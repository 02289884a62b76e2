"""Static vector figures of spectrum maps, traces and Rabi curves.

SVG output is byte-deterministic: the id hash salt is fixed and no date is
written.  Heat-map meshes are embedded as images to keep files small;
axes, lines and text stay vector.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402

from .errors import IoFailure  # noqa: E402

LOG_FLOOR = 1e-6  # flat offset relative to the map maximum

AXIS_LABELS = {
    "sqrtP": r"$\sqrt{P}$ (arb. u.)",
    "pulse_area": r"pulse area $\Theta$ (rad)",
    "detuning_meV": r"laser detuning $\Delta_L$ (meV)",
    "t_ps": "time (ps)",
    "row": "",
}

RC = {
    "svg.hashsalt": "qddress",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.linewidth": 0.8,
    "figure.dpi": 100,
    "savefig.dpi": 200,
}


def _save(fig, path):
    try:
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)


def map_figure(smap, floor=LOG_FLOOR, markers=None, title=None):
    """Log-intensity heat map, or a log line plot for single-row maps.

    ``floor`` is added to every pixel as a fraction of the maximum so empty
    regions stay finite on the log scale.  ``markers`` is an optional
    sequence of ``axis2`` values drawn as horizontal guide lines (for
    example sideband times on a time map).  Call inside
    ``plt.rc_context(RC)`` for the deterministic style.
    """
    intensity = np.asarray(smap.intensity, dtype=float)
    top = float(np.max(intensity)) if intensity.size else 0.0
    offset = floor * top if top > 0 else floor
    data = np.maximum(intensity, 0.0) + offset
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    if smap.axis2.size == 1:
        ax.semilogy(smap.energy_grid, data[0], lw=0.8, color="k")
        ax.set_ylabel("intensity (arb. u.)")
    else:
        mesh = ax.pcolormesh(smap.energy_grid, smap.axis2, data, shading="nearest",
                             norm=LogNorm(vmin=offset, vmax=max(top + offset, offset * 10)),
                             cmap="viridis", rasterized=True)
        fig.colorbar(mesh, ax=ax, label="intensity (arb. u.)")
        ax.set_ylabel(AXIS_LABELS.get(smap.axis2_name, smap.axis2_name))
        for m in markers if markers is not None else ():
            if np.isfinite(m):
                ax.axhline(m, color="r", lw=0.6, ls="--")
    ax.set_xlabel("emission energy (meV)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def render_map(smap, path, floor=LOG_FLOOR, markers=None, title=None):
    """Write :func:`map_figure` to ``path`` as SVG."""
    with plt.rc_context(RC):
        _save(map_figure(smap, floor, markers, title), path)


def render_traces(times, traces, labels, path, xlabel="time (ps)", ylabel="signal (norm.)",
                  normalize=True):
    """Overlay of time traces, each scaled to its maximum when ``normalize``."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for y, lab in zip(traces, labels):
            y = np.asarray(y, dtype=float)
            if normalize and np.max(np.abs(y)) > 0:
                y = y / np.max(np.abs(y))
            ax.plot(times, y, lw=0.9, label=lab)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def render_rabi(table, path, scale=1.0):
    """Final XX population against the power axis for each pulse duration."""
    from .analysis import power_axis

    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for tau in np.unique(table.tau):
            sel = table.tau == tau
            ax.plot(power_axis(table.pulse_area[sel], tau, scale), table.emission_xx[sel],
                    lw=0.9, label=f"{tau:g} ps")
        ax.set_xlabel(AXIS_LABELS["sqrtP"])
        ax.set_ylabel("XX emission (arb. u.)")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def render_histograms(t_xx, counts_xx, model_xx, t_x, counts_x, model_x, path):
    """Lifetime histograms on a log scale with the fitted models."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        ax.semilogy(t_xx, np.maximum(counts_xx, 0.5), ".", ms=2, color="C0", label="XX")
        ax.semilogy(t_x, np.maximum(counts_x, 0.5), ".", ms=2, color="C1", label="X")
        ax.semilogy(t_xx, np.maximum(model_xx, 0.5), lw=0.9, color="C0")
        ax.semilogy(t_x, np.maximum(model_x, 0.5), lw=0.9, color="C1")
        ax.set_xlabel("time (ps)")
        ax.set_ylabel("counts")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)
