"""Configuration files, columnar text export and the binary grid format.

Config files are flat INI-style key-value text with one section per
concern::

    [system]
    binding_energy = 2.1

    [drive]
    kind = gaussian_pulse
    tau_intensity_fwhm = 14

    [scan]
    kind = power_map
    energy = 1350:1353:1501
    effective_area_pi = 0.5:10:40

Grids are either comma lists or ``start:stop:count`` (inclusive linspace).
Energies are absolute meV, times ps, rates 1/ps.  When ``scan.power_scale``
is unset the square-root power axis is scaled so the first XX-emission
maximum of the longest pulse sits at 1.

Binary grid layout (little endian)::

    8 bytes   magic b"QDGRID1\\0"
    3 x u32   n_energy, n_axis2, n_meta (bytes of UTF-8 JSON)
    f64[n_energy]            energy axis (meV)
    f64[n_axis2]             second axis
    f64[n_axis2 * n_energy]  intensity, row-major (one row per axis2 value)
    n_meta bytes             JSON metadata
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, IoFailure, MalformedGrid
from .model import DriveField, SystemParameters
from .spectra import SpectrumMap

SCAN_KINDS = ("power_map", "detuning_map_cw", "detuning_map_pulsed", "time_spectrum",
              "rabi_curves", "sensor_traces", "lifetime_fit")

# (type, default); None means optional without default
_SYSTEM_KEYS = {
    "exciton_energy": (float, 1354.1),
    "binding_energy": (float, 2.1),
    "fss": (float, 0.0),
    "gamma_xx": (float, 1.0 / 157.0),
    "gamma_x": (float, 1.0 / 295.0),
    "dephasing": (float, 0.0),
}
_DRIVE_KEYS = {
    "kind": (str, "gaussian_pulse"),
    "pulse_area": (float, 0.0),
    "effective_area_pi": (float, None),
    "rabi_energy": (float, 0.0),
    "tau_intensity_fwhm": (float, 14.0),
    "center_time": (float, 0.0),
    "laser_detuning": (float, 0.0),
    "alpha_h": (float, 1.0),
    "alpha_v": (float, 0.0),
}
_SCAN_KEYS = {
    "kind": (str, None),
    "output": (str, "out"),
    "plot": (bool, True),
    "seed": (int, 0),
    "energy": ("grid", None),
    "pulse_area": ("grid", None),
    "effective_area_pi": ("grid", None),
    "sqrt_power": ("grid", None),
    "power_scale": (float, None),
    "detuning": ("grid", None),
    "tau": ("grid", None),
    "times": ("grid", None),
    "sensor_energy": ("grid", None),
    "irf_sigma": ("grid", None),
    "hist_xx": (str, None),
    "hist_x": (str, None),
    "peak_counts": (float, 1e4),
}
_NUMERICS_KEYS = {
    "step": (float, 0.1),
    "detect": (str, "V"),
    "weighted": (bool, False),
    "resolution_fwhm": (float, 0.0),
    "threshold": (float, 1e-3),
    "sensor_linewidth": (float, 0.05),
    "sensor_coupling": (float, None),
    "t_after": (float, 300.0),
}
SCHEMA = {"system": _SYSTEM_KEYS, "drive": _DRIVE_KEYS, "scan": _SCAN_KEYS, "numerics": _NUMERICS_KEYS}

# kind -> groups of keys; at least one key of every group must be present
_REQUIRED = {
    "power_map": [("energy",), ("pulse_area", "effective_area_pi", "sqrt_power")],
    "detuning_map_cw": [("energy",), ("detuning",)],
    "detuning_map_pulsed": [("energy",), ("detuning",)],
    "time_spectrum": [("energy",), ("times",)],
    "rabi_curves": [("tau",), ("pulse_area", "sqrt_power")],
    "sensor_traces": [("sensor_energy",), ("irf_sigma",)],
    "lifetime_fit": [("irf_sigma",)],
}
_NEEDS_PULSE = {"power_map", "detuning_map_pulsed", "time_spectrum", "sensor_traces"}


def parse_grid(text, key="grid"):
    """``"a, b, c"`` or ``"start:stop:count"`` -> tuple of floats."""
    s = str(text).strip()
    if not s:
        raise ConfigInvalid(key, "grid is empty")
    try:
        if ":" in s:
            parts = [p.strip() for p in s.split(":")]
            if len(parts) != 3:
                raise ValueError("range needs start:stop:count")
            start, stop = float(parts[0]), float(parts[1])
            count = int(parts[2])
            if count < 1:
                raise ValueError("count must be positive")
            values = np.linspace(start, stop, count)
        else:
            values = np.array([float(p) for p in s.split(",") if p.strip()])
    except ValueError as exc:
        raise ConfigInvalid(key, f"cannot parse grid {s!r} ({exc})") from None
    if values.size == 0:
        raise ConfigInvalid(key, "grid is empty")
    if not np.all(np.isfinite(values)):
        raise ConfigInvalid(key, "grid values must be finite")
    return tuple(float(v) for v in values)


def _convert(kind, raw, key):
    raw = raw.strip()
    if kind == "grid":
        return parse_grid(raw, key)
    if raw == "":
        return None
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("value must be finite")
            return v
        return raw
    except ValueError as exc:
        raise ConfigInvalid(key, str(exc)) from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        n = len(value)
        if n >= 3 and tuple(float(v) for v in np.linspace(value[0], value[-1], n)) == value:
            return f"{value[0]!r}:{value[-1]!r}:{n}"
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


@dataclass(frozen=True)
class ScanSpec:
    """Validated scan description.

    ``values`` maps ``section.key`` to the typed value of every key that
    was set (defaults included); grids are tuples.
    """

    kind: str
    values: dict = field(hash=False)
    base_dir: str = field(default=".", compare=False)

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def grid(self, name):
        v = self.values.get(f"scan.{name}")
        return None if v is None else np.asarray(v, dtype=float)

    def system(self):
        kw = {k: self.values[f"system.{k}"] for k in _SYSTEM_KEYS}
        return SystemParameters(**kw)

    def drive(self, pulse_area=None, laser_detuning=None):
        """DriveField from the ``[drive]`` section, with optional overrides."""
        kw = {k: self.values[f"drive.{k}"] for k in
              ("tau_intensity_fwhm", "center_time", "laser_detuning", "alpha_h", "alpha_v")}
        if laser_detuning is not None:
            kw["laser_detuning"] = float(laser_detuning)
        if self.values["drive.kind"] == "cw":
            kw.pop("tau_intensity_fwhm")
            kw.pop("center_time")
            return DriveField.cw(self.values["drive.rabi_energy"], **kw)
        area = self.values["drive.pulse_area"] if pulse_area is None else pulse_area
        return DriveField.pulse(area, kw.pop("tau_intensity_fwhm"), **kw)

    @property
    def output_dir(self):
        out = self.values["scan.output"]
        return out if os.path.isabs(out) else os.path.join(self.base_dir, out)

    def echo(self):
        """Canonical config text; parsing it gives an equal spec."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for k in keys:
                v = self.values.get(f"{section}.{k}")
                if v is not None:
                    lines.append(f"{k} = {_format(v)}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self):
        return hashlib.sha256(self.echo().encode()).hexdigest()


def parse_config(text, base_dir="."):
    """Parse and validate config text into a :class:`ScanSpec`.

    All checks run before any computation; the first problem raises
    :class:`ConfigInvalid` naming the offending ``section.key``.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid("config", f"syntax error: {exc}") from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigInvalid(section, "unknown section")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigInvalid(f"{section}.{key}", "unknown key")
    values = {}
    for section, keys in SCHEMA.items():
        for key, (kind, default) in keys.items():
            full = f"{section}.{key}"
            if cp.has_option(section, key):
                values[full] = _convert(kind, cp[section][key], full)
            else:
                values[full] = default
    return _validate(values, base_dir)


def _validate(values, base_dir):
    kind = values["scan.kind"]
    if kind is None:
        raise ConfigInvalid("scan.kind", "missing")
    if kind not in SCAN_KINDS:
        raise ConfigInvalid("scan.kind", f"must be one of {', '.join(SCAN_KINDS)}")
    for group in _REQUIRED[kind]:
        if all(values[f"scan.{k}"] is None for k in group):
            names = " or ".join(f"scan.{k}" for k in group)
            raise ConfigInvalid(f"scan.{group[0]}", f"{names} required for {kind}")
    if kind == "lifetime_fit":
        has_files = values["scan.hist_xx"] is not None or values["scan.hist_x"] is not None
        if has_files and (values["scan.hist_xx"] is None or values["scan.hist_x"] is None):
            raise ConfigInvalid("scan.hist_x", "hist_xx and hist_x must be given together")
        if not has_files and values["scan.times"] is None:
            raise ConfigInvalid("scan.times", "synthetic lifetime_fit needs a times grid")
        if len(values["scan.irf_sigma"]) != 1:
            raise ConfigInvalid("scan.irf_sigma", "lifetime_fit takes a single irf_sigma")
    dk = values["drive.kind"]
    if dk not in ("cw", "gaussian_pulse"):
        raise ConfigInvalid("drive.kind", "must be cw or gaussian_pulse")
    if kind in _NEEDS_PULSE and dk != "gaussian_pulse":
        raise ConfigInvalid("drive.kind", f"{kind} needs a gaussian_pulse drive")
    if kind == "detuning_map_cw":
        if dk != "cw":
            raise ConfigInvalid("drive.kind", "detuning_map_cw needs a cw drive")
        if not values["drive.rabi_energy"] > 0:
            raise ConfigInvalid("drive.rabi_energy", "must be positive")
    for key in ("scan.energy", "scan.times", "scan.detuning", "scan.sensor_energy"):
        g = values[key]
        if g is not None and len(g) > 1 and np.any(np.diff(g) <= 0):
            raise ConfigInvalid(key, "grid must be strictly increasing")
    for key in ("scan.tau",):
        g = values[key]
        if g is not None and min(g) <= 0:
            raise ConfigInvalid(key, "pulse durations must be positive")
    for key in ("scan.irf_sigma",):
        g = values[key]
        if g is not None and min(g) < 0:
            raise ConfigInvalid(key, "must be non-negative")
    for key in ("scan.pulse_area", "scan.effective_area_pi", "scan.sqrt_power"):
        g = values[key]
        if g is not None and min(g) < 0:
            raise ConfigInvalid(key, "must be non-negative")
    if not values["numerics.step"] > 0:
        raise ConfigInvalid("numerics.step", "must be positive")
    if not 0 < values["numerics.threshold"] < 1:
        raise ConfigInvalid("numerics.threshold", "must lie in (0, 1)")
    if str(values["numerics.detect"]).upper() not in ("H", "V"):
        raise ConfigInvalid("numerics.detect", "must be H or V")
    if values["numerics.resolution_fwhm"] < 0:
        raise ConfigInvalid("numerics.resolution_fwhm", "must be non-negative")
    if not values["numerics.sensor_linewidth"] > 0:
        raise ConfigInvalid("numerics.sensor_linewidth", "must be positive")
    if values["scan.power_scale"] is not None and values["scan.power_scale"] <= 0:
        raise ConfigInvalid("scan.power_scale", "must be positive")
    spec = ScanSpec(kind, values, base_dir)
    # construction checks of the physical types
    try:
        spec.system()
    except ValueError as exc:
        raise ConfigInvalid("system", str(exc)) from None
    try:
        spec.drive()
    except ValueError as exc:
        raise ConfigInvalid("drive", str(exc)) from None
    return spec


def load_config(path):
    """Read and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# columnar text


def metadata_lines(spec=None, **extra):
    """``# key: value`` header lines: config hash, units, parameter echo."""
    lines = ["# format: qddress columnar text v1"]
    for k, v in extra.items():
        lines.append(f"# {k}: {v}")
    if spec is not None:
        lines.append(f"# config_sha256: {spec.config_hash()}")
        lines.append(f"# scan_kind: {spec.kind}")
        for ln in spec.echo().splitlines():
            if ln:
                lines.append(f"# config: {ln}")
    return lines


def write_columns(path, columns, names, spec=None, **extra):
    """Write named columns with a metadata header; values in ``%.12e``."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    header = metadata_lines(spec, **extra)
    header.append("# columns: " + " ".join(names))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(header) + "\n")
            np.savetxt(fh, data, fmt="%.12e", delimiter=" ")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def read_header(path):
    """Metadata header of a columnar file as a dict (``config`` lines joined)."""
    meta, config = {}, []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition(": ")
                if key == "config":
                    config.append(value)
                else:
                    meta[key] = value
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    if config:
        meta["config"] = "\n".join(config) + "\n"
    return meta


def read_columns(path):
    """Return ``(header dict, data array)`` of a columnar text file."""
    meta = read_header(path)
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot parse {path}: {exc}") from None
    return meta, data


def write_map_text(path, smap, spec=None):
    """Long-format map: one ``axis2 energy intensity`` line per sample."""
    e = smap.energy_grid
    a2 = np.repeat(smap.axis2, e.size)
    ee = np.tile(e, smap.axis2.size)
    extra = {"units": "energy meV (absolute), intensity arb.",
             "axis2": smap.axis2_name, "shape": f"{smap.axis2.size} {e.size}"}
    extra.update({f"meta.{k}": v for k, v in sorted(smap.meta.items())})
    write_columns(path, [a2, ee, smap.intensity.ravel()],
                  [smap.axis2_name, "energy_meV", "intensity"], spec, **extra)


def read_map_text(path):
    meta, data = read_columns(path)
    try:
        n2, ne = (int(x) for x in meta["shape"].split())
    except (KeyError, ValueError):
        raise MalformedGrid(f"{path}: missing or bad shape header") from None
    if data.shape != (n2 * ne, 3):
        raise MalformedGrid(f"{path}: expected {n2 * ne} rows of 3 columns")
    axis2 = data[::ne, 0]
    energy = data[:ne, 1]
    smeta = {k[5:]: v for k, v in meta.items() if k.startswith("meta.")}
    return SpectrumMap(energy, axis2, data[:, 2].reshape(n2, ne), meta.get("axis2", "row"), smeta)


# ---------------------------------------------------------------------------
# binary grid

MAGIC = b"QDGRID1\0"
_HEAD = struct.Struct("<8sIII")


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (bool, str)) or v is None:
        return v
    return str(v)


def write_grid(path, smap, extra_meta=None):
    """Write a :class:`SpectrumMap` in the binary grid format."""
    meta = {"axis2_name": smap.axis2_name, "meta": _jsonable(smap.meta)}
    if extra_meta:
        meta.update(_jsonable(extra_meta))
    blob = json.dumps(meta, sort_keys=True).encode()
    e = np.ascontiguousarray(smap.energy_grid, dtype="<f8")
    a2 = np.ascontiguousarray(smap.axis2, dtype="<f8")
    vals = np.ascontiguousarray(smap.intensity, dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEAD.pack(MAGIC, e.size, a2.size, len(blob)))
            fh.write(e.tobytes())
            fh.write(a2.tobytes())
            fh.write(vals.tobytes())
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def read_grid(path):
    """Read a binary grid file; returns ``(SpectrumMap, metadata dict)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    if len(raw) < _HEAD.size:
        raise MalformedGrid(f"{path}: truncated header")
    magic, ne, n2, nm = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedGrid(f"{path}: bad magic")
    if ne == 0 or n2 == 0:
        raise MalformedGrid(f"{path}: empty axis")
    expect = _HEAD.size + 8 * (ne + n2 + ne * n2) + nm
    if len(raw) != expect:
        raise MalformedGrid(f"{path}: size {len(raw)} does not match header ({expect})")
    off = _HEAD.size
    e = np.frombuffer(raw, "<f8", ne, off)
    off += 8 * ne
    a2 = np.frombuffer(raw, "<f8", n2, off)
    off += 8 * n2
    vals = np.frombuffer(raw, "<f8", ne * n2, off).reshape(n2, ne)
    off += 8 * ne * n2
    try:
        meta = json.loads(raw[off:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedGrid(f"{path}: bad metadata ({exc})") from None
    if not isinstance(meta, dict):
        raise MalformedGrid(f"{path}: metadata must be an object")
    if ne > 1 and np.any(np.diff(e) <= 0):
        raise MalformedGrid(f"{path}: energy axis not increasing")
    smap = SpectrumMap(e.copy(), a2.copy(), vals.copy(), meta.get("axis2_name", "row"),
                       meta.get("meta", {}))
    return smap, meta


def load_map(path):
    """Map from either format, chosen by the file's leading bytes."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(len(MAGIC))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    if head == MAGIC:
        return read_grid(path)
    if head.startswith(b"#"):
        smap = read_map_text(path)
        return smap, {"axis2_name": smap.axis2_name, "meta": smap.meta}
    raise MalformedGrid(f"{path}: neither a binary grid nor a columnar map")


# ---------------------------------------------------------------------------
# histograms and reports


def read_histogram(path):
    """Two-column ``time_ps counts`` text; ``#`` starts a comment."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except OSError as exc:
        raise IoFailure(f"cannot read histogram {path}: {exc}") from None
    except ValueError as exc:
        raise IoFailure(f"cannot parse histogram {path}: {exc}") from None
    if data.shape[1] != 2:
        raise IoFailure(f"{path}: expected two columns (time_ps, counts)")
    return data[:, 0], data[:, 1]


def write_histogram(path, t, counts, **extra):
    write_columns(path, [t, counts], ["time_ps", "counts"], None, **extra)


def write_report(path, text, spec=None, **extra):
    """Key-value report with the usual metadata header."""
    header = metadata_lines(spec, **extra)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(header) + "\n" + text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def parse_report(text):
    """``key = value`` lines into a dict of floats (strings where not numeric)."""
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            continue
        v = v.strip()
        try:
            out[k.strip()] = float(v)
        except ValueError:
            out[k.strip()] = v
    return out

