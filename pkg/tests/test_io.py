import glob
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qddress.errors import ConfigInvalid, IoFailure, MalformedGrid
from qddress.io import (
    MAGIC,
    load_config,
    load_map,
    parse_config,
    parse_grid,
    parse_report,
    read_columns,
    read_grid,
    read_header,
    read_histogram,
    read_map_text,
    write_columns,
    write_grid,
    write_histogram,
    write_map_text,
    write_report,
)
from qddress.spectra import SpectrumMap

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")

BASE = """
[drive]
kind = gaussian_pulse
tau_intensity_fwhm = 14

[scan]
kind = power_map
energy = 1350:1353:11
pulse_area = 1, 2, 3.5
"""


def test_parse_grid_forms():
    assert parse_grid("1, 2.5, 4") == (1.0, 2.5, 4.0)
    assert parse_grid("0:1:5") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert parse_grid("3") == (3.0,)
    for bad in ("", "1:2", "a, b", "0:1:0", "1, nan"):
        with pytest.raises(ConfigInvalid):
            parse_grid(bad)


def test_shipped_configs_validate():
    paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.ini")))
    assert len(paths) >= 7
    kinds = {load_config(p).kind for p in paths}
    assert {"power_map", "rabi_curves", "sensor_traces", "lifetime_fit"} <= kinds


@pytest.mark.parametrize("patch, key", [
    ("[scan]\nbogus = 1", "scan.bogus"),
    ("[extra]\nx = 1", "extra"),
    ("[numerics]\nstep = -0.1", "numerics.step"),
    ("[numerics]\nthreshold = 1.5", "numerics.threshold"),
    ("[numerics]\ndetect = D", "numerics.detect"),
    ("[system]\nbinding_energy = abc", "system.binding_energy"),
    ("[system]\nbinding_energy = inf", "system.binding_energy"),
    ("[scan]\npower_scale = 0", "scan.power_scale"),
])
def test_invalid_keys_are_named(patch, key):
    section, line = patch.split("\n")
    text = BASE.replace(f"{section}\n", f"{section}\n{line}\n") if section in BASE else BASE + patch
    with pytest.raises(ConfigInvalid) as err:
        parse_config(text)
    assert err.value.key == key


def test_scan_requirements():
    with pytest.raises(ConfigInvalid) as err:
        parse_config(BASE.replace("kind = power_map", "kind = warp"))
    assert err.value.key == "scan.kind"
    with pytest.raises(ConfigInvalid) as err:
        parse_config(BASE.replace("energy = 1350:1353:11\n", ""))
    assert err.value.key == "scan.energy"
    with pytest.raises(ConfigInvalid) as err:
        parse_config(BASE.replace("1350:1353:11", "1353, 1350"))
    assert err.value.key == "scan.energy"
    with pytest.raises(ConfigInvalid) as err:
        parse_config(BASE.replace("gaussian_pulse", "cw"))
    assert err.value.key == "drive.kind"


def test_missing_config_file(tmp_path):
    with pytest.raises(IoFailure):
        load_config(tmp_path / "nope.ini")


@settings(max_examples=40, deadline=None)
@given(tau=st.floats(0.5, 50.0), det=st.floats(-1.0, 1.0), fss=st.floats(-0.1, 0.1),
       n=st.integers(3, 400), step=st.floats(0.001, 1.0), plot=st.booleans())
def test_echo_round_trip(tau, det, fss, n, step, plot):
    text = (f"[system]\nfss = {fss!r}\n[drive]\ntau_intensity_fwhm = {tau!r}\nlaser_detuning = {det!r}\n"
            f"[scan]\nkind = power_map\nenergy = 1350:1353:{n}\npulse_area = 1, 2\nplot = {plot}\n"
            f"[numerics]\nstep = {step!r}\n")
    a = parse_config(text)
    b = parse_config(a.echo())
    assert a == b
    assert a.config_hash() == b.config_hash()
    assert f"energy = 1350.0:1353.0:{n}" in a.echo()


def test_two_point_grid_echoes_as_list():
    assert "energy = 1350.0, 1353.0" in parse_config(BASE.replace(":11", ":2")).echo()


def test_hash_tracks_values():
    a = parse_config(BASE)
    assert parse_config(BASE + "\n[numerics]\nstep = 0.1\n").config_hash() == a.config_hash()
    assert parse_config(BASE + "\n[numerics]\nstep = 0.05\n").config_hash() != a.config_hash()


def _map(n2=3, ne=7, name="sqrtP"):
    rng = np.random.default_rng(3)
    return SpectrumMap(np.linspace(1350, 1353, ne), np.arange(n2) * 0.5, rng.random((n2, ne)),
                       name, {"tau": 14.0, "label": "x"})


def test_binary_grid_round_trip(tmp_path):
    smap = _map()
    path = tmp_path / "m.qdg"
    write_grid(path, smap, {"config_sha256": "abc"})
    back, meta = read_grid(path)
    assert np.array_equal(back.intensity, smap.intensity)
    assert np.array_equal(back.energy_grid, smap.energy_grid)
    assert np.array_equal(back.axis2, smap.axis2)
    assert back.axis2_name == "sqrtP" and back.meta == smap.meta
    assert meta["config_sha256"] == "abc"
    # layout check by hand
    raw = path.read_bytes()
    magic, ne, n2, nm = struct.unpack_from("<8sIII", raw)
    assert (magic, ne, n2) == (MAGIC, 7, 3)
    first = struct.unpack_from("<d", raw, 20 + 8 * (ne + n2))[0]
    assert first == smap.intensity[0, 0]


def _write_raw(path, ne, n2, body, meta=b"{}"):
    path.write_bytes(struct.pack("<8sIII", MAGIC, ne, n2, len(meta)) + body + meta)


def test_malformed_grids(tmp_path):
    p = tmp_path / "bad.qdg"
    p.write_bytes(b"QDG")
    with pytest.raises(MalformedGrid):
        read_grid(p)
    p.write_bytes(b"NOTAGRID" + bytes(12))
    with pytest.raises(MalformedGrid):
        read_grid(p)
    _write_raw(p, 2, 1, np.zeros(3).tobytes())
    with pytest.raises(MalformedGrid):
        read_grid(p)
    _write_raw(p, 2, 1, np.array([0.0, 1.0, 0.0, 1.0, 2.0]).tobytes(), b"{not json")
    with pytest.raises(MalformedGrid):
        read_grid(p)
    _write_raw(p, 2, 1, np.array([1.0, 0.0, 0.0, 1.0, 2.0]).tobytes())
    with pytest.raises(MalformedGrid):
        read_grid(p)
    _write_raw(p, 2, 1, np.array([0.0, 1.0, 0.0, 1.0, 2.0]).tobytes())
    smap, _ = read_grid(p)
    assert smap.intensity.tolist() == [[1.0, 2.0]]


def test_text_map_round_trip_and_detection(tmp_path):
    smap = _map()
    spec = parse_config(BASE)
    path = tmp_path / "m.txt"
    write_map_text(path, smap, spec)
    back = read_map_text(path)
    assert np.allclose(back.intensity, smap.intensity, rtol=1e-12)
    assert np.allclose(back.axis2, smap.axis2)
    assert back.axis2_name == "sqrtP"
    meta = read_header(path)
    assert meta["config_sha256"] == spec.config_hash()
    assert parse_config(meta["config"]) == spec
    loaded, _ = load_map(path)
    assert np.allclose(loaded.intensity, smap.intensity, rtol=1e-12)
    write_grid(tmp_path / "m.qdg", smap)
    assert load_map(tmp_path / "m.qdg")[0].axis2_name == "sqrtP"
    (tmp_path / "junk").write_bytes(b"\x00\x01")
    with pytest.raises(MalformedGrid):
        load_map(tmp_path / "junk")


def test_columns_and_histograms(tmp_path):
    t = np.arange(0.0, 10.0)
    write_columns(tmp_path / "c.txt", [t, t**2], ["t", "t2"], units="ps")
    meta, data = read_columns(tmp_path / "c.txt")
    assert meta["columns"] == "t t2" and meta["units"] == "ps"
    assert np.array_equal(data[:, 1], t**2)
    write_histogram(tmp_path / "h.txt", t, 3 * t)
    tt, cc = read_histogram(tmp_path / "h.txt")
    assert np.array_equal(cc, 3 * t)
    (tmp_path / "three.txt").write_text("1 2 3\n4 5 6\n")
    with pytest.raises(IoFailure):
        read_histogram(tmp_path / "three.txt")
    (tmp_path / "text.txt").write_text("a b\n")
    with pytest.raises(IoFailure):
        read_histogram(tmp_path / "text.txt")
    with pytest.raises(IoFailure):
        read_histogram(tmp_path / "missing.txt")


def test_report_round_trip(tmp_path):
    write_report(tmp_path / "r.txt", "tau_xx = 157.1\nnote = ok\n", parse_config(BASE))
    rep = parse_report((tmp_path / "r.txt").read_text())
    assert rep == {"tau_xx": 157.1, "note": "ok"}
