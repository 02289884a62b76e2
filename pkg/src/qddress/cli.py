"""Command line interface: ``qddress {run,render,fit,validate}``.

Exit status is 0 on success, 2 for invalid configuration, 3 for file
problems and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import io
from .errors import ConfigInvalid, IoFailure, MalformedGrid, QDDressError
from .scans import WORKERS_ENV, run_scan, worker_count

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _cmd_run(args):
    spec = io.load_config(args.config)
    if args.output is not None or args.no_plot:
        values = dict(spec.values)
        if args.output is not None:
            values["scan.output"] = os.path.abspath(args.output)
        if args.no_plot:
            values["scan.plot"] = False
        spec = io.ScanSpec(spec.kind, values, spec.base_dir)
    for path in run_scan(spec, worker_count(args.workers)):
        print(path)
    return EXIT_OK


def _cmd_validate(args):
    spec = io.load_config(args.config)
    if args.echo:
        sys.stdout.write(spec.echo())
    print(f"ok: {spec.kind} config_sha256={spec.config_hash()}")
    return EXIT_OK


def _cmd_render(args):
    from .plotting import render_map

    smap, meta = io.load_map(args.map)
    out = args.output or os.path.splitext(args.map)[0] + ".svg"
    markers = meta.get("markers") if not args.no_markers else None
    render_map(smap, out, floor=args.floor, markers=markers)
    print(out)
    return EXIT_OK


def _cmd_fit(args):
    from .analysis import fit_lifetimes, lifetime_model_x, lifetime_model_xx

    t_xx, c_xx = io.read_histogram(args.hist_xx)
    t_x, c_x = io.read_histogram(args.hist_x)
    fit = fit_lifetimes(t_xx, c_xx, t_x, c_x, chi2_cap=args.chi2_cap)
    text = fit.report()
    if args.output:
        io.write_report(args.output, text, None, hist_xx=args.hist_xx, hist_x=args.hist_x,
                        units="ps; amplitudes in counts")
    sys.stdout.write(text)
    if args.plot:
        from .plotting import render_histograms

        render_histograms(t_xx, c_xx, lifetime_model_xx(t_xx, fit.amplitude, fit.tau_xx, fit.sigma_irf, fit.t0),
                          t_x, c_x, lifetime_model_x(t_x, fit.amplitude_x, fit.tau_xx, fit.tau_x,
                                                     fit.sigma_irf, fit.t0),
                          args.plot)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="qddress",
        description="Dynamically dressed biexciton cascade: scans, spectra and lifetime fits.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the scan described by a config file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    r.add_argument("config", help="config file (INI-style sections system/drive/scan/numerics)")
    r.add_argument("--workers", type=int, default=None,
                   help=f"worker processes over scan points; default ${WORKERS_ENV} or 1")
    r.add_argument("--output", default=None, help="override scan.output directory")
    r.add_argument("--no-plot", action="store_true", help="skip SVG rendering")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a config file without computing",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    v.add_argument("config")
    v.add_argument("--echo", action="store_true", help="print the canonical config")
    v.set_defaults(func=_cmd_validate)

    m = sub.add_parser("render", help="render a map file (.qdg or columnar text) to SVG",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    m.add_argument("map")
    m.add_argument("-o", "--output", default=None, help="SVG path; default: map path with .svg")
    m.add_argument("--floor", type=float, default=1e-6,
                   help="log-scale offset relative to the map maximum")
    m.add_argument("--no-markers", action="store_true", help="omit stored time markers")
    m.set_defaults(func=_cmd_render)

    f = sub.add_parser("fit", help="joint lifetime fit of XX and X histograms",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    f.add_argument("hist_xx", help="two-column text: time_ps counts")
    f.add_argument("hist_x", help="two-column text: time_ps counts")
    f.add_argument("-o", "--output", default=None, help="write the key-value report here")
    f.add_argument("--plot", default=None, help="SVG path for data and fitted models")
    f.add_argument("--chi2-cap", type=float, default=100.0, help="reject fits above this chi2/dof")
    f.set_defaults(func=_cmd_fit)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoFailure, MalformedGrid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QDDressError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
