"""Command-line interface: ``ivah fit | predict | simulate | make-iv``.

Exit codes: 0 success, 2 invalid input or arguments, 3 numerical failure.
Every output file ``X`` is accompanied by ``X.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .competing import fit_competing, predict_cif
from .data import COMPETING, SURVIVAL, construct_area_instrument, load_area_panel, load_dataset
from .errors import DataError, NumericalError
from .first_stage import LinkKind, fit_first_stage
from .serialize import dump_fit, load_fit
from .simulation import (
    WORKERS_ENV,
    ScenarioConfig,
    run_replications,
    write_report_csv,
    write_report_json,
)
from .survival import fit_survival, predict_survival

log = logging.getLogger("ivah")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, args, inputs=(), seed=None):
    options = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "options": options,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1, default=str) + "\n")
    return path


def _split(text):
    if text is None:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


def parse_times(spec):
    """``"0,0.1,0.5"`` or ``"start:stop:num"`` (inclusive, like ``numpy.linspace``)."""
    try:
        if ":" in spec:
            start, stop, num = spec.split(":")
            num = int(num)
            if num < 1:
                raise ValueError
            return np.linspace(float(start), float(stop), num)
        return np.array([float(s) for s in spec.split(",") if s.strip()])
    except ValueError:
        raise DataError(f"--times: cannot parse {spec!r}; use 't1,t2,...' or 'start:stop:num'") from None


# -- subcommands -------------------------------------------------------------
def cmd_fit(args):
    if args.mode == COMPETING and not args.cause_col:
        raise DataError("--cause-col is required with --mode competing")
    cmap = {
        "time": args.time_col, "status": args.status_col, "exposure": args.exposure,
        "instrument": args.instrument, "cause": args.cause_col,
        "confounders": _split(args.confounders),
    }
    data = load_dataset(args.data, cmap, mode=args.mode, horizon=args.horizon)
    fs = fit_first_stage(data, LinkKind(args.link))
    if args.mode == COMPETING:
        fit = fit_competing(data, fs, cause_of_interest=args.cause)
    else:
        fit = fit_survival(data, fs)
    dump_fit(fit, args.out)
    write_manifest(args.out, args, inputs=[args.data])
    for name, b, se, p in zip(fit.names, fit.beta, fit.se, fit.pvalues):
        log.info("%-16s % .6g  (se %.4g, p %.4g)", name, b, se, p)
    return EXIT_OK


def _newdata_rows(path, fit):
    exposure = fit.names[0]
    has_fs = fit.first_stage is not None
    conf = list(fit.names[1:-1] if has_fs else fit.names[1:])
    needed = [exposure] + ([fit.first_stage["names"][1]] if has_fs else []) + conf
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"new data lack column(s) {missing} required by the fit")
        rows = []
        for r, rec in enumerate(reader, start=1):
            try:
                vals = {c: float(rec[c]) for c in needed}
            except (TypeError, ValueError):
                raise DataError(f"new data row {r}: non-numeric value") from None
            rows.append((vals[exposure], vals[needed[1]] if has_fs else None, [vals[c] for c in conf]))
    if not rows:
        raise DataError("new data file has no rows")
    return rows


def cmd_predict(args):
    fit = load_fit(args.fit)
    times = parse_times(args.times)
    rows = _newdata_rows(args.newdata, fit)
    predict = predict_cif if fit.mode == COMPETING else predict_survival
    curves = [predict(fit, xe, xi, xo, times=times, level=args.level) for xe, xi, xo in rows]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "time", "estimate", "variance", "lo", "hi"])
        for r, curve in enumerate(curves, start=1):
            for t, est, var, lo, hi in curve.as_rows():
                w.writerow([r, repr(t), repr(est), repr(var), repr(lo), repr(hi)])
    write_manifest(args.out, args, inputs=[args.fit, args.newdata])
    return EXIT_OK


def cmd_simulate(args):
    if args.reps < 1:
        raise DataError("--reps must be at least 1")
    sizes = [int(s) for s in _split(args.n)]
    reports = []
    for n in sizes:
        cfg = ScenarioConfig(args.setting, args.scenario, n, reps=args.reps, seed=args.seed)
        rep = run_replications(cfg, workers=args.workers)
        log.info("n=%d bias=%.4f emp_var=%.4f est_var=%.4f coverage=%.3f failures=%d (%.1fs)",
                 n, rep.bias, rep.emp_var, rep.est_var, rep.coverage, rep.failures, rep.runtime)
        reports.append(rep)
    write_report_csv(reports, args.out)
    write_manifest(args.out, args, seed=args.seed)
    if args.json:
        write_report_json(reports, args.json)
    return EXIT_OK


def cmd_make_iv(args):
    panel = load_area_panel(args.panel)
    iv = construct_area_instrument(panel)
    if not iv:
        log.warning("no region has data for consecutive years; the instrument is empty")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "year", "iv"])
        for (reg, yr), v in iv.items():
            w.writerow([reg, yr, repr(v)])
    write_manifest(args.out, args, inputs=[args.panel])
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ivah", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the two-stage model to a CSV file")
    f.add_argument("--data", required=True)
    f.add_argument("--mode", choices=(SURVIVAL, COMPETING), default=SURVIVAL)
    f.add_argument("--time-col", default="time")
    f.add_argument("--status-col", default="status")
    f.add_argument("--cause-col", default=None, help="cause column (competing mode)")
    f.add_argument("--cause", type=int, default=1, help="cause of interest (default 1)")
    f.add_argument("--exposure", required=True)
    f.add_argument("--instrument", required=True)
    f.add_argument("--confounders", default=None,
                   help="comma-separated columns; default: all unbound columns; '' for none")
    f.add_argument("--link", choices=[k.value for k in LinkKind], default="identity")
    f.add_argument("--horizon", type=float, default=None)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="survival or cumulative incidence curves from a fit")
    r.add_argument("--fit", required=True)
    r.add_argument("--newdata", required=True)
    r.add_argument("--times", required=True, help="'t1,t2,...' or 'start:stop:num'")
    r.add_argument("--level", type=float, default=0.95)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="Monte-Carlo replication table")
    s.add_argument("--setting", choices=(SURVIVAL, COMPETING), required=True)
    s.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    s.add_argument("--n", required=True, help="sample size or comma-separated sizes")
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    s.add_argument("--json", default=None, help="also write the report as JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("make-iv", help="lagged regional instrument from an area panel")
    m.add_argument("--panel", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_iv)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
