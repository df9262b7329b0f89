"""Command line interface: impute a CSV file, run the replication study,
or dump the bundled study population."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .dataset import DataError, Dataset, load_csv, load_mu284, write_csv
from .imputers import ImputerConfig, METHODS, impute
from .psi import AllInfeasible, Infeasible, balance_residual
from .raking import CalibrationError
from .simulation import (StudyConfig, StudyError, report_diagnostics,
                         report_to_csv, report_to_markdown, run_study)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bknni", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    imp = sub.add_parser("impute", help="impute a CSV dataset")
    imp.add_argument("--input", required=True)
    imp.add_argument("--aux-cols", required=True,
                     help="comma-separated auxiliary column names")
    imp.add_argument("--y-col", required=True)
    imp.add_argument("--id-col", default=None)
    imp.add_argument("--weight-col", default=None)
    imp.add_argument("--method", choices=METHODS, default="bknni")
    imp.add_argument("--k", type=int, default=20)
    imp.add_argument("--k-auto", action="store_true",
                     help="grow k from the feasibility bound until balancing succeeds")
    imp.add_argument("--tol", type=float, default=1e-6)
    imp.add_argument("--seed", type=int, default=0)
    imp.add_argument("--edit-rules", default=None,
                     help="CSV of forbidden donor_id,recipient_id pairs")
    imp.add_argument("--output", required=True)
    imp.add_argument("--diagnostics", default=None,
                     help="path for a JSON diagnostics sidecar")

    sim = sub.add_parser("simulate", help="run the Monte Carlo replication study")
    sim.add_argument("--case", type=int, choices=(1, 2), default=1)
    sim.add_argument("--mr", type=int, default=100)
    sim.add_argument("--mi", type=int, default=100)
    sim.add_argument("--rate", type=float, default=0.7)
    sim.add_argument("--k", type=int, default=20)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", required=True)
    sim.add_argument("--format", choices=("csv", "md"), default="csv")
    sim.add_argument("--diagnostics", default=None)

    dump = sub.add_parser("mu284", help="dump the bundled study population")
    dump.add_argument("--case", type=int, choices=(1, 2), default=1)
    dump.add_argument("--output", default="-")
    return parser


def _read_edit_rules(path) -> tuple:
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("donor_id", "donor"):
                continue
            pairs.append((int(row[0]), int(row[1])))
    return tuple(pairs)


def _cmd_impute(args) -> int:
    ds = load_csv(args.input, aux_cols=args.aux_cols.split(","),
                  y_col=args.y_col, id_col=args.id_col,
                  weight_col=args.weight_col)
    forbidden = _read_edit_rules(args.edit_rules) if args.edit_rules else ()
    aux_names = args.aux_cols.split(",")
    if ds.q == len(aux_names) + 1:
        aux_names = ["const", *aux_names]
    if ds.n_m == 0:
        print("warning: no missing values, output equals input", file=sys.stderr)
        write_csv(ds, args.output, aux_names=aux_names)
        return EXIT_OK
    cfg = ImputerConfig(method=args.method, k=args.k, k_auto=args.k_auto,
                        tol=args.tol, forbidden=forbidden, seed=args.seed,
                        fallback_to_knni=False)
    rng = np.random.default_rng(args.seed)
    imputed = impute(ds, cfg, rng)
    out = ds.with_response(np.ones(ds.n, dtype=np.int8), imputed.full_y())
    write_csv(out, args.output, aux_names=aux_names)
    if args.diagnostics:
        diag = {
            "method": args.method,
            "k": args.k,
            "seed": args.seed,
            "fallback": imputed.fallback,
            "n": ds.n,
            "n_respondents": ds.n_r,
            "n_imputed": ds.n_m,
        }
        with open(args.diagnostics, "w", encoding="utf-8") as fh:
            json.dump(diag, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = StudyConfig(case=args.case, m_r=args.mr, m_i=args.mi,
                      mean_response_rate=args.rate, k=args.k, seed=args.seed)
    report = run_study(cfg)
    text = report_to_csv(report) if args.format == "csv" else report_to_markdown(report)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(text)
    if args.diagnostics:
        with open(args.diagnostics, "w", encoding="utf-8") as fh:
            fh.write(report_diagnostics(report))
    return EXIT_OK


def _cmd_mu284(args) -> int:
    ds = load_mu284(args.case)
    names = ["P85", "P75", "CS82"] if args.case == 1 else ["CS82"]
    if args.output == "-":
        import io
        buf = io.StringIO()
        _write_named(ds, buf, names)
        sys.stdout.write(buf.getvalue())
    else:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            _write_named(ds, fh, names)
    return EXIT_OK


def _write_named(ds: Dataset, fh, names) -> None:
    writer = csv.writer(fh)
    writer.writerow(["LABEL", *names, "RMT85"])
    for i in range(ds.n):
        writer.writerow([int(ds.unit_ids[i]),
                         *[_fmt(v) for v in ds.aux[i, 1:]],
                         _fmt(ds.y[i])])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "impute":
            return _cmd_impute(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_mu284(args)
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Infeasible, AllInfeasible, CalibrationError, StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
