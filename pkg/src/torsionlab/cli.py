"""Command line entry point: ``torsionlab run | verify | converge``.

Exit codes: 0 all mandatory verdicts satisfied, 1 violations at the finest
level, 2 configuration or solver error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace

from .harness import (
    QUANTITIES,
    ConfigError,
    DomainSpec,
    convergence_study,
    default_config,
    emit_report,
    exit_code,
    load_config,
    run_suite,
)

log = logging.getLogger("torsionlab")

# short names accepted on the command line
ALIASES = {
    "disk": DomainSpec("disk_polygon", (1.0, 256)),
    "square": DomainSpec("unit_square"),
    "unit_square": DomainSpec("unit_square"),
    "rectangle": DomainSpec("rectangle", (2.0, 1.0)),
    "annulus": DomainSpec("annulus_polygon", (0.5, 1.0, 256)),
    "l_shape": DomainSpec("l_shape"),
}


def _domain(kind: str, params) -> DomainSpec:
    if params:
        return DomainSpec(kind, tuple(params))
    if kind in ALIASES:
        return ALIASES[kind]
    return DomainSpec(kind)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torsionlab", description="Numerical checks of torsion-function bounds.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the suite described by a YAML config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--formats", default="json,csv,svg")

    ver = sub.add_parser("verify", help="run the suite for a single domain, b and p")
    ver.add_argument("--domain", required=True, help="disk, square, rectangle, annulus, l_shape or a canonical kind")
    ver.add_argument("--params", type=float, nargs="*", default=None)
    ver.add_argument("--b", type=float, required=True)
    ver.add_argument("--p", type=float, default=2.0)
    ver.add_argument("--levels", type=int, default=3)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out")
    ver.add_argument("--formats", default="json,csv,svg")

    con = sub.add_parser("converge", help="Dirichlet convergence table over refinement levels")
    con.add_argument("--domain", default="disk")
    con.add_argument("--params", type=float, nargs="*", default=None)
    con.add_argument("--quantity", choices=QUANTITIES, default="lambda1")
    con.add_argument("--levels", type=int, default=4)
    con.add_argument("--mesh-size", type=float, default=0.1)
    con.add_argument("--out")
    return ap


def _finish(report, formats: str, out) -> int:
    paths = emit_report(report, [f for f in formats.split(",") if f], out)
    s = report.summary
    print(f"verdicts: {s['verdicts']}  satisfied: {s['satisfied']}  failures: {s['failures']}  "
          f"warnings: {s['warnings']}  case errors: {s['case_errors']}")
    for p in paths:
        print(f"wrote {p}")
    return exit_code(report)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.workers is not None:
                cfg = replace(cfg, workers=args.workers)
            out = args.out or cfg.output_dir
            return _finish(run_suite(cfg), args.formats, out)
        if args.command == "verify":
            cfg = default_config(corpus=(_domain(args.domain, args.params),), b_values=(args.b,),
                                 p_values=(args.p,), refinement_levels=args.levels, seed=args.seed)
            return _finish(run_suite(cfg), args.formats, args.out or cfg.output_dir)
        if args.command == "converge":
            cfg = default_config(corpus=(_domain(args.domain, args.params),), refinement_levels=args.levels,
                                 mesh_size=args.mesh_size)
            table = convergence_study(cfg, args.quantity)
            print(f"{table.domain}  {table.quantity}")
            print(f"{'level':>5} {'nodes':>8} {'h_max':>10} {'value':>18} {'error':>12} {'order':>7}")
            for i, lev in enumerate(table.levels):
                err = table.errors[i] if table.errors else math.nan
                order = table.difference_orders[i - 2] if i >= 2 else math.nan
                print(f"{lev:>5} {table.n_nodes[i]:>8} {table.h_max[i]:>10.4g} {table.values[i]:>18.12g} "
                      f"{err:>12.3e} {order:>7.3f}")
            print(f"estimated order (successive differences): {table.estimated_order:.3f}")
            if table.monotone is not None:
                print(f"monotone under refinement: {table.monotone}")
            if args.out:
                from pathlib import Path

                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / f"convergence_{table.quantity}.json").write_text(json.dumps(table.to_dict(), indent=1))
            return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failures outside a case
        log.debug("solver failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
