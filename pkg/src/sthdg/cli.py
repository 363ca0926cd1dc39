"""Command-line entry point: ``sthdg solve --case manufactured --k 2 ...``."""

import argparse
import logging
import os
import sys
from dataclasses import asdict

from .diagnostics import (
    CASES, CaseConfig, certificates, convergence_study, rate_table, rates_csv, run_case, write_json,
)
from .errors import SthdgError


def build_parser():
    parser = argparse.ArgumentParser(prog="sthdg", description="Space-time HDG solver for incompressible flow "
                                     "on moving 2D domains.")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="march a case and write report.json / rates.csv")
    s.add_argument("--case", choices=CASES, default="manufactured")
    s.add_argument("--k", type=int, default=2, help="polynomial degree (1..4)")
    s.add_argument("--nx", type=int, default=8, help="cells per side of the unit-square mesh")
    s.add_argument("--slabs", type=int, default=20, help="number of time slabs")
    s.add_argument("--dt", type=float, default=0.05, help="slab length")
    s.add_argument("--nu", type=float, default=1e-4, help="kinematic viscosity")
    s.add_argument("--tol", type=float, default=1e-12, help="Picard tolerance")
    s.add_argument("--alpha-factor", type=float, default=6.0, help="penalty alpha = factor * k^2")
    s.add_argument("--levels", type=int, default=1, help="refinement levels (>= 2 for a rate table)")
    s.add_argument("--out", default="sthdg-out", help="output directory")
    s.add_argument("--mesh", default=None, help="spatial triangulation file (external-mesh case)")
    s.add_argument("--ale", action="store_true", help="evaluate the convective form with the grid velocity")
    s.add_argument("--vtk", action="store_true", help="write slab_####.vtk field files")
    s.add_argument("-v", "--verbose", action="store_true")
    return parser


def solve(args):
    config = CaseConfig(case=args.case, nx=args.nx, slabs=args.slabs, dt=args.dt, k=args.k, nu=args.nu,
                        alpha_factor=args.alpha_factor, tol=args.tol, ale=args.ale, mesh=args.mesh,
                        out=args.out, vtk=args.vtk)
    os.makedirs(args.out, exist_ok=True)
    if args.levels >= 2:
        rows, reports = convergence_study(config, args.levels)
    else:
        report, _ = run_case(config, export_dir=args.out if args.vtk else None)
        reports = [report]
        rows = rate_table(reports)
    with open(os.path.join(args.out, "rates.csv"), "w") as fh:
        fh.write(rates_csv(rows))
    write_json({
        "config": asdict(config),
        "levels": [r.to_dict() for r in reports],
        "certificates": [certificates(r) for r in reports],
        "rates": rows,
    }, os.path.join(args.out, "report.json"))
    for row in rows:
        parts = [f"level {row['level']}: nx={row['nx']} slabs={row['slabs']}"]
        for key in ("u_T", "p_T", "u_E", "p_E"):
            if row["err_" + key] is not None:
                rate = row["rate_" + key]
                parts.append(f"err_{key}={row['err_' + key]:.3e}" + (f" ({rate:.2f})" if rate is not None else ""))
        parts.append(f"div_max={row['div_max']:.2e}")
        print("  ".join(parts))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return solve(args)
    except (SthdgError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
