"""Command line entry point: refinement/iteration studies and matrix export.

    multifem run --case babuska --n 8 --levels 3 --tol 1e-10 --seed 0 --out results/
    multifem export --case ds-mixed --n 4 --what matrices --out matrices/
"""
from __future__ import annotations

import argparse
import os
import sys

from .bench import CaseConfig, export_case, run_case

CASES = ("babuska", "ds-primal", "ds-mixed", "perfusion", "restrict-demo")


def _build_parser():
    parser = argparse.ArgumentParser(prog="multifem")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a refinement study")
    run.add_argument("--case", choices=CASES, required=True)
    run.add_argument("--n", type=int, default=8, help="coarsest resolution")
    run.add_argument("--levels", type=int, default=3)
    run.add_argument("--tol", type=float, default=1e-10)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--hs-mode", choices=("eig", "fd-surrogate"), default="eig")
    run.add_argument("--darcy-pressure-block",
                     choices=("mass", "neg-mass", "stiffness"), default="stiffness")
    run.add_argument("--radius", type=float, default=0.2)
    run.add_argument("--nquad", type=int, default=16)
    run.add_argument("--out", default=".")

    exp = sub.add_parser("export", help="export system and reduction matrices")
    exp.add_argument("--case", choices=CASES, required=True)
    exp.add_argument("--n", type=int, default=4)
    exp.add_argument("--what", choices=("matrices",), default="matrices")
    exp.add_argument("--out", required=True)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "export":
        out = export_case(args.case, args.n, args.out)
        print(f"wrote matrices to {out}")
        return 0

    cfg = CaseConfig(
        case=args.case, n=args.n, levels=args.levels, tol=args.tol,
        seed=args.seed, hs_mode=args.hs_mode,
        darcy_pressure_block=args.darcy_pressure_block,
        radius=args.radius, n_quad=args.nquad, out_dir=args.out,
    )
    record = run_case(cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.case}.csv")
    record.write_csv(path)
    rates = record.rates()
    for row, rate in zip(record.rows, rates):
        rate_str = " ".join(f"{c}={rate[c]:.2f}" for c in record.err_columns)
        print(f"level {row['level']}: h={row['h']:.4g} dofs={row['dofs_total']} "
              f"iters={row['iters']} {rate_str} ({row['seconds']:.2f}s)")
    print(f"wrote {path}")
    if not record.ok:
        print("study failed internal assertions", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
