#!/usr/bin/env python3
"""Run the full pipeline (hypothesis check, conjugacy residuals, Jacobian
validation) on a built-in system and drop report.json plus CSV tables into
an output directory.

    python3 scripts/run_full_report.py --system ex1 --out out/ex1
    python3 scripts/run_full_report.py --system ex2 --theta-ratio 2 --rotation-angle 0.4 --out out/ex2
"""

import argparse
import json
import sys
from pathlib import Path

from nonautolin.cli import main as cli_main


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--system", default="ex1")
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--gamma-scale", type=float, default=0.5)
    parser.add_argument("--theta-ratio", type=float, default=None)
    parser.add_argument("--rotation-angle", type=float, default=None)
    parser.add_argument("--n-min", type=int, default=-5)
    parser.add_argument("--n-max", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/report")
    args = parser.parse_args(argv)

    cli_args = [
        "report",
        "--system", args.system,
        "--gamma-scale", str(args.gamma_scale),
        "--n-min", str(args.n_min),
        "--n-max", str(args.n_max),
        "--seed", str(args.seed),
        "--out", args.out,
    ]
    if args.lam is not None:
        cli_args += ["--lambda", str(args.lam)]
    if args.theta_ratio is not None:
        cli_args += ["--theta-ratio", str(args.theta_ratio)]
    if args.rotation_angle is not None:
        cli_args += ["--rotation-angle", str(args.rotation_angle)]

    rc = cli_main(cli_args)
    report = json.loads((Path(args.out) / "report.json").read_text())
    print(f"verdict: {report['verdict']}")
    if report["inverse"]:
        print(f"max inverse residual:      {report['inverse']['max_residual']:.3e}")
    if report["equivariance"]:
        print(f"max equivariance residual: {report['equivariance']['max_residual']:.3e}")
    if report["jacobians"] and report["jacobians"]["max_rel_error"] is not None:
        print(f"max jacobian rel error:    {report['jacobians']['max_rel_error']:.3e}")
    print(f"timing: { {k: round(v, 2) for k, v in report['timing'].items()} }")
    print(f"artifacts in {args.out}/")
    return rc


if __name__ == "__main__":
    sys.exit(run())
