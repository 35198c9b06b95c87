#!/usr/bin/env python3
"""Sweep the ensemble weight, step count, removal target and guidance.

Produces sweep_report.{csv,json} plus lambda_sweep.csv / t_sweep.csv plot
data under the output root. Expects a benchmark directory from gen-toy
(run scripts/run_toy_benchmark.py first, or pass --benchmark).
"""

import argparse
import sys
from pathlib import Path

from d3ood import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--benchmark", default="runs/toy/benchmark")
    parser.add_argument("--out", default="runs/ablations")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, default=256)
    args = parser.parse_args()

    root = Path(args.out)
    sweeps = {
        "lambda": ["--lambda-grid", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"],
        "t-steps": ["--lambda-grid", "0.5", "--t-grid", "2,4,8,16,24"],
        "removal": ["--lambda-grid", "0.5",
                    "--removal-targets", "generation,input,both,none",
                    "--rectify-modes", "react,vra,none"],
        "guidance": ["--lambda-grid", "0.5", "--guidances", "conditional,none"],
    }
    for name, extra in sweeps.items():
        code = cli.main(
            ["ablate", "--benchmark", args.benchmark, "--seed", str(args.seed),
             "--n", str(args.n), "--out", str(root / name)] + extra
        )
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
