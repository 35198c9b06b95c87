#!/usr/bin/env python3
"""Generate the toy benchmark, score all detectors, and assemble the table.

Equivalent to running gen-toy / score / eval / report by hand; see README.
"""

import argparse
import sys
from pathlib import Path

from d3ood import cli

DETECTORS = "msp,odin,energy,gradnorm,knn,vim,mls,d3"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/toy", help="output root for this experiment")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, default=256, help="samples per split")
    args = parser.parse_args()

    root = Path(args.out)
    bench = root / "benchmark"
    steps = [
        ["gen-toy", "--out", str(bench), "--seed", str(args.seed), "--n", str(args.n)],
        ["score", "--benchmark", str(bench), "--split", "ind-test",
         "--detectors", DETECTORS, "--out", str(root / "scores-ind")],
        ["score", "--benchmark", str(bench), "--split", "ood-test",
         "--detectors", DETECTORS, "--out", str(root / "scores-ood")],
    ]
    for step in steps:
        code = cli.main(step)
        if code != 0:
            return code

    ind = ",".join(str(p) for p in sorted((root / "scores-ind").glob("scores_*.csv")))
    ood = ",".join(str(p) for p in sorted((root / "scores-ood").glob("scores_*.csv")))
    code = cli.main(["eval", "--ind", ind, "--ood", ood, "--out", str(root / "eval")])
    if code != 0:
        return code
    return cli.main(["report", "--eval", str(root / "eval" / "eval_report.json"),
                     "--out", str(root / "report")])


if __name__ == "__main__":
    sys.exit(main())
