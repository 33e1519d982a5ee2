"""Write filter-response CSVs for a trained checkpoint and print where they went.

    python scripts/export_filters.py runs/synthetic/rgcnn/checkpoint.json figs/

Full-matrix models give one ``filter_<k>.csv`` grid per output channel
(columns ``lambda_r, lambda_c, response``); factorized models give
``row_filters.csv`` and ``col_filters.csv`` with one column per channel.
"""

import argparse
import sys
from pathlib import Path

from mgmc import cli


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("out", type=Path)
    ap.add_argument("--n-filters", type=int, default=8)
    ap.add_argument("--grid", type=int, default=101)
    args = ap.parse_args(argv)
    code = cli.run(["export-filters", "--checkpoint", str(args.checkpoint), "--out", str(args.out),
                    "--n-filters", str(args.n_filters), "--grid", str(args.grid)])
    if code == 0:
        for p in sorted(args.out.glob("*.csv")):
            print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())
