"""Import ml-100k, train the factorized model and compare it with two baselines.

    python scripts/run_movielens.py --root path/to/ml-100k --out runs/movielens

Uses the predefined ``u1`` split. The movie-mean and SVT scores are printed
next to the model's test RMSE.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from mgmc import cli
from mgmc.baselines import svt_complete
from mgmc.data import read_dataset
from mgmc.train import rmse


def movie_mean_rmse(ds) -> float:
    Y, mask = ds.values, ds.train_mask
    counts = mask.sum(axis=1, keepdims=True)
    means = np.where(counts > 0, (Y * mask).sum(axis=1, keepdims=True) / np.maximum(counts, 1), Y[mask].mean())
    return rmse(np.broadcast_to(means, Y.shape), Y, ds.test_mask)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--root", type=Path, required=True, help="ml-100k directory")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--split", default="u1")
    ap.add_argument("--tau", type=float, default=10.0, help="SVT threshold")
    args = ap.parse_args(argv)
    data = args.out / "data"
    code = cli.run(["import-movielens", "--root", str(args.root), "--out", str(data), "--split", args.split])
    if code:
        return code
    code = cli.run(["train", "--model", "srgcnn", "--data", str(data), "--out", str(args.out / "srgcnn"),
                    "--iters", str(args.iters), "--rank", "10", "-v"])
    if code:
        return code
    ds = read_dataset(data)
    print(f"movie mean: {movie_mean_rmse(ds):.4f}")
    print(f"svt (tau {args.tau:g}): {rmse(svt_complete(ds.values, ds.train_mask, args.tau, iters=300), ds.values, ds.test_mask):.4f}")
    return cli.run(["evaluate", "--checkpoint", str(args.out / "srgcnn" / "checkpoint.json"), "--data", str(data)])


if __name__ == "__main__":
    sys.exit(main())
