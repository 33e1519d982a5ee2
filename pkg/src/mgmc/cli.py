"""Command-line interface: ``mgmc <command> [options]``.

Commands
    gen-synthetic     write a synthetic dataset directory
    import-movielens  convert an ml-100k directory into a dataset directory
    train             train rgcnn or srgcnn; writes checkpoint and history CSV
    evaluate          print the RMSE of a checkpoint on a dataset
    baseline          run svt, gmc or grals and report RMSE
    export-filters    write learned filter responses as CSV
    compare           one table row per method: parameters, complexity, RMSE

Options that tune a run can also come from ``--config FILE.json``; explicit
flags win over the file, and the file wins over built-in defaults. A
``manifest.json`` written by an earlier run is accepted as a config file, so
``--config out/manifest.json`` repeats that run. Exit status is 0 on success,
2 on a usage error and 1 on a runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("mgmc")

MANIFEST_FORMAT = "mgmc-run-manifest"
DATA_ENV = "MGMC_DATA_DIR"


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    format: str = MANIFEST_FORMAT
    version: str = __version__

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def git_blob_sha1(path: Path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def hash_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = git_blob_sha1(f)
    return out


# ----------------------------------------------------------- option tables
# (name, type, default, help). Every option here may also come from --config.

_SEED = ("seed", int, 0, "seed for every random choice in the run")
_MODEL_OPTS = [
    ("lr", float, 1e-3, "Adam learning rate"),
    ("mu", float, 1.0, "weight of the data term"),
    ("T", int, 10, "diffusion steps"),
    ("p", int, 5, "Chebyshev degree"),
    ("q", int, 32, "graph-convolution output channels"),
    ("hidden", int, 32, "LSTM width"),
    ("rank", int, 15, "factor rank (srgcnn)"),
    ("n_layers", int, 1, "graph-convolution layers"),
    ("iters", int, 5000, "training iterations"),
    ("eval_every", int, 10, "evaluation cadence in iterations"),
    ("patience", int, 200, "stop after this many iterations without test improvement"),
]
OPTIONS = {
    "gen-synthetic": [
        _SEED,
        ("m", int, 150, "rows (items)"),
        ("n", int, 200, "columns (users)"),
        ("row_communities", int, 5, "item communities"),
        ("col_communities", int, 5, "user communities"),
        ("rank", int, 5, "latent rank"),
        ("noise", float, 0.0, "Gaussian noise level"),
        ("train_fraction", float, 0.15, "share of entries in the train mask"),
        ("test_fraction", float, 0.15, "share of entries in the test mask"),
        ("compress", bool, False, "gzip the TSV files"),
    ],
    "import-movielens": [
        _SEED,
        ("split", str, None, "use the predefined split, e.g. u1"),
        ("k", int, 10, "nearest neighbours in the feature graphs"),
        ("test_fraction", float, 0.2, "test share when no split is given"),
        ("max_size", int, 3000, "keep at most this many rows and columns"),
        ("compress", bool, False, "gzip the TSV files"),
    ],
    "train": [_SEED, ("model", str, "rgcnn", "rgcnn or srgcnn"), *_MODEL_OPTS,
              ("free_rows", bool, False, "srgcnn: learn the row factor directly, no row graph")],
    "evaluate": [_SEED, ("split", str, "test", "mask to evaluate on: train or test")],
    "baseline": [
        _SEED,
        ("method", str, "gmc", "svt, gmc or grals"),
        ("mu", float, 1.0, "data-term weight (gmc, grals)"),
        ("tau", float, 1.0, "nuclear-norm threshold (svt)"),
        ("rank", int, 15, "factor rank (grals)"),
        ("iters", int, 2000, "iterations or sweeps"),
        ("lr", float, None, "gmc step size; default 1/L"),
        ("free_rows", bool, False, "grals: ridge penalty instead of the row graph"),
    ],
    "export-filters": [
        _SEED,
        ("n_filters", int, 8, "number of output channels to export"),
        ("grid", int, 101, "grid points on [-1, 1]"),
    ],
    "compare": [
        _SEED, *_MODEL_OPTS,
        ("gmc_mu", float, 100.0, "data-term weight for gmc"),
        ("grals_mu", float, 10.0, "data-term weight for grals"),
        ("srgcnn_rank", int, 15, "rank of the srgcnn factors"),
        ("srgcnn_lr", float, None, "srgcnn learning rate; default lr"),
        ("srgcnn_iters", int, None, "srgcnn iterations; default iters"),
    ],
}
PATH_ARGS = {
    "gen-synthetic": [("out", "output dataset directory")],
    "import-movielens": [("root", "ml-100k directory"), ("out", "output dataset directory")],
    "train": [("data", "dataset directory"), ("out", "output directory")],
    "evaluate": [("checkpoint", "checkpoint JSON"), ("data", "dataset directory")],
    "baseline": [("data", "dataset directory"), ("out", "output directory")],
    "export-filters": [("checkpoint", "checkpoint JSON"), ("out", "output directory")],
    "compare": [("data", "dataset directory"), ("out", "output CSV file")],
}
REQUIRED_PATHS = {"import-movielens": {"root"}, "evaluate": {"checkpoint"}, "export-filters": {"checkpoint"}}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgmc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"mgmc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=__doc__.split(cmd, 1)[1].split("\n")[0].strip())
        sp.add_argument("--config", type=Path, help="JSON config or a previous run's manifest")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
        sp.add_argument("--no-wall-time", action="store_true", help="write 0 in wall-time fields")
        sp.add_argument("-v", "--verbose", action="store_true")
        for name, help_ in PATH_ARGS[cmd]:
            sp.add_argument(_flag(name), dest=name, type=Path, default=None, help=help_)
        for name, typ, default, help_ in opts:
            if typ is bool:
                sp.add_argument(_flag(name), dest=name, action="store_const", const=True, default=None, help=help_)
            else:
                sp.add_argument(_flag(name), dest=name, type=typ, default=None,
                                help=f"{help_} (default {default})")
    return parser


def resolve_config(cmd: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags, in that order."""
    cfg = {name: default for name, _, default, _ in OPTIONS[cmd]}
    cfg.update({name: None for name, _ in PATH_ARGS[cmd]})
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(f"{args.config} not found")
        doc = json.loads(args.config.read_text(encoding="utf-8"))
        if doc.get("format") == MANIFEST_FORMAT:
            if doc.get("command") != cmd:
                raise UsageError(f"manifest records command {doc.get('command')!r}, not {cmd!r}")
            doc = doc["config"]
        unknown = set(doc) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(sorted(unknown))}")
        cfg.update(doc)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for name, _ in PATH_ARGS[cmd]:
        if cfg[name] is not None:
            cfg[name] = str(cfg[name])
    return cfg


def data_dir(value: str | None, default_name: str | None = None) -> Path:
    """Resolve a dataset path, falling back on ``$MGMC_DATA_DIR``."""
    root = os.environ.get(DATA_ENV)
    if value is None:
        if root is None:
            raise UsageError(f"no dataset given; pass --data or set {DATA_ENV}")
        return Path(root) / default_name if default_name else Path(root)
    p = Path(value)
    if not p.exists() and root and not p.is_absolute() and (Path(root) / p).exists():
        return Path(root) / p
    return p


def _require(cfg: dict, cmd: str) -> None:
    for name in REQUIRED_PATHS.get(cmd, ()):
        if cfg[name] is None:
            raise UsageError(f"{cmd} needs {_flag(name)}")


def _start(cmd: str, cfg: dict, inputs, manifest_path: Path | None, outputs) -> RunManifest:
    for p in inputs:
        if not Path(p).exists():
            raise FileNotFoundError(f"{p} not found")
    man = RunManifest(cmd, cfg, int(cfg["seed"]), hash_inputs(inputs), [str(o) for o in outputs])
    if manifest_path is not None:
        man.write(manifest_path)
    else:
        print(json.dumps(asdict(man), sort_keys=True), file=sys.stderr)
    return man


# ------------------------------------------------------------------ commands


def cmd_gen_synthetic(cfg: dict, args) -> int:
    from .data import SyntheticConfig, gen_synthetic, write_dataset

    out = data_dir(cfg["out"], f"synthetic-seed{cfg['seed']}")
    cfg["out"] = str(out)
    _start("gen-synthetic", cfg, [], out / "manifest.json", [out])
    syn = SyntheticConfig(
        m=cfg["m"], n=cfg["n"], row_communities=cfg["row_communities"], col_communities=cfg["col_communities"],
        rank=cfg["rank"], noise=cfg["noise"], train_fraction=cfg["train_fraction"],
        test_fraction=cfg["test_fraction"], seed=cfg["seed"],
    )
    ds = gen_synthetic(syn)
    write_dataset(ds, out, compress=bool(cfg["compress"]))
    print(f"wrote {ds.m}x{ds.n} dataset to {out}")
    return 0


def cmd_import_movielens(cfg: dict, args) -> int:
    from .data import movielens_100k, submatrix, write_dataset

    root = Path(cfg["root"])
    out = data_dir(cfg["out"], "ml-100k")
    cfg["out"] = str(out)
    inputs = [root / f for f in ("u.user", "u.item")]
    inputs += [root / f"{cfg['split']}.base", root / f"{cfg['split']}.test"] if cfg["split"] else [root / "u.data"]
    _start("import-movielens", cfg, inputs, out / "manifest.json", [out])
    ds = movielens_100k(root, cfg["split"], k=cfg["k"], test_fraction=cfg["test_fraction"], seed=cfg["seed"])
    ds = submatrix(ds, cfg["max_size"], cfg["max_size"])
    write_dataset(ds, out, compress=bool(cfg["compress"]))
    print(f"wrote {ds.m}x{ds.n} dataset with {int(ds.observed_mask.sum())} ratings to {out}")
    return 0


def _train_config(cfg: dict, no_wall_time: bool, **override):
    from .train import TrainConfig

    vals = {k: cfg[k] for k in ("lr", "mu", "T", "p", "q", "hidden", "rank", "n_layers", "eval_every", "patience", "seed")}
    vals["max_iters"] = cfg["iters"]
    vals.update(override)
    return TrainConfig(**vals, record_wall_time=not no_wall_time)


def _progress(rec):
    log.info("iter %d loss %.6g train %.5f test %.5f", rec.iteration, rec.loss, rec.train_rmse, rec.test_rmse)


def cmd_train(cfg: dict, args) -> int:
    from .data import read_dataset
    from .nn import save_checkpoint
    from .train import train

    if cfg["model"] not in ("rgcnn", "srgcnn"):
        raise UsageError("--model must be rgcnn or srgcnn")
    data = data_dir(cfg["data"])
    cfg["data"] = str(data)
    if cfg["out"] is None:
        raise UsageError("train needs --out")
    out = Path(cfg["out"])
    files = [out / "checkpoint.json", out / "history.csv", out / "trajectory.csv"]
    _start("train", cfg, [data], out / "manifest.json", files)
    ds = read_dataset(data)
    tc = _train_config(cfg, args.no_wall_time)
    problem, history = train(cfg["model"], ds, tc, free_rows=bool(cfg["free_rows"]), progress=_progress)
    last = history.records[-1]
    save_checkpoint(problem.model, files[0], extra={"mu": tc.mu, "iterations": last.iteration,
                                                    "test_rmse": last.test_rmse})
    history.write_csv(files[1])
    traj = problem.trajectory_rmse()
    with open(files[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "test_rmse"])
        for t, v in enumerate(traj):
            w.writerow([t, repr(v)])
    print(f"{cfg['model']}: test RMSE {last.test_rmse:.6f} after {last.iteration} iterations ({history.stop_reason})")
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    from .data import read_dataset
    from .nn import load_checkpoint
    from .train import Problem, rmse

    _require(cfg, "evaluate")
    data = data_dir(cfg["data"])
    cfg["data"] = str(data)
    if cfg["split"] not in ("train", "test"):
        raise UsageError("--split must be train or test")
    _start("evaluate", cfg, [data, cfg["checkpoint"]], None, [])
    ds = read_dataset(data)
    model = load_checkpoint(cfg["checkpoint"])
    problem = Problem(model.kind, model, ds, mu=1.0)
    if problem.kind == "srgcnn" and model.free_W is not None and model.free_W.shape[0] != ds.m:
        raise ValueError("checkpoint row factor does not match the dataset")
    mask = ds.test_mask if cfg["split"] == "test" else ds.train_mask
    print(f"{rmse(problem.predict(), ds.values, mask):.6f}")
    return 0


def _laps(ds, free_rows=False):
    Lr = None if free_rows else ds.row_graph.laplacian()
    return Lr, ds.col_graph.laplacian()


def run_baseline(method: str, ds, cfg: dict) -> tuple[np.ndarray, int]:
    """Returns ``(prediction, number of learned values)``."""
    from .baselines import gmc_complete, graph_reg_als, svt_complete

    Y, mask = ds.values, ds.train_mask
    if method == "svt":
        return svt_complete(Y, mask, tau=cfg["tau"], iters=cfg["iters"]), ds.m * ds.n
    if method == "gmc":
        Lr, Lc = _laps(ds)
        return gmc_complete(Y, mask, Lr, Lc, mu=cfg["mu"], lr=cfg.get("lr"), iters=cfg["iters"]), ds.m * ds.n
    if method == "grals":
        free = bool(cfg.get("free_rows"))
        Lr, Lc = _laps(ds, free)
        if free:
            Lr = np.eye(ds.m)
        W, H = graph_reg_als(Y, mask, Lr, Lc, mu=cfg["mu"], rank=cfg["rank"], sweeps=cfg["iters"])
        return W @ H.T, (ds.m + ds.n) * cfg["rank"]
    raise UsageError("--method must be svt, gmc or grals")


def cmd_baseline(cfg: dict, args) -> int:
    from .data import read_dataset
    from .train import rmse

    data = data_dir(cfg["data"])
    cfg["data"] = str(data)
    out = Path(cfg["out"]) if cfg["out"] else None
    files = [out / "metrics.csv"] if out else []
    _start("baseline", cfg, [data], out / "manifest.json" if out else None, files)
    ds = read_dataset(data)
    pred, _ = run_baseline(cfg["method"], ds, cfg)
    score = rmse(pred, ds.values, ds.test_mask)
    if out:
        new = not files[0].exists()
        with open(files[0], "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["method", "rmse"])
            w.writerow([cfg["method"], repr(score)])
    print(f"{cfg['method']}: test RMSE {score:.6f}")
    return 0


def cmd_export_filters(cfg: dict, args) -> int:
    from .nn import load_checkpoint
    from .spectral import export_filter_response_2d, export_filter_responses_1d, filter_response

    _require(cfg, "export-filters")
    if cfg["out"] is None:
        raise UsageError("export-filters needs --out")
    out = Path(cfg["out"])
    _start("export-filters", cfg, [cfg["checkpoint"]], out / "manifest.json", [out])
    model = load_checkpoint(cfg["checkpoint"])
    lam = np.linspace(-1.0, 1.0, cfg["grid"])
    if model.kind == "rgcnn":
        theta = model.layers[0].theta.data  # (q, 1, P, P)
        for l in range(min(cfg["n_filters"], theta.shape[0])):
            resp = np.abs(filter_response(theta[l, 0], lam, lam))
            export_filter_response_2d(out / f"filter_{l + 1}.csv", lam, lam, resp)
    else:
        for side in ("row", "col"):
            branch = getattr(model, side)
            if branch is None:
                continue
            # channel l's response to the first input factor column
            theta = branch["layers"][0].theta.data[: cfg["n_filters"], 0]
            resp = np.abs(np.stack([filter_response(t, lam) for t in theta]))
            export_filter_responses_1d(out / f"{side}_filters.csv", lam, resp)
    print(f"wrote filter responses to {out}")
    return 0


COMPLEXITY = {"gmc": "O(mn)", "grals": "O(m+n)", "rgcnn": "O(mn)", "srgcnn": "O(m+n)"}


def cmd_compare(cfg: dict, args) -> int:
    from .data import read_dataset
    from .train import rmse, train

    data = data_dir(cfg["data"])
    cfg["data"] = str(data)
    if cfg["out"] is None:
        raise UsageError("compare needs --out")
    out = Path(cfg["out"])
    _start("compare", cfg, [data], out.with_name(out.stem + ".manifest.json"), [out])
    ds = read_dataset(data)
    rows = []
    for method, mu in (("gmc", cfg["gmc_mu"]), ("grals", cfg["grals_mu"])):
        pred, n_params = run_baseline(method, ds, {"mu": mu, "rank": cfg["rank"], "lr": None,
                                                   "iters": 2000 if method == "gmc" else 50})
        rows.append((method, n_params, rmse(pred, ds.values, ds.test_mask)))
    for kind in ("rgcnn", "srgcnn"):
        over = {}
        if kind == "srgcnn":
            over = {"rank": cfg["srgcnn_rank"]}
            if cfg["srgcnn_lr"] is not None:
                over["lr"] = cfg["srgcnn_lr"]
            if cfg["srgcnn_iters"] is not None:
                over["max_iters"] = cfg["srgcnn_iters"]
        problem, hist = train(kind, ds, _train_config(cfg, args.no_wall_time, **over), progress=_progress)
        rows.append((kind, problem.model.num_parameters(), hist.records[-1].test_rmse))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "parameters", "complexity", "rmse"])
        for method, n_params, score in rows:
            w.writerow([method, n_params, COMPLEXITY[method], repr(score)])
    for method, n_params, score in rows:
        print(f"{method:8s} {n_params:8d} {COMPLEXITY[method]:8s} {score:.6f}")
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "import-movielens": cmd_import_movielens,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "export-filters": cmd_export_filters,
    "compare": cmd_compare,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.command, args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mgmc: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"mgmc: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
