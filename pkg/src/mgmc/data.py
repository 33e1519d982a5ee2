"""Rating datasets: synthetic community data, MovieLens-100k and directory I/O.

A dataset directory holds::

    meta.json        m, n, seed, generator config
    observed.tsv     i<TAB>j<TAB>value<TAB>split   (split is train or test)
    row_graph.tsv    item graph edge list
    col_graph.tsv    user graph edge list
    truth.tsv        optional, i<TAB>j<TAB>value for every entry

Any ``.tsv`` may instead be stored gzipped as ``.tsv.gz``.
"""

from __future__ import annotations

import gzip
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, build_knn_graph, read_edge_list, write_edge_list


class DataFormatError(ValueError):
    pass


@dataclass
class RatingDataset:
    values: np.ndarray  # m x n, observed values, 0 elsewhere
    train_mask: np.ndarray
    test_mask: np.ndarray
    row_graph: Graph
    col_graph: Graph
    truth: np.ndarray | None = None
    meta: dict | None = None

    def __post_init__(self):
        m, n = self.values.shape
        if self.train_mask.shape != (m, n) or self.test_mask.shape != (m, n):
            raise DataFormatError("mask shapes must match the value matrix")
        if np.any(self.train_mask & self.test_mask):
            raise DataFormatError("train and test masks overlap")
        if self.row_graph.n_vertices != m or self.col_graph.n_vertices != n:
            raise DataFormatError(
                f"graph sizes ({self.row_graph.n_vertices}, {self.col_graph.n_vertices}) do not match {m}x{n}"
            )

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def observed_mask(self) -> np.ndarray:
        return self.train_mask | self.test_mask


@dataclass
class SyntheticConfig:
    m: int = 150
    n: int = 200
    row_communities: int = 5
    col_communities: int = 5
    rank: int = 5
    noise: float = 0.0
    train_fraction: float = 0.15
    test_fraction: float = 0.15
    p_in: float = 0.7
    p_out: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.train_fraction < 0 or self.test_fraction < 0 or self.train_fraction + self.test_fraction > 1:
            raise ValueError("observed fractions must be non-negative and sum to at most 1")
        if self.row_communities > self.m or self.col_communities > self.n:
            raise ValueError("more communities than vertices")
        if min(self.m, self.n, self.row_communities, self.col_communities, self.rank) < 1:
            raise ValueError("sizes must be positive")


def _community_graph(labels: np.ndarray, p_in: float, p_out: float, rng) -> Graph:
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    A = np.triu(draw < prob, 1)
    i, j = np.nonzero(A)
    return Graph(n, i.astype(np.int64), j.astype(np.int64), np.ones(len(i)))


def _balanced_labels(size: int, k: int, rng) -> np.ndarray:
    # uniform assignment with every community non-empty
    return rng.permutation(np.arange(size) % k)


def gen_synthetic(cfg: SyntheticConfig, seed: int | None = None) -> RatingDataset:
    """Community-structured low-rank matrix with matching row/column graphs.

    Items and users are assigned to communities; every community gets one
    latent factor row, so the clean matrix is block constant with rank at most
    ``cfg.rank``. Graphs connect same-community vertices with probability
    ``p_in`` and others with ``p_out``.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    row_lab = _balanced_labels(cfg.m, cfg.row_communities, rng)
    col_lab = _balanced_labels(cfg.n, cfg.col_communities, rng)
    Wc = rng.standard_normal((cfg.row_communities, cfg.rank)) / np.sqrt(cfg.rank)
    Hc = rng.standard_normal((cfg.col_communities, cfg.rank))
    clean = Wc[row_lab] @ Hc[col_lab].T
    truth = clean + cfg.noise * rng.standard_normal(clean.shape)
    row_graph = _community_graph(row_lab, cfg.p_in, cfg.p_out, rng)
    col_graph = _community_graph(col_lab, cfg.p_in, cfg.p_out, rng)
    total = cfg.m * cfg.n
    n_train = int(np.floor(cfg.train_fraction * total))
    n_test = int(np.floor(cfg.test_fraction * total))
    order = rng.permutation(total)
    train = np.zeros(total, dtype=bool)
    test = np.zeros(total, dtype=bool)
    train[order[:n_train]] = True
    test[order[n_train : n_train + n_test]] = True
    train = train.reshape(cfg.m, cfg.n)
    test = test.reshape(cfg.m, cfg.n)
    values = np.where(train | test, truth, 0.0)
    meta = {"source": "synthetic", "m": cfg.m, "n": cfg.n, "seed": seed, "config": {**asdict(cfg), "seed": seed}}
    ds = RatingDataset(values, train, test, row_graph, col_graph, truth=truth, meta=meta)
    ds.row_labels, ds.col_labels = row_lab, col_lab
    return ds


def split_entries(observed: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random split of the observed entries.

    ``fraction`` of them (rounded down) go to the test mask, the rest to train.
    """
    observed = np.asarray(observed, dtype=bool)
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        raise ValueError("no observed entries to split")
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(idx)[: int(np.floor(fraction * idx.size))]
    test = np.zeros(observed.size, dtype=bool)
    test[chosen] = True
    test = test.reshape(observed.shape)
    return observed & ~test, test


# ------------------------------------------------------------------ MovieLens

OCCUPATIONS = (
    "administrator artist doctor educator engineer entertainment executive healthcare homemaker "
    "lawyer librarian marketing none other programmer retired salesman scientist student technician writer"
).split()


def _read_lines(path: Path, encoding="utf-8"):
    raw = path.read_bytes()
    if str(path).endswith(".gz"):
        raw = gzip.decompress(raw)
    return io.StringIO(raw.decode(encoding)).read().splitlines()


def _parse_ratings(path: Path):
    out = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected user<TAB>item<TAB>rating<TAB>timestamp")
        try:
            out.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed rating line") from None
    return out


def user_features(path: Path) -> dict[int, np.ndarray]:
    """``id|age|gender|occupation|zip`` -> [age/100, is_male, occupation one-hot]."""
    feats = {}
    for lineno, line in enumerate(_read_lines(path, "latin-1"), 1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) < 4:
            raise DataFormatError(f"{path}:{lineno}: malformed user line")
        try:
            uid, age = int(parts[0]), float(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed user line") from None
        occ = np.zeros(len(OCCUPATIONS))
        if parts[3] in OCCUPATIONS:
            occ[OCCUPATIONS.index(parts[3])] = 1.0
        feats[uid] = np.concatenate([[age / 100.0, 1.0 if parts[2] == "M" else 0.0], occ])
    return feats


def item_features(path: Path) -> dict[int, np.ndarray]:
    """``id|title|date|video date|url|19 genre flags`` -> genre indicator vector."""
    feats = {}
    for lineno, line in enumerate(_read_lines(path, "latin-1"), 1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) < 6:
            raise DataFormatError(f"{path}:{lineno}: malformed item line")
        try:
            feats[int(parts[0])] = np.array([float(v) for v in parts[5:]])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: malformed item line") from None
    return feats


def load_movielens(ratings_path, user_path, item_path, test_path=None, k: int = 10,
                   test_fraction: float = 0.2, seed: int = 0) -> RatingDataset:
    """MovieLens-style ratings with kNN user and item graphs.

    Items index rows and users index columns. Without ``test_path`` the
    ratings are split with :func:`split_entries`.
    """
    ratings_path, user_path, item_path = Path(ratings_path), Path(user_path), Path(item_path)
    ufeat = user_features(user_path)
    ifeat = item_features(item_path)
    uids = sorted(ufeat)
    iids = sorted(ifeat)
    ucol = {u: c for c, u in enumerate(uids)}
    irow = {i: r for r, i in enumerate(iids)}
    m, n = len(iids), len(uids)
    values = np.zeros((m, n))
    train = np.zeros((m, n), dtype=bool)
    test = np.zeros((m, n), dtype=bool)

    def place(entries, mask, path):
        for u, i, r in entries:
            if u not in ucol:
                raise DataFormatError(f"{path}: unknown user id {u}")
            if i not in irow:
                raise DataFormatError(f"{path}: unknown item id {i}")
            values[irow[i], ucol[u]] = r
            mask[irow[i], ucol[u]] = True

    place(_parse_ratings(ratings_path), train, ratings_path)
    if test_path is not None:
        place(_parse_ratings(Path(test_path)), test, test_path)
        train &= ~test
    else:
        train, test = split_entries(train, test_fraction, seed)
    kr = min(k, m - 1)
    kc = min(k, n - 1)
    row_graph = build_knn_graph(np.stack([ifeat[i] for i in iids]), kr) if m > 1 else Graph.edgeless(m)
    col_graph = build_knn_graph(np.stack([ufeat[u] for u in uids]), kc) if n > 1 else Graph.edgeless(n)
    meta = {"source": "movielens", "m": m, "n": n, "seed": seed, "config": {"k": k, "test_fraction": test_fraction}}
    return RatingDataset(values, train, test, row_graph, col_graph, meta=meta)


def movielens_100k(root, split: str | None = None, **kw) -> RatingDataset:
    """Load the standard ``ml-100k`` directory; ``split='u1'`` uses u1.base/u1.test."""
    root = Path(root)
    if split:
        return load_movielens(root / f"{split}.base", root / "u.user", root / "u.item",
                              test_path=root / f"{split}.test", **kw)
    return load_movielens(root / "u.data", root / "u.user", root / "u.item", **kw)


def submatrix(ds: RatingDataset, max_rows: int = 3000, max_cols: int = 3000) -> RatingDataset:
    """Keep the most-rated rows and columns so the result fits desk scale."""
    if ds.m <= max_rows and ds.n <= max_cols:
        return ds
    obs = ds.observed_mask
    rows = np.sort(np.argsort(-obs.sum(axis=1), kind="stable")[:max_rows])
    cols = np.sort(np.argsort(-obs.sum(axis=0), kind="stable")[:max_cols])

    def sub_graph(g: Graph, keep):
        pos = -np.ones(g.n_vertices, dtype=np.int64)
        pos[keep] = np.arange(len(keep))
        sel = (pos[g.src] >= 0) & (pos[g.dst] >= 0)
        return Graph.from_edges(len(keep), zip(pos[g.src[sel]], pos[g.dst[sel]], g.weight[sel]))

    pick = np.ix_(rows, cols)
    truth = None if ds.truth is None else ds.truth[pick]
    return RatingDataset(ds.values[pick], ds.train_mask[pick], ds.test_mask[pick],
                         sub_graph(ds.row_graph, rows), sub_graph(ds.col_graph, cols), truth, ds.meta)


# ------------------------------------------------------------ directory I/O


def _find(directory: Path, stem: str) -> Path | None:
    for name in (f"{stem}.tsv", f"{stem}.tsv.gz"):
        if (directory / name).exists():
            return directory / name
    return None


def _write_text(path: Path, text: str) -> None:
    data = text.encode("utf-8")
    if str(path).endswith(".gz"):
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(data)
    else:
        path.write_bytes(data)


def write_dataset(ds: RatingDataset, directory, compress: bool = False) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ext = ".tsv.gz" if compress else ".tsv"
    meta = dict(ds.meta or {})
    meta.update({"m": ds.m, "n": ds.n})
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = []
    for i, j in zip(*np.nonzero(ds.observed_mask)):
        split = "train" if ds.train_mask[i, j] else "test"
        lines.append(f"{i}\t{j}\t{float(ds.values[i, j])!r}\t{split}")
    _write_text(d / f"observed{ext}", "\n".join(lines) + "\n")
    write_edge_list(ds.row_graph, d / f"row_graph{ext}")
    write_edge_list(ds.col_graph, d / f"col_graph{ext}")
    if ds.truth is not None:
        lines = [f"{i}\t{j}\t{float(ds.truth[i, j])!r}" for i in range(ds.m) for j in range(ds.n)]
        _write_text(d / f"truth{ext}", "\n".join(lines) + "\n")


def read_dataset(directory) -> RatingDataset:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path} not found")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    m, n = int(meta["m"]), int(meta["n"])
    obs_path = _find(d, "observed")
    if obs_path is None:
        raise FileNotFoundError(f"{d / 'observed.tsv'} not found")
    values = np.zeros((m, n))
    train = np.zeros((m, n), dtype=bool)
    test = np.zeros((m, n), dtype=bool)
    for lineno, line in enumerate(_read_lines(obs_path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[3] not in ("train", "test"):
            raise DataFormatError(f"{obs_path}:{lineno}: expected i<TAB>j<TAB>value<TAB>train|test")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise DataFormatError(f"{obs_path}:{lineno}: malformed entry") from None
        if not (0 <= i < m and 0 <= j < n):
            raise DataFormatError(f"{obs_path}:{lineno}: index ({i}, {j}) outside {m}x{n}")
        values[i, j] = v
        (train if parts[3] == "train" else test)[i, j] = True
    graphs = []
    for stem in ("row_graph", "col_graph"):
        p = _find(d, stem)
        if p is None:
            raise FileNotFoundError(f"{d / (stem + '.tsv')} not found")
        graphs.append(read_edge_list(p))
    truth = None
    tp = _find(d, "truth")
    if tp is not None:
        truth = np.zeros((m, n))
        for line in _read_lines(tp):
            if line.strip():
                i, j, v = line.split("\t")
                truth[int(i), int(j)] = float(v)
    return RatingDataset(values, train, test, graphs[0], graphs[1], truth=truth, meta=meta)
