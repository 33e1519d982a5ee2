"""Weighted undirected graphs, normalized Laplacians and their spectra."""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DENSE_EIG_LIMIT = 5000


class GraphError(ValueError):
    """Invalid graph input."""


class CapacityError(RuntimeError):
    """Problem too large for the dense path."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph on ``n_vertices`` vertices.

    Edges are stored once per unordered pair as parallel arrays with
    ``src < dst``.
    """

    n_vertices: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, n_vertices: int, edges) -> "Graph":
        """Build a graph from ``(i, j, w)`` triples.

        Either orientation of an edge may be given, or both as long as the
        weights agree.
        """
        if n_vertices < 1:
            raise GraphError("graph needs at least one vertex")
        pairs: dict[tuple[int, int], float] = {}
        for i, j, w in edges:
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise GraphError(f"self-loop at vertex {i}")
            if not (0 <= i < n_vertices and 0 <= j < n_vertices):
                raise GraphError(f"edge ({i}, {j}) out of range for {n_vertices} vertices")
            if not np.isfinite(w) or w <= 0:
                raise GraphError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in pairs and pairs[key] != w:
                raise GraphError(f"asymmetric weights on edge {key}: {pairs[key]} vs {w}")
            pairs[key] = w
        keys = sorted(pairs)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        dst = np.array([k[1] for k in keys], dtype=np.int64)
        weight = np.array([pairs[k] for k in keys], dtype=np.float64)
        return cls(int(n_vertices), src, dst, weight)

    @classmethod
    def from_adjacency(cls, W: np.ndarray) -> "Graph":
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.allclose(W, W.T, rtol=0, atol=0):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(W) != 0):
            raise GraphError("adjacency has self-loops")
        i, j = np.nonzero(np.triu(W, 1))
        return cls.from_edges(W.shape[0], zip(i, j, W[i, j]))

    @classmethod
    def edgeless(cls, n_vertices: int) -> "Graph":
        return cls.from_edges(n_vertices, [])

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n_vertices, self.n_vertices))
        W[self.src, self.dst] = self.weight
        W[self.dst, self.src] = self.weight
        return W

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n_vertices)
        np.add.at(d, self.src, self.weight)
        np.add.at(d, self.dst, self.weight)
        return d

    def permuted(self, perm) -> "Graph":
        """Relabel vertex ``perm[k]`` as ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph.from_edges(self.n_vertices, zip(inv[self.src], inv[self.dst], self.weight))

    def laplacian(self, exact_lambda_max: bool = True) -> "LaplacianOperator":
        key = ("laplacian", exact_lambda_max)
        if key not in self._cache:
            self._cache[key] = laplacian(self, exact_lambda_max=exact_lambda_max)
        return self._cache[key]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_vertices == other.n_vertices
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.weight, other.weight)
        )

    __hash__ = None


@dataclass(frozen=True)
class LaplacianOperator:
    matrix: np.ndarray
    lambda_max: float
    rescaled: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        Phi = self.eigenvectors
        return (Phi * self.eigenvalues) @ Phi.T


def build_knn_graph(features, k: int) -> Graph:
    """Unweighted k-nearest-neighbour graph, symmetrized by union.

    Ties in distance are broken by the lower vertex index.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise GraphError("need at least two feature vectors")
    if not np.all(np.isfinite(X)):
        raise GraphError("features contain non-finite values")
    if not 1 <= k < n:
        raise GraphError(f"k must lie in [1, {n - 1}], got {k}")
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    A = np.zeros((n, n), dtype=bool)
    A[np.repeat(np.arange(n), k), nbrs.ravel()] = True
    A |= A.T
    i, j = np.nonzero(np.triu(A, 1))
    return Graph(n, i.astype(np.int64), j.astype(np.int64), np.ones(len(i)))


def laplacian(g: Graph, exact_lambda_max: bool = True) -> LaplacianOperator:
    """Normalized Laplacian ``I - D^{-1/2} W D^{-1/2}`` and its rescaling.

    Isolated vertices get a zero ``D^{-1/2}`` entry, so their row is an
    identity row. With ``exact_lambda_max=False`` the bound 2 is used in place
    of the largest eigenvalue.
    """
    W = g.adjacency()
    d = W.sum(axis=1)
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    L = np.eye(g.n_vertices) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    L = 0.5 * (L + L.T)
    if exact_lambda_max:
        lam_max = float(np.linalg.eigvalsh(L)[-1])
    else:
        lam_max = 2.0
    rescaled = (2.0 / lam_max) * L - np.eye(g.n_vertices)
    return LaplacianOperator(L, lam_max, rescaled)


def eigendecompose(L: LaplacianOperator | np.ndarray, max_size: int = DENSE_EIG_LIMIT) -> EigenDecomposition:
    M = L.matrix if isinstance(L, LaplacianOperator) else np.asarray(L, dtype=np.float64)
    if M.shape[0] > max_size:
        raise CapacityError(
            f"dense eigendecomposition limited to {max_size} vertices (got {M.shape[0]}); "
            "use the recursive Chebyshev filters, which need no eigenvectors"
        )
    lam, Phi = np.linalg.eigh(M)
    return EigenDecomposition(lam, Phi)


def dirichlet_energy(L: LaplacianOperator | np.ndarray, X: np.ndarray) -> float:
    """``trace(X^T L X)`` for a signal matrix whose rows live on the graph."""
    M = L.matrix if isinstance(L, LaplacianOperator) else L
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return float(np.sum(X * (M @ X)))


def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="\n")


def write_edge_list(g: Graph, path) -> None:
    """Write ``#vertices=<n>`` then ``i<TAB>j<TAB>w`` lines, each edge once."""
    path = Path(path)
    lines = [f"#vertices={g.n_vertices}"]
    lines += [f"{i}\t{j}\t{w!r}" for i, j, w in g.edges()]
    data = "\n".join(lines) + "\n"
    if str(path).endswith(".gz"):
        with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(data.encode("utf-8"))
    else:
        path.write_text(data, encoding="utf-8")


def read_edge_list(path) -> Graph:
    path = Path(path)
    n = None
    edges = []
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#vertices="):
                    n = int(line.split("=", 1)[1])
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphError(f"{path}:{lineno}: expected 'i<TAB>j<TAB>w'")
            try:
                edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    if n is None:
        raise GraphError(f"{path}: missing '#vertices=<n>' header")
    return Graph.from_edges(n, edges)
