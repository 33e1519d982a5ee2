"""Losses, Adam, and full-batch training of the diffusion models."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import (
    ModelConfig,
    build_model,
    graph_operator,
    initial_factors,
    initial_matrix,
    rgcnn_diffuse,
    srgcnn_diffuse,
)

log = logging.getLogger(__name__)

# above this many matrix entries the factorized data term is gathered on
# observed entries instead of forming W H^T
DENSE_PRODUCT_LIMIT = 4_000_000


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    mu: float = 1.0
    T: int = 10
    p: int = 5
    q: int = 32
    hidden: int = 32
    rank: int = 15
    n_layers: int = 1
    max_iters: int = 5000
    eval_every: int = 10
    patience: int = 200
    seed: int = 0
    record_wall_time: bool = True

    def __post_init__(self):
        for name in ("lr", "T", "q", "hidden", "rank", "n_layers", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mu < 0 or self.max_iters < 0 or self.p < 0:
            raise ValueError("mu, max_iters and p must be non-negative")

    def model_config(self, free_rows: bool = False) -> ModelConfig:
        return ModelConfig(
            p=self.p, q=self.q, hidden=self.hidden, T=self.T, rank=self.rank,
            n_layers=self.n_layers, seed=self.seed, free_rows=free_rows,
        )


@dataclass
class HistoryRecord:
    iteration: int
    loss: float
    train_rmse: float
    test_rmse: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    stop_reason: str = ""

    def append(self, rec: HistoryRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss", "train_rmse", "test_rmse", "seconds"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.loss), repr(r.train_rmse), repr(r.test_rmse), repr(r.seconds)])


def _lap_matrix(L):
    return L.matrix if hasattr(L, "matrix") else np.asarray(L, dtype=np.float64)


def loss_full(X_T, Y, mask_train, lap_r, lap_c, mu: float) -> ad.Tensor:
    """Row and column Dirichlet energies plus the masked data term.

    ``trace(X^T L_r X) + trace(X L_c X^T) + mu/2 ||mask o (X - Y)||_F^2``
    """
    X_T = ad.as_tensor(X_T)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape != X_T.shape or np.shape(mask_train) != X_T.shape:
        raise ValueError(f"shape mismatch: X {X_T.shape}, Y {Y.shape}, mask {np.shape(mask_train)}")
    rows = ad.bilinear_trace(X_T, _lap_matrix(lap_r))
    cols = ad.bilinear_trace(ad.transpose(X_T), _lap_matrix(lap_c))
    data = ad.masked_frobenius_sq(X_T - Y, mask_train)
    return rows + cols + (0.5 * mu) * data


def factor_product_on(W, H, rows: np.ndarray, cols: np.ndarray) -> ad.Tensor:
    """Entries ``(W H^T)[rows[k], cols[k]]`` without forming the product."""
    return ad.sum(ad.take_rows(W, rows) * ad.take_rows(H, cols), axis=1)


def loss_factorized(W_T, H_T, Y, mask_train, lap_r, lap_c, mu: float,
                    dense_limit: int = DENSE_PRODUCT_LIMIT) -> ad.Tensor:
    """``trace(W^T L_r W) + trace(H^T L_c H) + mu/2 ||mask o (W H^T - Y)||_F^2``."""
    W_T, H_T = ad.as_tensor(W_T), ad.as_tensor(H_T)
    Y = np.asarray(Y, dtype=np.float64)
    m, n = Y.shape
    if W_T.shape[0] != m or H_T.shape[0] != n or W_T.shape[1] != H_T.shape[1]:
        raise ValueError(f"factor shapes {W_T.shape}, {H_T.shape} do not fit {Y.shape}")
    mask_train = np.asarray(mask_train, dtype=bool)
    if m * n <= dense_limit:
        data = ad.masked_frobenius_sq(W_T @ ad.transpose(H_T) - Y, mask_train)
    else:
        i, j = np.nonzero(mask_train)
        data = ad.frobenius_sq(factor_product_on(W_T, H_T, i, j) - Y[i, j])
    total = ad.bilinear_trace(H_T, _lap_matrix(lap_c)) + (0.5 * mu) * data
    if lap_r is not None:
        total = total + ad.bilinear_trace(W_T, _lap_matrix(lap_r))
    else:
        total = total + ad.frobenius_sq(W_T)
    return total


def rmse(X_pred, Y, mask_eval) -> float:
    mask_eval = np.asarray(mask_eval, dtype=bool)
    if not mask_eval.any():
        raise ValueError("evaluation mask is empty")
    d = np.asarray(X_pred)[mask_eval] - np.asarray(Y)[mask_eval]
    return float(np.sqrt(np.mean(d * d)))


def adam_step(params, grads, moments, t: int, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are parallel lists of arrays; ``moments`` is a
    list of ``(m, v)`` pairs (``None`` entries are initialized to zeros).
    Returns the updated moments.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    out = []
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, (p, g) in enumerate(zip(params, grads)):
        mom = moments[k] if moments is not None and k < len(moments) else None
        m, v = mom if mom is not None else (np.zeros_like(p), np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        out.append((m, v))
    return out


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.moments = None

    def step(self, grads) -> None:
        self.t += 1
        self.moments = adam_step(
            [p.data for p in self.params], grads, self.moments, self.t,
            self.lr, self.beta1, self.beta2, self.eps,
        )


class Problem:
    """A model bound to one dataset: Laplacians, initial state and the loss."""

    def __init__(self, kind: str, model, dataset, mu: float):
        self.kind = kind
        self.model = model
        self.dataset = dataset
        self.mu = mu
        ds = dataset
        self.Y = ds.values
        self.mask_train = ds.train_mask
        self.mask_test = ds.test_mask
        free_rows = getattr(model.config, "free_rows", False)
        self.lap_c = ds.col_graph.laplacian()
        self.lap_r = None if (kind == "srgcnn" and free_rows) else ds.row_graph.laplacian()
        if kind == "rgcnn":
            self.ops = (graph_operator(self.lap_r.rescaled), graph_operator(self.lap_c.rescaled))
            self.X0 = initial_matrix(self.Y, self.mask_train)
        else:
            self.W0, self.H0 = initial_factors(self.Y, self.mask_train, model.config.rank)

    def forward(self):
        """Returns ``(loss tensor, prediction array, trajectory)``."""
        if self.kind == "rgcnn":
            X, traj = rgcnn_diffuse(self.model, *self.ops, self.X0)
            loss = loss_full(X, self.Y, self.mask_train, self.lap_r, self.lap_c, self.mu)
            return loss, X.data, traj
        L_r = None if self.lap_r is None else self.lap_r.rescaled
        W, H, traj = srgcnn_diffuse(self.model, L_r, self.lap_c.rescaled, self.W0, self.H0)
        loss = loss_factorized(W, H, self.Y, self.mask_train, self.lap_r, self.lap_c, self.mu)
        return loss, W.data @ H.data.T, traj

    def predict(self) -> np.ndarray:
        return self.forward()[1]

    def trajectory_rmse(self, mask=None) -> list[float]:
        """RMSE of each diffusion snapshot ``t = 0..T`` on ``mask`` (test by default)."""
        mask = self.mask_test if mask is None else mask
        target = self.dataset.truth if self.dataset.truth is not None else self.Y
        _, _, traj = self.forward()
        if self.kind == "rgcnn":
            return [rmse(X, target, mask) for X in traj]
        return [rmse(W @ H.T, target, mask) for W, H in traj]


def make_problem(kind: str, dataset, config: TrainConfig, free_rows: bool = False) -> Problem:
    model = build_model(kind, config.model_config(free_rows), n_rows=dataset.m)
    problem = Problem(kind, model, dataset, config.mu)
    if kind == "srgcnn" and model.free_W is not None:
        model.free_W.data[...] = problem.W0
    return problem


def train(kind: str, dataset, config: TrainConfig, free_rows: bool = False, progress=None):
    """Full-batch Adam on the loss of the final diffusion state.

    Returns ``(problem, history)``; ``problem.model`` is the trained model.
    Evaluations happen every ``eval_every`` iterations and at the last one;
    training stops early once test RMSE has not improved for ``patience``
    iterations.
    """
    problem = make_problem(kind, dataset, config, free_rows)
    params = problem.model.parameters()
    opt = Adam(params, lr=config.lr)
    history = TrainHistory()
    start = time.perf_counter()
    best, best_iter = np.inf, 0
    history.stop_reason = "max_iters"
    for it in range(config.max_iters + 1):
        for p in params:
            p.grad = None
        with ad.Tape() as tape:
            try:
                loss, pred, _ = problem.forward()
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(f"iteration {it}: {exc}") from exc
        lval = float(loss.data)
        if not np.isfinite(lval) or lval > 1e12:
            raise TrainingDiverged(f"iteration {it}: loss {lval:.3e}")
        last = it == config.max_iters
        if it % config.eval_every == 0 or last:
            test = rmse(pred, dataset.values, dataset.test_mask)
            rec = HistoryRecord(
                it, lval, rmse(pred, dataset.values, dataset.train_mask), test,
                time.perf_counter() - start if config.record_wall_time else 0.0,
            )
            history.append(rec)
            if progress is not None:
                progress(rec)
            if test < best:
                best, best_iter = test, it
            elif it - best_iter >= config.patience:
                history.stop_reason = f"test RMSE plateau since iteration {best_iter}"
                break
        if last:
            break
        tape.backward(loss)
        opt.step([p.grad if p.grad is not None else np.zeros(p.shape) for p in params])
    log.info("%s training stopped: %s", kind, history.stop_reason)
    return problem, history
