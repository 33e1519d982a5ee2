"""Classical completion solvers used as comparison points.

* ``svt_complete``: proximal gradient on ``tau ||X||_* + 1/2 ||mask o (X - Y)||_F^2``.
* ``gmc_complete``: gradient descent on the graph Dirichlet objective over the
  full matrix.
* ``graph_reg_als``: alternating minimization of the factorized graph
  objective, each half-step solved by conjugate gradients.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class SolverDiverged(RuntimeError):
    pass


@dataclass
class BaselineConfig:
    mu: float = 1.0
    tau: float = 1.0
    step: float = 1.0
    rank: int = 10
    max_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.mu < 0 or self.tau < 0 or self.step <= 0 or self.rank < 1 or self.max_iters < 1:
            raise ValueError("invalid baseline configuration")


@dataclass
class SolverTrace:
    objective: list[float] = field(default_factory=list)
    converged: bool = False


def _mat(L):
    if L is None:
        return None
    return L.matrix if hasattr(L, "matrix") else np.asarray(L, dtype=np.float64)


def nuclear_norm(X) -> float:
    return float(np.linalg.svd(X, compute_uv=False).sum())


def prox_nuclear(V: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Soft-threshold the singular values of ``V``; returns ``(X, s_before, s_after)``."""
    try:
        U, s, Vt = np.linalg.svd(V, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"SVD failed: {exc}") from exc
    s_new = np.maximum(s - threshold, 0.0)
    return (U * s_new) @ Vt, s, s_new


def svt_objective(X, Y, mask, tau) -> float:
    r = np.where(mask, X - Y, 0.0)
    return tau * nuclear_norm(X) + 0.5 * float(np.sum(r * r))


def svt_complete(Y, mask, tau: float, step: float = 1.0, iters: int = 500, tol: float = 1e-10,
                 X0=None, trace: SolverTrace | None = None) -> np.ndarray:
    """Nuclear-norm completion by singular value thresholding.

    Each iteration takes a gradient step of size ``step`` on the data term and
    then shrinks the singular values by ``tau * step``. ``step <= 1`` is safe.
    Stops when the relative change drops below ``tol``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no observed entries")
    X = np.zeros_like(Y) if X0 is None else np.array(X0, dtype=np.float64)
    for _ in range(iters):
        G = np.where(mask, X - Y, 0.0)
        X_new, _, _ = prox_nuclear(X - step * G, tau * step)
        delta = np.linalg.norm(X_new - X)
        X = X_new
        if trace is not None:
            trace.objective.append(svt_objective(X, Y, mask, tau))
        if delta <= tol * max(1.0, np.linalg.norm(X)):
            if trace is not None:
                trace.converged = True
            break
    return X


def gmc_objective(X, Y, mask, lap_r, lap_c, mu) -> float:
    Lr, Lc = _mat(lap_r), _mat(lap_c)
    r = np.where(mask, X - Y, 0.0)
    return float(np.sum(X * (Lr @ X)) + np.sum(X * (X @ Lc)) + 0.5 * mu * np.sum(r * r))


def gmc_lipschitz(lap_r, lap_c, mu) -> float:
    """Upper bound on the gradient Lipschitz constant of the GMC objective."""
    def lam_max(L):
        if hasattr(L, "lambda_max"):
            return L.lambda_max
        return float(np.linalg.eigvalsh(_mat(L))[-1])

    return 2.0 * lam_max(lap_r) + 2.0 * lam_max(lap_c) + mu


def gmc_complete(Y, mask, lap_r, lap_c, mu: float, lr: float | None = None, iters: int = 2000,
                 tol: float = 1e-10, X0=None, trace: SolverTrace | None = None) -> np.ndarray:
    """Gradient descent on ``||X||_Gr^2 + ||X||_Gc^2 + mu/2 ||mask o (X - Y)||_F^2``.

    ``lr`` defaults to ``1/L`` with ``L`` from :func:`gmc_lipschitz`;
    anything below ``2/L`` decreases the objective every iteration.
    """
    Y = np.asarray(Y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no observed entries")
    Lr, Lc = _mat(lap_r), _mat(lap_c)
    Sr, Sc = Lr + Lr.T, Lc + Lc.T
    if lr is None:
        lr = 1.0 / gmc_lipschitz(lap_r, lap_c, mu)
    X = np.where(mask, Y, 0.0) if X0 is None else np.array(X0, dtype=np.float64)
    for _ in range(iters):
        G = Sr @ X + X @ Sc + mu * np.where(mask, X - Y, 0.0)
        X_new = X - lr * G
        if not np.all(np.isfinite(X_new)) or np.abs(X_new).max() > 1e12:
            raise SolverDiverged("gmc_complete diverged; reduce the step size")
        delta = np.linalg.norm(X_new - X)
        X = X_new
        if trace is not None:
            trace.objective.append(gmc_objective(X, Y, mask, Lr, Lc, mu))
        if delta <= tol * max(1.0, np.linalg.norm(X)):
            if trace is not None:
                trace.converged = True
            break
    return X


def als_objective(W, H, Y, mask, lap_r, lap_c, mu) -> float:
    Lr, Lc = _mat(lap_r), _mat(lap_c)
    r = np.where(mask, W @ H.T - Y, 0.0)
    reg_w = 0.0 if Lr is None else np.sum(W * (Lr @ W))
    reg_h = 0.0 if Lc is None else np.sum(H * (Lc @ H))
    return float(0.5 * reg_w + 0.5 * reg_h + 0.5 * mu * np.sum(r * r))


def _cg(apply_A, B: np.ndarray, X0: np.ndarray, tol: float, max_iter: int):
    """Conjugate gradients on matrix unknowns with the Frobenius inner product.

    Iterates decrease the quadratic ``1/2 <X, A X> - <B, X>`` monotonically.
    Returns ``(X, converged)``.
    """
    X = X0.copy()
    R = B - apply_A(X)
    P = R.copy()
    rs = float(np.sum(R * R))
    b_norm = max(np.linalg.norm(B), 1e-300)
    if np.sqrt(rs) <= tol * b_norm:
        return X, True
    for _ in range(max_iter):
        AP = apply_A(P)
        pAp = float(np.sum(P * AP))
        if pAp <= 0:
            return X, np.sqrt(rs) <= tol * b_norm
        alpha = rs / pAp
        X += alpha * P
        R -= alpha * AP
        rs_new = float(np.sum(R * R))
        if np.sqrt(rs_new) <= tol * b_norm:
            return X, True
        P = R + (rs_new / rs) * P
        rs = rs_new
    return X, False


def graph_reg_als(Y, mask, lap_r, lap_c, mu: float, rank: int, sweeps: int = 50,
                  W0=None, H0=None, cg_tol: float = 1e-10, cg_iters: int = 500,
                  trace: SolverTrace | None = None, tol: float = 1e-12):
    """Alternating minimization of the factorized graph-regularized objective.

    ``1/2 tr(W^T L_r W) + 1/2 tr(H^T L_c H) + mu/2 ||mask o (W H^T - Y)||_F^2``.
    A ``None`` Laplacian drops that regularizer; pass the identity for a ridge
    penalty (the "free factor" setting). ``trace.objective`` gets one value
    after initialization and one after every half-step.
    """
    Y = np.asarray(Y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if rank < 1:
        raise ValueError("rank must be positive")
    m, n = Y.shape
    if mu == 0:
        # the regularizers are PSD, so zero factors attain the minimum 0
        return np.zeros((m, rank)), np.zeros((n, rank))
    Lr, Lc = _mat(lap_r), _mat(lap_c)
    Mf = mask.astype(np.float64)
    if W0 is None or H0 is None:
        U, s, Vt = np.linalg.svd(np.where(mask, Y, 0.0), full_matrices=False)
        r = min(rank, len(s))
        W = np.zeros((m, rank))
        H = np.zeros((n, rank))
        W[:, :r] = U[:, :r] * np.sqrt(s[:r])
        H[:, :r] = Vt[:r].T * np.sqrt(s[:r])
    else:
        W, H = np.array(W0, dtype=np.float64), np.array(H0, dtype=np.float64)
    MY = Mf * Y
    if trace is not None:
        trace.objective.append(als_objective(W, H, Y, mask, Lr, Lc, mu))
    prev = np.inf
    cg_failures = 0
    for sweep in range(sweeps):
        def A_w(Wv, H=H):
            out = mu * ((Mf * (Wv @ H.T)) @ H)
            return out if Lr is None else out + Lr @ Wv

        W, ok_w = _cg(A_w, mu * (MY @ H), W, cg_tol, cg_iters)
        if trace is not None:
            trace.objective.append(als_objective(W, H, Y, mask, Lr, Lc, mu))

        def A_h(Hv, W=W):
            out = mu * ((Mf * (W @ Hv.T)).T @ W)
            return out if Lc is None else out + Lc @ Hv

        H, ok_h = _cg(A_h, mu * (MY.T @ W), H, cg_tol, cg_iters)
        obj = als_objective(W, H, Y, mask, Lr, Lc, mu)
        if trace is not None:
            trace.objective.append(obj)
        cg_failures += (not ok_w) + (not ok_h)
        if prev - obj <= tol * max(1.0, abs(obj)):
            if trace is not None:
                trace.converged = True
            break
        prev = obj
    if cg_failures:
        # each CG run still lowers the quadratic, so the iterate is usable
        warnings.warn(f"CG hit its iteration cap in {cg_failures} half-steps; keeping the last iterate",
                      RuntimeWarning, stacklevel=2)
    return W, H


def mean_predictor(Y, mask) -> float:
    return float(np.mean(np.asarray(Y)[np.asarray(mask, dtype=bool)]))


def select_mu(solve, Y, mask, grid, holdout: float = 0.2, seed: int = 0) -> tuple[float, dict]:
    """Pick the data-term weight by RMSE on a holdout carved from ``mask``.

    ``solve(mask_fit, mu)`` returns a completed matrix. Only entries of
    ``mask`` are touched, so the test set stays out of the choice. Returns
    ``(best mu, {mu: holdout RMSE})``; ties go to the earlier grid value.
    """
    from .data import split_entries

    Y = np.asarray(Y, dtype=np.float64)
    fit, val = split_entries(np.asarray(mask, dtype=bool), holdout, seed)
    scores = {}
    for mu in grid:
        err = solve(fit, mu) - Y
        scores[mu] = float(np.sqrt(np.mean(err[val] ** 2)))
    best = min(scores, key=scores.get)
    return best, scores
