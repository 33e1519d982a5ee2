"""Graph Fourier transforms and Chebyshev spectral filters on one or two graphs.

The recurrences below only use ``@``, ``+``, ``-`` and scalar ``*`` on the
signal, so they run unchanged on numpy arrays and on autodiff tensors.
Coefficient matrices index the row graph first: ``theta[j, k]`` weights
``T_j(L_r) X T_k(L_c)``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .graph import EigenDecomposition


def _check_dims(Phi: np.ndarray, n: int, what: str) -> None:
    if Phi.shape[0] != n:
        raise ValueError(f"{what}: signal has {n} vertices, basis has {Phi.shape[0]}")


def gft(eig: EigenDecomposition, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_dims(eig.eigenvectors, x.shape[0], "gft")
    return eig.eigenvectors.T @ x


def igft(eig: EigenDecomposition, x_hat: np.ndarray) -> np.ndarray:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    _check_dims(eig.eigenvectors, x_hat.shape[0], "igft")
    return eig.eigenvectors @ x_hat


def spectral_convolve_ref(x, y, eig: EigenDecomposition) -> np.ndarray:
    """Convolution as a product of Fourier coefficients. Reference path only."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return igft(eig, gft(eig, x) * gft(eig, y))


def fourier_2d(eig_r: EigenDecomposition, eig_c: EigenDecomposition, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _check_dims(eig_r.eigenvectors, X.shape[0], "fourier_2d rows")
    _check_dims(eig_c.eigenvectors, X.shape[1], "fourier_2d columns")
    return eig_r.eigenvectors.T @ X @ eig_c.eigenvectors


def inverse_fourier_2d(eig_r: EigenDecomposition, eig_c: EigenDecomposition, X_hat) -> np.ndarray:
    X_hat = np.asarray(X_hat, dtype=np.float64)
    return eig_r.eigenvectors @ X_hat @ eig_c.eigenvectors.T


def cheb_basis_left(L: np.ndarray, X, p: int) -> list:
    """``[T_0(L) X, ..., T_p(L) X]`` by the three-term recurrence."""
    if p < 0:
        raise ValueError("degree must be non-negative")
    out = [X]
    if p >= 1:
        out.append(L @ X)
    for _ in range(2, p + 1):
        out.append(2.0 * (L @ out[-1]) - out[-2])
    return out


def cheb_basis_right(L: np.ndarray, X, p: int) -> list:
    """``[X T_0(L), ..., X T_p(L)]``; ``L`` must be symmetric."""
    if p < 0:
        raise ValueError("degree must be non-negative")
    out = [X]
    if p >= 1:
        out.append(X @ L)
    for _ in range(2, p + 1):
        out.append(2.0 * (out[-1] @ L) - out[-2])
    return out


def cheb_basis_2d(L_r: np.ndarray, L_c: np.ndarray, X, p: int) -> list[list]:
    """Nested list ``B[j][k] = T_j(L_r) X T_k(L_c)``."""
    return [cheb_basis_right(L_c, R, p) for R in cheb_basis_left(L_r, X, p)]


def cheb_apply_1d(L_tilde: np.ndarray, theta, X) -> np.ndarray:
    """Apply ``sum_j theta_j T_j(L_tilde)`` to the columns of ``X``.

    Only products with ``L_tilde`` are formed, never the polynomial matrices.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size == 0:
        raise ValueError("empty Chebyshev coefficient vector")
    X = np.asarray(X, dtype=np.float64)
    if L_tilde.shape[0] != L_tilde.shape[1] or L_tilde.shape[1] != X.shape[0]:
        raise ValueError(f"operator {L_tilde.shape} does not match signal {X.shape}")
    out = theta[0] * X
    if theta.size == 1:
        return out
    prev, cur = X, L_tilde @ X
    out = out + theta[1] * cur
    for j in range(2, theta.size):
        prev, cur = cur, 2.0 * (L_tilde @ cur) - prev
        out = out + theta[j] * cur
    return out


def cheb_apply_2d(L_r: np.ndarray, L_c: np.ndarray, Theta, X) -> np.ndarray:
    """Evaluate ``sum_{j,k} Theta[j,k] T_j(L_r) X T_k(L_c)``.

    The row stack ``T_j(L_r) X`` is built first; one right recurrence over the
    column graph then accumulates the weighted sum, keeping p+1 matrices live.
    """
    Theta = np.asarray(Theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Theta.ndim != 2 or Theta.shape[0] != Theta.shape[1]:
        raise ValueError("coefficient matrix must be square")
    m, n = X.shape
    if L_r.shape != (m, m) or L_c.shape != (n, n):
        raise ValueError(f"operators {L_r.shape}, {L_c.shape} do not match matrix {X.shape}")
    p = Theta.shape[0] - 1
    rows = cheb_basis_left(L_r, X, p)
    # Z_k = sum_j Theta[j, k] T_j(L_r) X, then out = sum_k Z_k T_k(L_c) via Clenshaw.
    Z = [sum(Theta[j, k] * rows[j] for j in range(p + 1)) for k in range(p + 1)]
    b1 = np.zeros_like(X)
    b2 = np.zeros_like(X)
    for k in range(p, 0, -1):
        b1, b2 = Z[k] + 2.0 * (b1 @ L_c) - b2, b1
    return Z[0] + b1 @ L_c - b2


def cheb_synthesis_2d(L_r, L_c, blocks) -> np.ndarray:
    """``sum_{j,k} T_j(L_r) blocks[j][k] T_k(L_c)`` for symmetric operators.

    This is the adjoint of :func:`cheb_basis_2d`. Evaluated by Clenshaw in
    both directions, so only products with ``L_r`` and ``L_c`` are formed.
    """
    P = len(blocks)
    if P == 1:
        return blocks[0][0]

    def right(row):
        b1, b2 = row[P - 1], 0.0
        for k in range(P - 2, 0, -1):
            b1, b2 = row[k] + 2.0 * (b1 @ L_c) - b2, b1
        return row[0] + b1 @ L_c - b2

    S = [right(row) for row in blocks]
    b1, b2 = S[P - 1], 0.0
    for j in range(P - 2, 0, -1):
        b1, b2 = S[j] + 2.0 * (L_r @ b1) - b2, b1
    return S[0] + L_r @ b1 - b2


def chebyshev_values(lam, p: int) -> np.ndarray:
    """``T_0..T_p`` evaluated at each point in ``lam``; shape ``(p+1, len)``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    T = np.empty((p + 1, lam.size))
    T[0] = 1.0
    if p >= 1:
        T[1] = lam
    for j in range(2, p + 1):
        T[j] = 2.0 * lam * T[j - 1] - T[j - 2]
    return T


def clenshaw(theta, lam) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).ravel()
    lam = np.asarray(lam, dtype=np.float64)
    b1 = np.zeros_like(lam)
    b2 = np.zeros_like(lam)
    for c in theta[:0:-1]:
        b1, b2 = c + 2.0 * lam * b1 - b2, b1
    return theta[0] + lam * b1 - b2


def filter_response(coeffs, lam, lam_c=None) -> np.ndarray:
    """Filter response on rescaled eigenvalues in [-1, 1].

    A vector of coefficients gives ``tau(lam)``. A square matrix gives the
    2-D response over the grid ``lam`` (rows) x ``lam_c`` (columns); ``lam_c``
    defaults to ``lam``.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        return clenshaw(coeffs, lam)
    if lam_c is None:
        lam_c = lam
    p = coeffs.shape[0] - 1
    Tr = chebyshev_values(lam, p)
    Tc = chebyshev_values(lam_c, coeffs.shape[1] - 1)
    return Tr.T @ coeffs @ Tc


def spectral_filter_ref(eig: EigenDecomposition, theta, X) -> np.ndarray:
    """``Phi diag(tau(lam_tilde)) Phi^T X`` with lam_tilde from ``eig``.

    ``eig`` must decompose the rescaled operator.
    """
    g = clenshaw(theta, eig.eigenvalues)
    Phi = eig.eigenvectors
    return Phi @ (g[:, None] * (Phi.T @ np.asarray(X, dtype=np.float64)))


def spectral_filter_2d_ref(eig_r, eig_c, Theta, X) -> np.ndarray:
    G = filter_response(Theta, eig_r.eigenvalues, eig_c.eigenvalues)
    return inverse_fourier_2d(eig_r, eig_c, G * fourier_2d(eig_r, eig_c, X))


def export_filter_responses_1d(path, lam, responses) -> None:
    """CSV ``lambda,response_1..response_q``; ``responses`` is ``(q, len(lam))``."""
    responses = np.atleast_2d(responses)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda"] + [f"response_{i + 1}" for i in range(responses.shape[0])])
        for k, lv in enumerate(np.asarray(lam)):
            w.writerow([repr(float(lv))] + [repr(float(v)) for v in responses[:, k]])


def export_filter_response_2d(path, lam_r, lam_c, response) -> None:
    """Long-form CSV ``lambda_r,lambda_c,response``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_r", "lambda_c", "response"])
        for a, lr in enumerate(np.asarray(lam_r)):
            for b, lc in enumerate(np.asarray(lam_c)):
                w.writerow([repr(float(lr)), repr(float(lc)), repr(float(response[a, b]))])
