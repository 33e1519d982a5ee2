"""Elementwise LSTM-cell arithmetic, compiled with numba when it is installed.

The pure numpy versions make many passes over ``units x 4 hidden`` arrays;
the compiled loops make one. ``tanh`` stays in numpy in both cases because
its vectorized implementation is far faster than a scalar loop. Both paths
compute the same expressions in the same order, so results agree to rounding.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def lstm_cell_combine_numpy(a, c, out):
    """``a`` holds tanh of the halved sigmoid inputs and of the cell input.

    Turns the first ``3 hidden`` columns of ``a`` into sigmoid gates in place
    and writes the new cell state into ``out``.
    """
    H = c.shape[1]
    s = a[:, : 3 * H]
    s += 1.0
    s *= 0.5
    np.multiply(a[:, H : 2 * H], c, out=out)
    out += a[:, :H] * a[:, 3 * H :]


def _combine_loop(a, c, out):
    n, H = c.shape
    for j in range(H):
        for r in range(n):
            i = 0.5 * (a[r, j] + 1.0)
            f = 0.5 * (a[r, H + j] + 1.0)
            a[r, j] = i
            a[r, H + j] = f
            a[r, 2 * H + j] = 0.5 * (a[r, 2 * H + j] + 1.0)
            out[r, j] = f * c[r, j] + i * a[r, 3 * H + j]


def lstm_cell_grad_numpy(gh, gc, gates, g, c, tc, dz, dc_prev):
    """Fill ``dz`` (gate pre-activations) and ``dc_prev`` in place."""
    H = g.shape[1]
    i, f, o = gates[:, :H], gates[:, H : 2 * H], gates[:, 2 * H :]
    dc = gh * o
    dc *= 1.0 - tc * tc
    dc += gc
    np.multiply(dc * g, i * (1.0 - i), out=dz[:, :H])
    np.multiply(dc * c, f * (1.0 - f), out=dz[:, H : 2 * H])
    np.multiply(gh * tc, o * (1.0 - o), out=dz[:, 2 * H : 3 * H])
    np.multiply(dc * i, 1.0 - g * g, out=dz[:, 3 * H :])
    np.multiply(dc, f, out=dc_prev)


def _grad_loop(gh, gc, gates, g, c, tc, dz, dc_prev):
    n, H = g.shape
    # column-outer loop: all arrays are Fortran ordered
    for j in range(H):
        for r in range(n):
            i = gates[r, j]
            f = gates[r, H + j]
            o = gates[r, 2 * H + j]
            t = tc[r, j]
            gg = g[r, j]
            dc = gh[r, j] * o * (1.0 - t * t) + gc[r, j]
            dz[r, j] = dc * gg * (i * (1.0 - i))
            dz[r, H + j] = dc * c[r, j] * (f * (1.0 - f))
            dz[r, 2 * H + j] = gh[r, j] * t * (o * (1.0 - o))
            dz[r, 3 * H + j] = dc * i * (1.0 - gg * gg)
            dc_prev[r, j] = dc * f


lstm_cell_grad_compiled = njit(cache=True)(_grad_loop) if njit is not None else None
lstm_cell_combine_compiled = njit(cache=True)(_combine_loop) if njit is not None else None


def lstm_cell_combine(a, c, out, compiled: bool = True):
    if compiled and lstm_cell_combine_compiled is not None:
        lstm_cell_combine_compiled(a, c, out)
    else:
        lstm_cell_combine_numpy(a, c, out)


def lstm_cell_grad(gh, gc, gates, g, c, tc, dz, dc_prev, compiled: bool = True):
    if compiled and lstm_cell_grad_compiled is not None:
        lstm_cell_grad_compiled(gh, gc, gates, g, c, tc, dz, dc_prev)
    else:
        lstm_cell_grad_numpy(gh, gc, gates, g, c, tc, dz, dc_prev)
