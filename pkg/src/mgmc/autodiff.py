"""A small reverse-mode autodiff engine over dense float64 arrays.

Operations executed inside an active :class:`Tape` are recorded in creation
order, which is already a topological order of the computation graph, so
``Tape.backward`` just walks the record in reverse. Leaves are tensors
created with ``requires_grad=True``; they are never recorded and receive
their gradient in ``.grad``.

Every op checks its output for NaN/Inf and raises :class:`NonFiniteError`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class TapeError(AutodiffError):
    pass


_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    # make numpy defer binary operators to our reflected methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_scale(self, other)
        return hadamard_product(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    # a NaN/Inf anywhere makes the sum non-finite, which is cheaper than
    # isfinite().all(); the exact test only runs when the sum overflowed
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.add.reduce(data, axis=None)
    if not np.isfinite(total) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
        if _TAPES:
            _TAPES[-1]._nodes.append(out)
    return out


def custom_op(data: np.ndarray, parents: Sequence, backward: Callable, op: str) -> Tensor:
    """Record a hand-written primitive.

    ``backward(g)`` must return one gradient (or ``None``) per parent.
    """
    return _make(np.asarray(data, dtype=np.float64), tuple(as_tensor(p) for p in parents), backward, op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # 1/2 (1 + tanh(x/2)): overflow-free and faster than exp-based forms
    y = np.multiply(x, 0.5)
    np.tanh(y, out=y)
    y += 1.0
    y *= 0.5
    return y


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "subtract")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "subtract")


def hadamard_product(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard_product")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "hadamard_product")


def scalar_scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _make(s * a.data, (a,), lambda g: (s * g,), "scalar_scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def relu(a) -> Tensor:
    a = as_tensor(a)
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def identity(a) -> Tensor:
    return as_tensor(a)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("concat: nothing to concatenate")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, ts, backward, "concat")


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(k, (slice, int, np.integer)) or k is Ellipsis or k is None for k in parts)

    def backward(g):
        out = np.zeros_like(a.data)  # keeps the memory layout of the source
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward, "slice")


def take_rows(a, idx) -> Tensor:
    """Rows ``a[idx]`` for an integer index array (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), backward, "take_rows")


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis), dtype=np.float64), (a,), backward, "sum")


def frobenius_sq(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(np.sum(a.data * a.data)), (a,), lambda g: (2.0 * g * a.data,), "frobenius_sq")


def masked_frobenius_sq(a, mask) -> Tensor:
    """``||mask o a||_F^2`` for a constant 0/1 (or boolean) mask."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ValueError(f"masked_frobenius_sq: mask {mask.shape} vs value {a.shape}")
    r = mask * a.data
    return _make(np.asarray(np.sum(r * r)), (a,), lambda g: (2.0 * g * mask * r,), "masked_frobenius_sq")


def bilinear_trace(X, A) -> Tensor:
    """``trace(X^T A X)`` for a constant square matrix ``A``."""
    X = as_tensor(X)
    A = np.asarray(A, dtype=np.float64)
    x = X.data if X.ndim == 2 else X.data[:, None]
    if A.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"bilinear_trace: operator {A.shape} vs signal {X.shape}")
    AX = A @ x
    sym = A + A.T

    def backward(g):
        return ((g * (sym @ x)).reshape(X.shape),)

    return _make(np.asarray(np.sum(x * AX)), (X,), backward, "bilinear_trace")


# ------------------------------------------------------------------ the tape


class Tape:
    """Records one forward pass; supports a single ``backward`` per reset."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._done = False

    def __enter__(self) -> "Tape":
        if self._done:
            raise TapeError("tape already consumed; call reset() before reuse")
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def reset(self) -> None:
        self._nodes = []
        self._done = False

    def backward(self, root: Tensor) -> None:
        """Populate ``.grad`` on every leaf reachable from scalar ``root``.

        Leaf gradients are overwritten, not accumulated across tapes. The
        recorded graph is freed afterwards.
        """
        if self._done:
            raise TapeError("backward already called on this tape; reset() first")
        if root.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
        if not root.requires_grad:
            raise TapeError("root does not depend on any parameter")
        if root._op != "leaf" and (not self._nodes or not any(n is root for n in reversed(self._nodes))):
            raise TapeError("root was not recorded on this tape")
        self._done = True
        adj: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
        leaves: dict[int, Tensor] = {}
        if root._op == "leaf":
            leaves[id(root)] = root
        for node in reversed(self._nodes):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adj:
                    adj[key] = adj[key] + pg
                else:
                    adj[key] = np.asarray(pg, dtype=np.float64)
                if parent._op == "leaf":
                    leaves[key] = parent
        for key, leaf in leaves.items():
            leaf.grad = adj.get(key, np.zeros(leaf.shape))
        for node in self._nodes:
            node._parents = ()
            node._backward = None
        self._nodes = []


def value_and_grad(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate scalar ``fn()`` on a fresh tape and return its parameter gradients."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    return float(out.data), grads


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5, tol: float = 1e-4,
               floor: float = 1.0, per: str = "entry"):
    """Compare tape gradients with central differences, coordinate by coordinate.

    Returns ``(passed, worst_error, errors)``. With ``per="entry"``,
    ``errors[i]`` is the max of ``|g_ad - g_fd| / max(floor, |g_ad|, |g_fd|)``
    over parameter ``i``; with ``per="tensor"`` the denominator is instead the
    largest gradient magnitude of that parameter, which keeps round-off in
    tiny components from dominating.
    """
    if per not in ("entry", "tensor"):
        raise ValueError("per must be 'entry' or 'tensor'")
    _, grads = value_and_grad(fn, params)
    errors = []
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        fd = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = float(fn().data)
            flat[k] = orig - h
            fm = float(fn().data)
            flat[k] = orig
            fd[k] = (fp - fm) / (2.0 * h)
        ga = np.abs(g.reshape(-1))
        if per == "entry":
            scale = np.maximum(floor, np.maximum(ga, np.abs(fd)))
        else:
            scale = max(floor, float(ga.max(initial=0.0)), float(np.abs(fd).max(initial=0.0)))
        err = np.abs(g.reshape(-1) - fd) / scale
        errors.append(float(err.max()) if err.size else 0.0)
    worst = max(errors) if errors else 0.0
    return worst < tol, worst, errors
