"""Graph convolution layers, the LSTM cell and the two diffusion models.

``RGCNN`` diffuses the full score matrix: a multi-graph Chebyshev layer turns
``X`` into a feature vector per entry, a shared LSTM reads those features and
a linear head emits the increment ``dX``. ``SRGCNN`` does the same on the two
low-rank factors with one single-graph layer per factor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from ._kernels import lstm_cell_combine, lstm_cell_grad
from .autodiff import Tensor
from .spectral import cheb_basis_2d, cheb_basis_left, cheb_synthesis_2d

CHECKPOINT_FORMAT = "mgmc-checkpoint"

_ACTIVATIONS = {"relu": ad.relu, "identity": ad.identity}


class DiffusionError(ad.AutodiffError):
    """Non-finite value during the diffusion; the message names the step."""


@dataclass
class ModelConfig:
    p: int = 5
    q: int = 32
    hidden: int = 32
    T: int = 10
    rank: int = 15
    n_layers: int = 1
    activation: str = "relu"
    seed: int = 0
    # factorized model only: learn the row factor directly, no row graph
    free_rows: bool = False

    def __post_init__(self):
        for name in ("q", "hidden", "T", "rank", "n_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MGCNNLayer:
    theta: Tensor  # (q_out, q_in, p+1, p+1)
    bias: Tensor  # (q_out,)
    activation: str = "relu"

    @property
    def n_params(self) -> int:
        return self.theta.size + self.bias.size


@dataclass
class GCNNLayer:
    theta: Tensor  # (q_out, q_in, p+1)
    bias: Tensor
    activation: str = "relu"

    @property
    def n_params(self) -> int:
        return self.theta.size + self.bias.size


@dataclass
class LSTMParams:
    W: Tensor  # (q + hidden, 4 hidden), gate blocks ordered i, f, o, g
    b: Tensor  # (4 hidden,)

    @property
    def hidden(self) -> int:
        return self.b.shape[0] // 4


@dataclass
class OutputProjection:
    W: Tensor
    b: Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def graph_operator(L, max_density: float = 0.25):
    """Return ``L`` as a CSR array when it is sparse enough to profit from it."""
    if sp.issparse(L):
        return L
    L = np.asarray(L, dtype=np.float64)
    if np.count_nonzero(L) <= max_density * L.size:
        return sp.csr_array(L)
    return L


def cheb_features_2d(L_r, L_c, X, P: int) -> Tensor:
    """Tape primitive: ``(m n) x P^2`` matrix whose column ``j P + k`` is
    ``vec(T_j(L_r) X T_k(L_c))``. The operators may be dense or sparse."""
    X = ad.as_tensor(X)
    m, n = X.shape
    feats = np.empty((P * P, m, n))
    for j, row in enumerate(cheb_basis_2d(L_r, L_c, X.data, P - 1)):
        for k, B in enumerate(row):
            feats[j * P + k] = B
    out = np.ascontiguousarray(feats.reshape(P * P, m * n).T)

    def backward(g):
        blocks = np.ascontiguousarray(g.T).reshape(P, P, m, n)
        return (cheb_synthesis_2d(L_r, L_c, blocks),)

    return ad.custom_op(out, (X,), backward, "cheb_features_2d")


def mgcnn_forward(layer: MGCNNLayer, L_r: np.ndarray, L_c: np.ndarray, X) -> Tensor:
    """Multi-graph Chebyshev convolution of an ``m x n x q_in`` input.

    A 2-D input is taken as a single channel. Returns ``m x n x q_out``.
    """
    X = ad.as_tensor(X)
    q_out, q_in, P, _ = layer.theta.shape
    if X.ndim == 2:
        X = ad.reshape(X, X.shape + (1,))
    m, n, c = X.shape
    if c != q_in:
        raise ValueError(f"layer expects {q_in} input channels, got {c}")
    if L_r.shape != (m, m) or L_c.shape != (n, n):
        raise ValueError(f"operators {L_r.shape}, {L_c.shape} do not match input {X.shape}")
    if q_in == 1:
        basis = cheb_features_2d(L_r, L_c, ad.reshape(X, (m, n)), P)
    else:
        basis = ad.concat([cheb_features_2d(L_r, L_c, X[:, :, l], P) for l in range(q_in)], axis=1)
    W = ad.reshape(ad.transpose(layer.theta, (1, 2, 3, 0)), (q_in * P * P, q_out))
    out = _ACTIVATIONS[layer.activation](basis @ W + layer.bias)
    return ad.reshape(out, (m, n, q_out))


def gcnn_forward(layer: GCNNLayer, L: np.ndarray, F) -> Tensor:
    """Chebyshev convolution of an ``n x q_in`` signal on one graph."""
    F = ad.as_tensor(F)
    q_out, q_in, P = layer.theta.shape
    if F.ndim != 2 or F.shape[1] != q_in:
        raise ValueError(f"layer expects (n, {q_in}) input, got {F.shape}")
    if L.shape != (F.shape[0], F.shape[0]):
        raise ValueError(f"operator {L.shape} does not match input {F.shape}")
    basis = ad.concat(cheb_basis_left(L, F, P - 1), axis=1)
    W = ad.reshape(ad.transpose(layer.theta, (2, 1, 0)), (P * q_in, q_out))
    return _ACTIVATIONS[layer.activation](basis @ W + layer.bias)


def lstm_zero_state(units: int, hidden: int) -> np.ndarray:
    """Packed ``[h | c]`` LSTM state of zeros, ``units x 2 hidden``."""
    return np.zeros((units, 2 * hidden))


def lstm_step(params: LSTMParams, x, state):
    """One LSTM step for a batch of independent units sharing ``params``.

    ``state`` is the packed ``[h | c]`` matrix (``units x 2 hidden``) or a
    pair ``(h, c)``. Returns ``(h', state')`` with ``state'`` packed.
    The cell is a single tape primitive with a hand-written backward.
    """
    x = ad.as_tensor(x)
    H = params.hidden
    if isinstance(state, tuple):
        state = ad.concat(list(state), axis=1)
    S = ad.as_tensor(state)
    q = x.shape[1]
    if params.W.shape[0] != q + H:
        raise ValueError(f"LSTM expects {params.W.shape[0] - H} input features, got {q}")
    if S.shape != (x.shape[0], 2 * H):
        raise ValueError(f"LSTM state {S.shape} does not match {x.shape[0]} units of width {H}")
    W, b = params.W, params.b
    xh = np.concatenate([x.data, S.data[:, :H]], axis=1)
    # column-major gate matrix: each gate block is contiguous, which keeps
    # the elementwise work off strided column slices
    z = (W.data.T @ xh.T).T
    z += b.data
    # sigmoid(x) = (1 + tanh(x / 2)) / 2, so one tanh pass covers all gates
    z[:, : 3 * H] *= 0.5
    a = np.tanh(z)
    c = S.data[:, H:]
    out = np.empty((x.shape[0], 2 * H), order="F")
    lstm_cell_combine(a, c, out[:, H:])
    gates, g = a[:, : 3 * H], a[:, 3 * H :]
    o = gates[:, 2 * H :]
    tc = np.tanh(out[:, H:])
    np.multiply(o, tc, out=out[:, :H])

    def backward(grad):
        dz = np.empty_like(a, order="F")
        dS = np.empty_like(S.data, order="F")
        lstm_cell_grad(grad[:, :H], grad[:, H:], gates, g, c, tc, dz, dS[:, H:])
        dxh = dz @ W.data.T
        dS[:, :H] = dxh[:, q:]
        return dxh[:, :q], dS, xh.T @ dz, dz.sum(axis=0)

    new_state = ad.custom_op(out, (x, S, W, b), backward, "lstm_cell")
    return new_state[:, :H], new_state


def project(proj: OutputProjection, h) -> Tensor:
    return h @ proj.W + proj.b


def _new_lstm(rng, q_in: int, hidden: int) -> LSTMParams:
    W = glorot(rng, (q_in + hidden, 4 * hidden), q_in + hidden, 4 * hidden)
    return LSTMParams(ad.parameter(W), ad.parameter(np.zeros(4 * hidden)))


def _new_projection(rng, hidden: int, out_dim: int) -> OutputProjection:
    W = glorot(rng, (hidden, out_dim), hidden, out_dim)
    return OutputProjection(ad.parameter(W), ad.parameter(np.zeros(out_dim)))


class _Model:
    kind = ""

    def __init__(self, config: ModelConfig):
        self.config = config

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise ValueError(f"parameter names differ: {sorted(set(state) ^ set(params))}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def zero_(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0


class RGCNN(_Model):
    kind = "rgcnn"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        P = config.p + 1
        self.layers: list[MGCNNLayer] = []
        q_in = 1
        for _ in range(config.n_layers):
            theta = glorot(rng, (config.q, q_in, P, P), q_in * P * P, config.q)
            self.layers.append(MGCNNLayer(ad.parameter(theta), ad.parameter(np.zeros(config.q)), config.activation))
            q_in = config.q
        self.lstm = _new_lstm(rng, config.q, config.hidden)
        self.proj = _new_projection(rng, config.hidden, 1)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"mgcnn{k}.theta"] = layer.theta
            out[f"mgcnn{k}.bias"] = layer.bias
        out["lstm.W"], out["lstm.b"] = self.lstm.W, self.lstm.b
        out["proj.W"], out["proj.b"] = self.proj.W, self.proj.b
        return out


class SRGCNN(_Model):
    kind = "srgcnn"

    def __init__(self, config: ModelConfig, n_rows: int | None = None):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self.row = None if config.free_rows else self._branch(rng)
        self.col = self._branch(rng)
        self.free_W = None
        if config.free_rows:
            if n_rows is None:
                raise ValueError("free_rows needs the number of rows")
            self.free_W = ad.parameter(np.zeros((n_rows, config.rank)))

    def _branch(self, rng) -> dict:
        cfg = self.config
        P = cfg.p + 1
        layers = []
        q_in = cfg.rank
        for _ in range(cfg.n_layers):
            theta = glorot(rng, (cfg.q, q_in, P), q_in * P, cfg.q)
            layers.append(GCNNLayer(ad.parameter(theta), ad.parameter(np.zeros(cfg.q)), cfg.activation))
            q_in = cfg.q
        return {
            "layers": layers,
            "lstm": _new_lstm(rng, cfg.q, cfg.hidden),
            "proj": _new_projection(rng, cfg.hidden, cfg.rank),
        }

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for side in ("row", "col"):
            br = getattr(self, side)
            if br is None:
                continue
            for k, layer in enumerate(br["layers"]):
                out[f"{side}.gcnn{k}.theta"] = layer.theta
                out[f"{side}.gcnn{k}.bias"] = layer.bias
            out[f"{side}.lstm.W"], out[f"{side}.lstm.b"] = br["lstm"].W, br["lstm"].b
            out[f"{side}.proj.W"], out[f"{side}.proj.b"] = br["proj"].W, br["proj"].b
        if self.free_W is not None:
            out["row.free"] = self.free_W
        return out


def rgcnn_param_count(p: int, q: int, hidden: int, n_layers: int = 1) -> int:
    P = p + 1
    conv = q * 1 * P * P + q + (n_layers - 1) * (q * q * P * P + q)
    lstm = (q + hidden) * 4 * hidden + 4 * hidden
    return conv + lstm + hidden + 1


def srgcnn_param_count(p: int, q: int, hidden: int, rank: int, n_layers: int = 1) -> int:
    P = p + 1
    conv = q * rank * P + q + (n_layers - 1) * (q * q * P + q)
    lstm = (q + hidden) * 4 * hidden + 4 * hidden
    return 2 * (conv + lstm + hidden * rank + rank)


def rgcnn_diffuse(model: RGCNN, L_r: np.ndarray, L_c: np.ndarray, X0, T: int | None = None):
    """Run the full-matrix diffusion for ``T`` steps.

    Returns ``(X_T, trajectory)`` with ``X_T`` a tensor and ``trajectory`` the
    list of numpy snapshots ``X_0 .. X_T``.
    """
    T = model.config.T if T is None else T
    if T < 1:
        raise ValueError("T must be at least 1")
    X = ad.as_tensor(X0)
    m, n = X.shape
    H = model.config.hidden
    state = lstm_zero_state(m * n, H)
    traj = [X.data.copy()]
    for t in range(T):
        try:
            F = X
            for layer in model.layers:
                F = mgcnn_forward(layer, L_r, L_c, F)
            h, state = lstm_step(model.lstm, ad.reshape(F, (m * n, F.shape[2])), state)
            dX = ad.reshape(project(model.proj, h), (m, n))
            X = X + dX
        except ad.NonFiniteError as exc:
            raise DiffusionError(f"diffusion step {t}: {exc}") from exc
        traj.append(X.data.copy())
    return X, traj


def _branch_step(branch: dict, L: np.ndarray, F0: Tensor, state):
    F = F0
    for layer in branch["layers"]:
        F = gcnn_forward(layer, L, F)
    h, state = lstm_step(branch["lstm"], F, state)
    return F0 + project(branch["proj"], h), state


def srgcnn_diffuse(model: SRGCNN, L_r: np.ndarray | None, L_c: np.ndarray, W0, H0, T: int | None = None):
    """Run the factorized diffusion; returns ``(W_T, H_T, trajectory)``.

    ``trajectory`` holds numpy pairs ``(W_t, H_t)``. With ``free_rows`` the
    row factor is the learned parameter and ``W0``/``L_r`` are ignored.
    """
    T = model.config.T if T is None else T
    if T < 1:
        raise ValueError("T must be at least 1")
    H = model.config.hidden
    Hf = ad.as_tensor(H0)
    Wf = model.free_W if model.free_W is not None else ad.as_tensor(W0)
    if Hf.shape[1] != model.config.rank or Wf.shape[1] != model.config.rank:
        raise ValueError("factor width must equal the model rank")
    col_state = lstm_zero_state(Hf.shape[0], H)
    row_state = lstm_zero_state(Wf.shape[0], H)
    traj = [(Wf.data.copy(), Hf.data.copy())]
    for t in range(T):
        try:
            Hf, col_state = _branch_step(model.col, L_c, Hf, col_state)
            if model.row is not None:
                Wf, row_state = _branch_step(model.row, L_r, Wf, row_state)
        except ad.NonFiniteError as exc:
            raise DiffusionError(f"diffusion step {t}: {exc}") from exc
        traj.append((Wf.data.copy(), Hf.data.copy()))
    return Wf, Hf, traj


def initial_matrix(Y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Observed values in place, zeros elsewhere."""
    return np.where(mask, Y, 0.0)


def initial_factors(Y: np.ndarray, mask: np.ndarray, rank: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank-``rank`` truncated SVD of the zero-filled matrix, split as U S^1/2, V S^1/2."""
    U, s, Vt = np.linalg.svd(initial_matrix(Y, mask), full_matrices=False)
    r = min(rank, len(s))
    W = np.zeros((Y.shape[0], rank))
    Hm = np.zeros((Y.shape[1], rank))
    root = np.sqrt(s[:r])
    W[:, :r] = U[:, :r] * root
    Hm[:, :r] = Vt[:r].T * root
    return W, Hm


def build_model(kind: str, config: ModelConfig, n_rows: int | None = None) -> _Model:
    if kind == "rgcnn":
        return RGCNN(config)
    if kind == "srgcnn":
        return SRGCNN(config, n_rows=n_rows)
    raise ValueError(f"unknown model kind {kind!r}")


def save_checkpoint(model: _Model, path, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "kind": model.kind,
        "config": asdict(model.config),
        "seed": model.config.seed,
        "params": {
            k: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
            for k, p in model.named_parameters().items()
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path) -> _Model:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an mgmc checkpoint")
    config = ModelConfig(**doc["config"])
    params = doc["params"]
    n_rows = params["row.free"]["shape"][0] if "row.free" in params else None
    model = build_model(doc["kind"], config, n_rows=n_rows)
    model.load_state_dict({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in params.items()})
    return model
