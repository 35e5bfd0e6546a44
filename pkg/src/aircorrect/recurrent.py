"""LSTM and GRU cells, the two-layer cascade and its backpropagation through time.

Gate weights act on the concatenation ``[h_prev, x_t]``. Weights for all gates
of a cell are stacked row-wise in a single matrix so that one matrix product
serves every gate; the per-gate blocks are exposed as views.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ConsistencyError, DimensionError
from .optim import TrainingConfig, fit_minibatch


def sigmoid(z):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def glorot(rng, fan_out, fan_in, rows=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(rows or fan_out, fan_in))


# ----------------------------------------------------------------------------
# Single cells
# ----------------------------------------------------------------------------

@dataclass
class LSTMCellParams:
    """Stacked gate weights; row blocks are forget, input, candidate, output."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] % 4 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"inconsistent LSTM shapes W{self.W.shape} b{self.b.shape}")
        if self.W.shape[1] <= self.hidden:
            raise DimensionError("LSTM weight matrix has no input columns")

    @classmethod
    def from_gates(cls, W_f, W_i, W_C, W_o, b_f, b_i, b_C, b_o):
        return cls(np.vstack([W_f, W_i, W_C, W_o]), np.concatenate([b_f, b_i, b_C, b_o]))

    @classmethod
    def zeros(cls, hidden, n_input):
        return cls(np.zeros((4 * hidden, hidden + n_input)), np.zeros(4 * hidden))

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def n_input(self) -> int:
        return self.W.shape[1] - self.hidden

    def gate(self, k):
        h = self.hidden
        return self.W[k * h:(k + 1) * h], self.b[k * h:(k + 1) * h]

    W_f = property(lambda self: self.gate(0)[0])
    W_i = property(lambda self: self.gate(1)[0])
    W_C = property(lambda self: self.gate(2)[0])
    W_o = property(lambda self: self.gate(3)[0])
    b_f = property(lambda self: self.gate(0)[1])
    b_i = property(lambda self: self.gate(1)[1])
    b_C = property(lambda self: self.gate(2)[1])
    b_o = property(lambda self: self.gate(3)[1])


@dataclass
class GRUCellParams:
    """Stacked gate weights; row blocks are update, reset, candidate."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] % 3 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"inconsistent GRU shapes W{self.W.shape} b{self.b.shape}")

    @classmethod
    def zeros(cls, hidden, n_input):
        return cls(np.zeros((3 * hidden, hidden + n_input)), np.zeros(3 * hidden))

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 3

    @property
    def n_input(self) -> int:
        return self.W.shape[1] - self.hidden


@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray | None = None
    f: np.ndarray | None = None
    i: np.ndarray | None = None
    o: np.ndarray | None = None
    candidate: np.ndarray | None = None


def _check_step(hidden, n_input, x, h_prev):
    if x.shape[-1] != n_input or h_prev.shape[-1] != hidden:
        raise DimensionError(
            f"expected input {n_input} / hidden {hidden}, got {x.shape[-1]} / {h_prev.shape[-1]}"
        )


def lstm_cell_step(params: LSTMCellParams, x_t, h_prev, c_prev):
    """One LSTM step; returns ``(h_t, c_t, RecurrentState)`` with gates cached."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    _check_step(params.hidden, params.n_input, x_t, h_prev)
    if c_prev.shape != h_prev.shape:
        raise DimensionError("cell state and hidden state shapes differ")
    H = params.hidden
    z = np.concatenate([h_prev, x_t], axis=-1) @ params.W.T + params.b
    f = sigmoid(z[..., :H])
    i = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c, RecurrentState(h=h, c=c, f=f, i=i, o=o, candidate=g)


def gru_cell_step(params: GRUCellParams, x_t, h_prev):
    """One GRU step: ``h_t = z * h_prev + (1 - z) * tanh(W_n [r * h_prev, x] + b_n)``."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    _check_step(params.hidden, params.n_input, x_t, h_prev)
    H = params.hidden
    a = np.concatenate([h_prev, x_t], axis=-1)
    zr = sigmoid(a @ params.W[:2 * H].T + params.b[:2 * H])
    z, r = zr[..., :H], zr[..., H:]
    n = np.tanh(np.concatenate([r * h_prev, x_t], axis=-1) @ params.W[2 * H:].T + params.b[2 * H:])
    return z * h_prev + (1.0 - z) * n


# ----------------------------------------------------------------------------
# Sequence layers (batched)
# ----------------------------------------------------------------------------

def lstm_sequence(W, b, X):
    """Run an LSTM over ``X`` of shape (batch, steps, inputs); returns all hidden states."""
    B, T, _ = X.shape
    H = W.shape[0] // 4
    WhT = np.ascontiguousarray(W[:, :H].T)
    zx = X @ W[:, H:].T + b
    dt = zx.dtype
    h = np.zeros((B, H), dt)
    c = np.zeros((B, H), dt)
    hs = np.empty((B, T, H), dt)
    gates = np.empty((T, B, 4 * H), dt)
    cs = np.empty((T + 1, B, H), dt)
    tcs = np.empty((T, B, H), dt)
    hprev = np.empty((T, B, H), dt)
    cs[0] = c
    for t in range(T):
        hprev[t] = h
        z = zx[:, t] + h @ WhT
        act = gates[t]
        act[:, :2 * H] = sigmoid(z[:, :2 * H])
        act[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        act[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        c = act[:, :H] * c + act[:, H:2 * H] * act[:, 2 * H:3 * H]
        cs[t + 1] = c
        tcs[t] = np.tanh(c)
        h = act[:, 3 * H:] * tcs[t]
        hs[:, t] = h
    return hs, (X, gates, cs, tcs, hprev)


def lstm_sequence_backward(W, cache, dhs):
    X, gates, cs, tcs, hprev = cache
    B, T, _ = X.shape
    H = W.shape[0] // 4
    Wh = np.ascontiguousarray(W[:, :H])
    dt = gates.dtype
    dz_all = np.empty((T, B, 4 * H), dt)
    dh_next = np.zeros((B, H), dt)
    dc_next = np.zeros((B, H), dt)
    for t in reversed(range(T)):
        act = gates[t]
        f, i, g, o = act[:, :H], act[:, H:2 * H], act[:, 2 * H:3 * H], act[:, 3 * H:]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tcs[t] ** 2)
        dz = dz_all[t]
        dz[:, :H] = dc * cs[t] * f * (1.0 - f)
        dz[:, H:2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tcs[t] * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ Wh
    flat = dz_all.reshape(T * B, 4 * H)
    a = np.concatenate([hprev, X.transpose(1, 0, 2)], axis=2).reshape(T * B, -1)
    dW = flat.T @ a
    db = flat.sum(axis=0)
    dX = (dz_all @ W[:, H:]).transpose(1, 0, 2)
    return dW, db, dX


def gru_sequence(W, b, X):
    B, T, _ = X.shape
    H = W.shape[0] // 3
    Wzr_hT = np.ascontiguousarray(W[:2 * H, :H].T)
    Wn_hT = np.ascontiguousarray(W[2 * H:, :H].T)
    zx = X @ W[:, H:].T + b
    dt = zx.dtype
    h = np.zeros((B, H), dt)
    hs = np.empty((B, T, H), dt)
    zr_all = np.empty((T, B, 2 * H), dt)
    n_all = np.empty((T, B, H), dt)
    hprev = np.empty((T, B, H), dt)
    for t in range(T):
        hprev[t] = h
        zr = sigmoid(zx[:, t, :2 * H] + h @ Wzr_hT)
        zr_all[t] = zr
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(zx[:, t, 2 * H:] + (r * h) @ Wn_hT)
        n_all[t] = n
        h = z * h + (1.0 - z) * n
        hs[:, t] = h
    return hs, (X, zr_all, n_all, hprev)


def gru_sequence_backward(W, cache, dhs):
    X, zr_all, n_all, hprev = cache
    B, T, _ = X.shape
    H = W.shape[0] // 3
    Wzr_h = np.ascontiguousarray(W[:2 * H, :H])
    Wn_h = np.ascontiguousarray(W[2 * H:, :H])
    dt = n_all.dtype
    dzr_all = np.empty((T, B, 2 * H), dt)
    dn_all = np.empty((T, B, H), dt)
    dh_next = np.zeros((B, H), dt)
    for t in reversed(range(T)):
        zr, n, hp = zr_all[t], n_all[t], hprev[t]
        z, r = zr[:, :H], zr[:, H:]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z) * (1.0 - n * n)
        dn_all[t] = dn
        d_rh = dn @ Wn_h
        dzr = dzr_all[t]
        dzr[:, :H] = dh * (hp - n) * z * (1.0 - z)
        dzr[:, H:] = d_rh * hp * r * (1.0 - r)
        dh_next = dh * z + d_rh * r + dzr @ Wzr_h
    Xt = X.transpose(1, 0, 2)
    TB = T * B
    a_zr = np.concatenate([hprev, Xt], axis=2).reshape(TB, -1)
    a_n = np.concatenate([zr_all[:, :, H:] * hprev, Xt], axis=2).reshape(TB, -1)
    dW = np.empty_like(W)
    dW[:2 * H] = dzr_all.reshape(TB, 2 * H).T @ a_zr
    dW[2 * H:] = dn_all.reshape(TB, H).T @ a_n
    db = np.concatenate([dzr_all.reshape(TB, -1).sum(0), dn_all.reshape(TB, -1).sum(0)])
    dX = (dzr_all @ W[:2 * H, H:] + dn_all @ W[2 * H:, H:]).transpose(1, 0, 2)
    return dW, db, dX


_SEQUENCE = {
    "lstm": (lstm_sequence, lstm_sequence_backward, 4),
    "gru": (gru_sequence, gru_sequence_backward, 3),
}


# ----------------------------------------------------------------------------
# Cascade network
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CascadeConfig:
    """Two recurrent layers and a linear head.

    ``layout='univariate'`` feeds the feature vector as a sequence with one
    value per step; ``'multivariate'`` feeds it as a single step.
    ``wiring='hidden'`` passes the first layer's hidden sequence to the second
    layer; ``'predictions'`` first projects it to one value per step.
    """

    cell: str = "lstm"
    layer1_hidden: int = 50
    layer2_hidden: int = 100
    dropout_rate: float = 0.2
    layout: str = "univariate"
    wiring: str = "hidden"
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.cell not in _SEQUENCE:
            raise ConfigError(f"unknown cell {self.cell!r}; expected lstm or gru")
        if self.layer1_hidden < 1 or self.layer2_hidden < 1:
            raise ConfigError("hidden sizes must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.layout not in ("univariate", "multivariate"):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.wiring not in ("hidden", "predictions"):
            raise ConfigError(f"unknown wiring {self.wiring!r}")

    def to_dict(self):
        return asdict(self)


def dropout_mask(rng, shape, rate, dtype=float):
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``."""
    if rate == 0.0:
        return None
    return ((rng.random(shape) >= rate) / (1.0 - rate)).astype(dtype)


class CascadeNet:
    """Recurrent layer -> dropout -> recurrent layer (final state) -> dropout -> dense."""

    def __init__(self, config: CascadeConfig, n_features: int, seed: int = 0, feature_names=None):
        self.config = config
        self.n_features = int(n_features)
        self.feature_names = tuple(feature_names) if feature_names is not None else None
        rng = np.random.default_rng(seed)
        gates = _SEQUENCE[config.cell][2]
        n_in = 1 if config.layout == "univariate" else self.n_features
        H1, H2 = config.layer1_hidden, config.layer2_hidden
        l2_in = 1 if config.wiring == "predictions" else H1
        p = {
            "l1.W": glorot(rng, H1, H1 + n_in, rows=gates * H1),
            "l1.b": np.zeros(gates * H1),
            "l2.W": glorot(rng, H2, H2 + l2_in, rows=gates * H2),
            "l2.b": np.zeros(gates * H2),
        }
        if config.cell == "lstm":
            p["l1.b"][:H1] = 1.0
            p["l2.b"][:H2] = 1.0
        if config.wiring == "predictions":
            p["proj.W"] = glorot(rng, 1, H1)
            p["proj.b"] = np.zeros(1)
        p["head.W"] = glorot(rng, 1, H2)
        p["head.b"] = np.zeros(1)
        self.params = {k: v.astype(config.dtype) for k, v in p.items()}

    def as_sequence(self, inputs):
        inputs = np.asarray(inputs, dtype=self.config.dtype)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {inputs.shape[1]}")
        if self.config.layout == "univariate":
            return inputs[:, :, None]
        return inputs[:, None, :]

    def forward(self, inputs, training=False, rng=None):
        X = self.as_sequence(inputs)
        seq, _, _ = _SEQUENCE[self.config.cell]
        p, rate = self.params, self.config.dropout_rate
        h1, c1 = seq(p["l1.W"], p["l1.b"], X)
        m1 = dropout_mask(rng, h1.shape, rate, h1.dtype) if training else None
        h1d = h1 * m1 if m1 is not None else h1
        if self.config.wiring == "predictions":
            l2_in = h1d @ p["proj.W"].T + p["proj.b"]
        else:
            l2_in = h1d
        h2, c2 = seq(p["l2.W"], p["l2.b"], l2_in)
        last = h2[:, -1]
        m2 = dropout_mask(rng, last.shape, rate, last.dtype) if training else None
        lastd = last * m2 if m2 is not None else last
        y = lastd @ p["head.W"][0] + p["head.b"][0]
        return y, (c1, m1, h1d, c2, h2.shape, m2, lastd)

    def backward(self, cache, dy):
        c1, m1, h1d, c2, h2_shape, m2, lastd = cache
        _, back, _ = _SEQUENCE[self.config.cell]
        p = self.params
        g = {"head.W": (dy @ lastd)[None, :], "head.b": np.array([dy.sum()])}
        dlast = dy[:, None] * p["head.W"]
        if m2 is not None:
            dlast = dlast * m2
        dh2 = np.zeros(h2_shape, dlast.dtype)
        dh2[:, -1] = dlast
        g["l2.W"], g["l2.b"], d_in2 = back(p["l2.W"], c2, dh2)
        if self.config.wiring == "predictions":
            B, T, H1 = h1d.shape
            flat = d_in2.reshape(B * T, 1)
            g["proj.W"] = flat.T @ h1d.reshape(B * T, H1)
            g["proj.b"] = flat.sum(0)
            dh1 = d_in2 @ p["proj.W"]
        else:
            dh1 = d_in2
        if m1 is not None:
            dh1 = dh1 * m1
        g["l1.W"], g["l1.b"], _ = back(p["l1.W"], c1, dh1)
        return g

    def loss_and_grads(self, inputs, targets, rng=None, training=True):
        y, cache = self.forward(inputs, training=training, rng=rng)
        err = y - np.asarray(targets, dtype=y.dtype)
        loss = float(np.mean(err.astype(float) ** 2))
        return loss, self.backward(cache, 2.0 * err / len(err))

    def predict(self, inputs):
        inputs = np.asarray(inputs, dtype=float)
        if len(inputs) == 0:
            return np.zeros(0)
        return self.forward(inputs, training=False)[0].astype(float)


def cascade_forward(net: CascadeNet, sample, training=False, rng=None) -> float:
    """Scalar prediction for one feature vector."""
    y, _ = net.forward(np.asarray(sample, dtype=float)[None, :], training=training, rng=rng)
    return float(y[0])


def bptt_gradients(net: CascadeNet, inputs, targets, rng=None, training=False):
    """Exact mean-squared-error gradients for a batch (no clipping).

    With ``training=True`` dropout masks are drawn from ``rng``; reseeding the
    generator reproduces the same masks.
    """
    if len(targets) == 0:
        raise ConfigError("batch is empty")
    return net.loss_and_grads(inputs, targets, rng=rng, training=training)


def train_recurrent(net: CascadeNet, train, validation=None, config: TrainingConfig = TrainingConfig()):
    """Train on ``(inputs, targets)`` pairs; returns ``(net, history)``.

    ``train``/``validation`` may be WindowedDataset objects or tuples.
    """
    X, y = _unpack(train)
    if validation is not None:
        Xv, yv = _unpack(validation)
    else:
        Xv = yv = None
    names = getattr(train, "feature_names", None)
    if names is not None:
        net.feature_names = tuple(names)
    history = fit_minibatch(net, X, y, Xv, yv, config)
    return net, history


def predict(net: CascadeNet, dataset) -> np.ndarray:
    names = getattr(dataset, "feature_names", None)
    if names is not None and net.feature_names is not None and tuple(names) != net.feature_names:
        raise ConsistencyError("dataset features differ from the ones the network was trained on")
    X = dataset.inputs if hasattr(dataset, "inputs") else np.asarray(dataset, dtype=float)
    return net.predict(X)


def _unpack(data):
    if hasattr(data, "inputs"):
        return data.inputs, data.targets
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)
