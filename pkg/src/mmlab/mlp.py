"""Feed-forward Q-network with hand-written backpropagation.

Parameters live in one flat float64 vector (per layer: row-major ``W`` of
shape ``(out, in)`` then ``b``), which keeps SGD, soft updates and the
compiled forward pass trivial.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BadCheckpoint, DimensionMismatch, EmptyBatch, ShapeMismatch
from .kernels import NetSpec

N_FEATURES = 5
N_ACTIONS = 4
DEFAULT_HIDDEN = (64, 64, 64)
SCHEMA_VERSION = 1


# Reflecting prices about the mid swaps buyers and sellers: imbalance,
# inventory and inventory-value change flip sign, AN and NB trade places.
MIRROR_SIGN = np.array([-1.0, 1.0, -1.0, 1.0, -1.0])
MIRROR_ACTION = np.array([0, 2, 1, 3], dtype=np.int64)


def n_params(dims) -> int:
    return sum(dims[k] * dims[k + 1] + dims[k + 1] for k in range(len(dims) - 1))


@dataclass
class MLPParams:
    dims: tuple[int, ...]
    theta: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ShapeMismatch(f"bad layer dims {self.dims}")
        if self.theta.shape != (n_params(self.dims),):
            raise ShapeMismatch(
                f"dims {self.dims} need {n_params(self.dims)} parameters, got {self.theta.shape}")

    @classmethod
    def zeros(cls, dims=(N_FEATURES, *DEFAULT_HIDDEN, N_ACTIONS)) -> "MLPParams":
        return cls(dims, np.zeros(n_params(dims)))

    @classmethod
    def init(cls, dims=(N_FEATURES, *DEFAULT_HIDDEN, N_ACTIONS),
             rng: np.random.Generator | int = 0) -> "MLPParams":
        """He-scaled normal weights, zero biases; the output layer is shrunk by 10."""
        rng = np.random.default_rng(rng)
        parts = []
        for k in range(len(dims) - 1):
            scale = np.sqrt(2.0 / dims[k]) * (0.1 if k == len(dims) - 2 else 1.0)
            parts.append(rng.standard_normal(dims[k] * dims[k + 1]) * scale)
            parts.append(np.zeros(dims[k + 1]))
        return cls(dims, np.concatenate(parts))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out, off = [], 0
        for k in range(len(self.dims) - 1):
            n_in, n_out = self.dims[k], self.dims[k + 1]
            W = self.theta[off:off + n_in * n_out].reshape(n_out, n_in)
            off += n_in * n_out
            out.append((W, self.theta[off:off + n_out]))
            off += n_out
        return out

    def copy(self) -> "MLPParams":
        return MLPParams(self.dims, self.theta.copy())

    def net(self, mu=None, sd=None) -> NetSpec:
        return NetSpec.build(self.theta, self.dims, mu, sd)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


class Batch(NamedTuple):
    """Stacked transitions; states are already standardised."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.a)


def _check_input(params: MLPParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.dims[0]:
        raise DimensionMismatch(f"network takes {params.dims[0]} inputs, got {X.shape[-1]}")
    return X


def forward(params: MLPParams, s, symmetric: bool = False) -> np.ndarray:
    """Q-vector for one standardised state (or a ``(B, 5)`` stack).

    With ``symmetric`` the network is read as the reflection-invariant
    ``(Q(s)[a] + Q(Ms)[sigma(a)]) / 2``.
    """
    X = _check_input(params, s)
    if symmetric:
        q1 = forward(params, X)
        q2 = forward(params, X * MIRROR_SIGN)
        return 0.5 * (q1 + q2[..., MIRROR_ACTION])
    h = X
    layers = params.layers()
    for k, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def _forward_cached(params: MLPParams, X: np.ndarray):
    acts = [X]
    pre = []
    layers = params.layers()
    h = X
    for k, (W, b) in enumerate(layers):
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < len(layers) - 1 else z
        acts.append(h)
    return h, acts, pre


def symmetric_expand(params: MLPParams) -> MLPParams:
    """Plain MLP of twice the hidden width computing the symmetric Q-function.

    The two halves of every hidden layer run the network on ``s`` and on the
    reflected state; the output layer averages them with the sell and buy
    actions exchanged. Used so the kernels need only one forward pass.
    """
    layers = params.layers()
    parts = []
    for k, (W, b) in enumerate(layers):
        if k == 0:
            W2 = np.vstack([W, W * MIRROR_SIGN])
            b2 = np.concatenate([b, b])
        elif k < len(layers) - 1:
            Z = np.zeros_like(W)
            W2 = np.block([[W, Z], [Z, W]])
            b2 = np.concatenate([b, b])
        else:
            W2 = 0.5 * np.hstack([W, W[MIRROR_ACTION]])
            b2 = 0.5 * (b + b[MIRROR_ACTION])
        parts += [W2.ravel(), b2]
    dims = (params.dims[0], *(2 * d for d in params.dims[1:-1]), params.dims[-1])
    return MLPParams(dims, np.concatenate(parts))


def td_targets(target_params: MLPParams, batch: Batch, gamma: float,
               symmetric: bool = False) -> np.ndarray:
    q_next = forward(target_params, batch.s2, symmetric)
    boot = np.where(np.asarray(batch.terminal, bool), 0.0, q_next.max(axis=1))
    return np.asarray(batch.r, float) + gamma * boot


def td_loss_and_grad(params: MLPParams, target_params: MLPParams, batch: Batch, gamma: float,
                     symmetric: bool = False):
    """Mean squared TD error and its gradient w.r.t. ``params``.

    The bootstrap target ``r + gamma * max_a' Q_target(s', a')`` (just ``r``
    on terminal transitions) is a constant: no gradient flows into
    ``target_params``. ``symmetric`` trains the reflection-invariant
    Q-function of :func:`forward`.
    """
    B = len(batch)
    if B == 0:
        raise EmptyBatch("empty batch")
    X = _check_input(params, batch.s)
    y = td_targets(target_params, batch, gamma, symmetric)
    a = np.asarray(batch.a, dtype=np.int64)
    rows = np.arange(B)
    if symmetric:
        q, acts, pre = _forward_cached(params, np.vstack([X, X * MIRROR_SIGN]))
        err = 0.5 * (q[rows, a] + q[B + rows, MIRROR_ACTION[a]]) - y
        dz = np.zeros_like(q)
        dz[rows, a] = err / B
        dz[B + rows, MIRROR_ACTION[a]] = err / B
    else:
        q, acts, pre = _forward_cached(params, X)
        err = q[rows, a] - y
        dz = np.zeros_like(q)
        dz[rows, a] = 2.0 * err / B
    loss = float(np.mean(err ** 2))
    return loss, MLPParams(params.dims, _backprop(params, acts, pre, dz))


def _backprop(params: MLPParams, acts, pre, dz) -> np.ndarray:
    grad = np.empty_like(params.theta)
    layers = params.layers()
    offsets = np.cumsum([0] + [W.size + b.size for W, b in layers])
    for k in range(len(layers) - 1, -1, -1):
        W, b = layers[k]
        o = offsets[k]
        grad[o:o + W.size] = (dz.T @ acts[k]).ravel()
        grad[o + W.size:o + W.size + b.size] = dz.sum(axis=0)
        if k > 0:
            dz = (dz @ W) * (pre[k - 1] > 0)
    return grad


def sgd_apply(params: MLPParams, gradients: MLPParams, alpha: float) -> MLPParams:
    """Plain gradient step ``theta - alpha * grad``."""
    if params.dims != gradients.dims:
        raise ShapeMismatch(f"{params.dims} vs {gradients.dims}")
    return MLPParams(params.dims, params.theta - alpha * gradients.theta)


def soft_update(target_params: MLPParams, value_params: MLPParams, tau: float) -> MLPParams:
    """Polyak average ``(1 - tau) * target + tau * value``."""
    if target_params.dims != value_params.dims:
        raise ShapeMismatch(f"{target_params.dims} vs {value_params.dims}")
    if tau == 1.0:
        return value_params.copy()
    return MLPParams(target_params.dims,
                     (1.0 - tau) * target_params.theta + tau * value_params.theta)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Immutable-by-convention network snapshot plus the input statistics it expects."""

    params: MLPParams
    mu: np.ndarray
    sd: np.ndarray
    step: int = 0
    metrics: dict = field(default_factory=dict)
    symmetric: bool = False

    def net(self) -> NetSpec:
        params = symmetric_expand(self.params) if self.symmetric else self.params
        return params.net(self.mu, self.sd)

    def standardise(self, states) -> np.ndarray:
        return (np.asarray(states, float) - self.mu) / self.sd

    def q_values(self, state) -> np.ndarray:
        return forward(self.params, self.standardise(state), self.symmetric)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dims": list(self.params.dims),
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params.layers()],
            "norm": {"mean": np.asarray(self.mu).tolist(), "std": np.asarray(self.sd).tolist()},
            "step": int(self.step),
            "symmetric": bool(self.symmetric),
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        try:
            if d["schema_version"] != SCHEMA_VERSION:
                raise BadCheckpoint(f"unsupported schema version {d['schema_version']}")
            dims = tuple(int(x) for x in d["dims"])
            parts = []
            for layer in d["layers"]:
                parts.append(np.asarray(layer["W"], float).ravel())
                parts.append(np.asarray(layer["b"], float))
            params = MLPParams(dims, np.concatenate(parts))
            mu = np.asarray(d["norm"]["mean"], float)
            sd = np.asarray(d["norm"]["std"], float)
            if mu.shape != (dims[0],) or sd.shape != (dims[0],) or np.any(sd <= 0):
                raise BadCheckpoint("normalisation statistics do not match the input layer")
            if not params.all_finite():
                raise BadCheckpoint("non-finite parameters")
            return cls(params, mu, sd, int(d.get("step", 0)), dict(d.get("metrics", {})),
                       bool(d.get("symmetric", False)))
        except BadCheckpoint:
            raise
        except (KeyError, TypeError, ValueError, ShapeMismatch) as exc:
            raise BadCheckpoint(f"malformed checkpoint: {exc}") from exc

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), sort_keys=True))
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(d)
