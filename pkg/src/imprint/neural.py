"""Dense feed-forward regression stack, written on plain numpy.

Fixed architecture: 6 rectifier hidden layers of 32 neurons, identity
output, 64-bit floats throughout.  Inputs are z-scored and targets
min-max scaled with statistics frozen from the training split; the
training loss is mean squared error in the scaled target space, with
mean absolute percentage error tracked as the early-stopping metric.

Everything is deterministic given the seed: weight init, shuffling,
and summation order are all fixed, so retraining reproduces a model
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

HIDDEN_WIDTH = 32
HIDDEN_DEPTH = 6
MODEL_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Raised when training encounters a non-finite loss."""


class ModelFormatError(ValueError):
    """Raised when a stored model cannot be loaded."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 2000
    patience: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError("learning rate must be positive")


@dataclass
class Mlp:
    dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray
    target_lo: np.ndarray
    target_hi: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def d_in(self) -> int:
        return self.dims[0]

    @property
    def d_out(self) -> int:
        return self.dims[-1]


def init_mlp(d_in: int, d_out: int, seed: int) -> Mlp:
    """Fresh network with fan-in-scaled uniform weights, zero biases,
    and identity scaling until training freezes real statistics."""
    dims = [d_in] + [HIDDEN_WIDTH] * HIDDEN_DEPTH + [d_out]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(a)
        weights.append(rng.uniform(-bound, bound, size=(b, a)))
        biases.append(np.zeros(b))
    return Mlp(dims, weights, biases,
               np.zeros(d_in), np.ones(d_in),
               np.zeros(d_out), np.ones(d_out),
               {"seed": seed})


def _copy_model(m: Mlp) -> Mlp:
    return Mlp(list(m.dims),
               [w.copy() for w in m.weights],
               [b.copy() for b in m.biases],
               m.input_mean.copy(), m.input_std.copy(),
               m.target_lo.copy(), m.target_hi.copy(),
               dict(m.meta))


def _forward_scaled(m: Mlp, X: np.ndarray) -> Tuple[np.ndarray, list]:
    """Batch forward in scaled space; returns output and the per-layer
    pre/post activations needed for the backward pass."""
    Z = (X - m.input_mean) / m.input_std
    acts = [Z]
    h = Z
    last = len(m.weights) - 1
    for i, (W, b) in enumerate(zip(m.weights, m.biases)):
        pre = h @ W.T + b
        h = pre if i == last else np.maximum(pre, 0.0)
        acts.append(h)
    return h, acts


def forward(m: Mlp, x: np.ndarray) -> np.ndarray:
    """Predict physical-unit targets for one feature vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != m.d_in:
        raise ValueError(f"expected {m.d_in} inputs, got {X.shape[1]}")
    out, _ = _forward_scaled(m, X)
    Y = m.target_lo + out * (m.target_hi - m.target_lo)
    return Y[0] if single else Y


def _scale_targets(m: Mlp, Y: np.ndarray) -> np.ndarray:
    return (Y - m.target_lo) / (m.target_hi - m.target_lo)


def loss_mse(m: Mlp, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean squared error in scaled target space (the training loss)."""
    out, _ = _forward_scaled(m, X)
    d = out - _scale_targets(m, Y)
    return float(np.mean(d * d))


def backprop_grad(m: Mlp, X: np.ndarray, Y: np.ndarray):
    """Exact gradients of the batch training loss w.r.t. all weights
    and biases.  Targets are given in physical units."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    out, acts = _forward_scaled(m, X)
    Ys = _scale_targets(m, Y)
    n_terms = out.size
    delta = 2.0 * (out - Ys) / n_terms

    gW = [None] * len(m.weights)
    gb = [None] * len(m.biases)
    for i in range(len(m.weights) - 1, -1, -1):
        gW[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i]) * (acts[i] > 0.0)
    return gW, gb


def mape(targets: np.ndarray, predictions: np.ndarray) -> float:
    """Mean absolute percentage error, as a fraction (0.1 = 10%)."""
    T = np.asarray(targets, dtype=float)
    P = np.asarray(predictions, dtype=float)
    if T.shape != P.shape:
        raise ValueError("targets and predictions must have equal shape")
    if np.any(T == 0.0):
        raise ValueError("zero target makes percentage error undefined")
    return float(np.mean(np.abs(T - P) / np.abs(T)))


def mape_columns(targets: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """Per-column MAPE for (n, k)-shaped target/prediction matrices."""
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    P = np.atleast_2d(np.asarray(predictions, dtype=float))
    if T.shape != P.shape:
        raise ValueError("targets and predictions must have equal shape")
    if np.any(T == 0.0):
        raise ValueError("zero target makes percentage error undefined")
    return np.mean(np.abs(T - P) / np.abs(T), axis=0)


def _dataset_hash(X: np.ndarray, Y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype=float).tobytes())
    h.update(np.ascontiguousarray(Y, dtype=float).tobytes())
    return h.hexdigest()


def train_adam(m: Mlp, dataset, cfg: TrainConfig):
    """Train a copy of m on ((X_train, Y_train), (X_val, Y_val)).

    Scaling statistics are frozen from the training split before the
    first step.  Early stopping tracks validation MAPE with the
    configured patience and the best-validation weights are restored.
    Returns (trained model, history dict).
    """
    (X_tr, Y_tr), (X_val, Y_val) = dataset
    X_tr = np.asarray(X_tr, dtype=float)
    Y_tr = np.asarray(Y_tr, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    Y_val = np.asarray(Y_val, dtype=float)
    if X_tr.shape[0] == 0 or X_val.shape[0] == 0:
        raise ValueError("training and validation splits must be non-empty")

    history = {"train_loss": [], "val_loss": [], "train_mape": [], "val_mape": []}
    if cfg.max_epochs == 0:
        return _copy_model(m), history

    net = _copy_model(m)
    net.input_mean = X_tr.mean(axis=0)
    net.input_std = np.maximum(X_tr.std(axis=0), 1e-12)
    net.target_lo = Y_tr.min(axis=0)
    net.target_hi = np.maximum(Y_tr.max(axis=0), net.target_lo + 1e-12)
    net.meta = {
        "seed": cfg.seed,
        "dataset_hash": _dataset_hash(X_tr, Y_tr),
        "created": f"adam-seed{cfg.seed}-n{X_tr.shape[0]}",
    }

    mW = [np.zeros_like(w) for w in net.weights]
    vW = [np.zeros_like(w) for w in net.weights]
    mB = [np.zeros_like(b) for b in net.biases]
    vB = [np.zeros_like(b) for b in net.biases]
    t = 0
    rng = np.random.default_rng(cfg.seed)
    n = X_tr.shape[0]

    best_mape = np.inf
    best_state = None
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gW, gb = backprop_grad(net, X_tr[idx], Y_tr[idx])
            t += 1
            c1 = 1.0 - ADAM_BETA1**t
            c2 = 1.0 - ADAM_BETA2**t
            for i in range(len(net.weights)):
                mW[i] = ADAM_BETA1 * mW[i] + (1.0 - ADAM_BETA1) * gW[i]
                vW[i] = ADAM_BETA2 * vW[i] + (1.0 - ADAM_BETA2) * gW[i] ** 2
                net.weights[i] -= cfg.lr * (mW[i] / c1) / (np.sqrt(vW[i] / c2) + ADAM_EPS)
                mB[i] = ADAM_BETA1 * mB[i] + (1.0 - ADAM_BETA1) * gb[i]
                vB[i] = ADAM_BETA2 * vB[i] + (1.0 - ADAM_BETA2) * gb[i] ** 2
                net.biases[i] -= cfg.lr * (mB[i] / c1) / (np.sqrt(vB[i] / c2) + ADAM_EPS)

        tr_loss = loss_mse(net, X_tr, Y_tr)
        va_loss = loss_mse(net, X_val, Y_val)
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        tr_mape = mape(Y_tr, forward(net, X_tr))
        va_mape = mape(Y_val, forward(net, X_val))
        history["train_loss"].append(tr_loss)
        history["val_loss"].append(va_loss)
        history["train_mape"].append(tr_mape)
        history["val_mape"].append(va_mape)

        if va_mape < best_mape:
            best_mape = va_mape
            best_state = ([w.copy() for w in net.weights],
                          [b.copy() for b in net.biases])
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    if best_state is not None:
        net.weights, net.biases = best_state
    return net, history


# ---------------------------------------------------------------------------
# Serialization

def save_model(m: Mlp, path: str) -> None:
    doc = {
        "version": MODEL_VERSION,
        "dims": list(m.dims),
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "input_stats": {"mean": m.input_mean.tolist(), "std": m.input_std.tolist()},
        "target_box": {"lo": m.target_lo.tolist(), "hi": m.target_hi.tolist()},
        "meta": {
            **{k: v for k, v in m.meta.items()
               if isinstance(v, (str, int, float, bool, list, dict,
                                 type(None)))},
            "created": str(m.meta.get("created", "")),
            "seed": m.meta.get("seed"),
            "dataset_hash": m.meta.get("dataset_hash", ""),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path: str) -> Mlp:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError(f"not a model file: {path}")
    if doc["version"] != MODEL_VERSION:
        raise ModelFormatError(
            f"model version {doc['version']} unsupported (expected {MODEL_VERSION})")
    try:
        return Mlp(
            [int(d) for d in doc["dims"]],
            [np.array(w, dtype=float) for w in doc["weights"]],
            [np.array(b, dtype=float) for b in doc["biases"]],
            np.array(doc["input_stats"]["mean"], dtype=float),
            np.array(doc["input_stats"]["std"], dtype=float),
            np.array(doc["target_box"]["lo"], dtype=float),
            np.array(doc["target_box"]["hi"], dtype=float),
            dict(doc["meta"]),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file {path}: {exc}") from exc
