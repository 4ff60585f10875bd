"""Expandable linear classification head trained with a focal loss.

Rows of the weight matrix are indexed by cluster id: the registry issues ids
0, 1, 2, ... and never deletes clusters, so row ``j`` is cluster ``j``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError

PROB_FLOOR = 1e-12
MAX_CE = -math.log(PROB_FLOOR)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 0.001
    gamma: float = 2.0
    theta2: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    tolerance: float = 1e-6
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be >= 0")
        if not 0 < self.theta2 <= 1:
            raise ConfigError("theta2 must be in (0, 1]")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


@dataclass
class LinearHead:
    weights: np.ndarray
    bias: np.ndarray
    # Adam state, kept so warm-started training resumes its moments.
    m_w: np.ndarray | None = None
    v_w: np.ndarray | None = None
    m_b: np.ndarray | None = None
    v_b: np.ndarray | None = None
    step: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DataError("head weights must be (L, d) with bias (L,)")
        if self.m_w is None:
            self.reset_optimizer()

    @property
    def L(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def reset_optimizer(self) -> None:
        self.m_w = np.zeros_like(self.weights)
        self.v_w = np.zeros_like(self.weights)
        self.m_b = np.zeros_like(self.bias)
        self.v_b = np.zeros_like(self.bias)
        self.step = 0

    def copy(self) -> "LinearHead":
        return LinearHead(
            self.weights.copy(), self.bias.copy(), self.m_w.copy(), self.v_w.copy(),
            self.m_b.copy(), self.v_b.copy(), self.step, dict(self.meta),
        )

    @classmethod
    def random(cls, L: int, d: int, seed) -> "LinearHead":
        rng = np.random.default_rng(seed)
        lim = 1.0 / math.sqrt(d)
        return cls(rng.uniform(-lim, lim, (L, d)), rng.uniform(-lim, lim, L))

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "d": self.d,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
            "optimizer": {
                "step": self.step,
                "m_w": self.m_w.ravel().tolist(),
                "v_w": self.v_w.ravel().tolist(),
                "m_b": self.m_b.tolist(),
                "v_b": self.v_b.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearHead":
        L, dim = int(d["L"]), int(d["d"])
        opt = d.get("optimizer") or {}
        shape = (L, dim)

        def mat(key):
            return None if key not in opt else np.asarray(opt[key], float).reshape(shape)

        head = cls(np.asarray(d["weights"], float).reshape(shape), np.asarray(d["bias"], float))
        if opt:
            head.m_w, head.v_w = mat("m_w"), mat("v_w")
            head.m_b, head.v_b = np.asarray(opt["m_b"], float), np.asarray(opt["v_b"], float)
            head.step = int(opt["step"])
        return head

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LinearHead":
        return cls.from_dict(json.loads(Path(path).read_text()))


def logits(head: LinearHead, x) -> np.ndarray:
    """``W x + b`` for a single vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != head.d:
        raise DataError(f"dimension mismatch: input {x.shape[-1]}, head {head.d}")
    return x @ head.weights.T + head.bias


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))


def mce(probs, target: int) -> float:
    """Cross-entropy of a one-hot target, with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[-1]:
        raise DataError(f"target {target} out of range for {probs.shape[-1]} classes")
    return 0.0 - math.log(max(float(probs[target]), PROB_FLOOR))


def focal_loss(mce_value, alpha, gamma: float):
    """``alpha * (1 - exp(-mce))**gamma * mce``; works elementwise on arrays."""
    mce_value = np.asarray(mce_value, dtype=np.float64)
    if np.any(mce_value < 0):
        raise DataError("mce must be non-negative")
    out = alpha * (-np.expm1(-mce_value)) ** gamma * mce_value
    return float(out) if out.ndim == 0 else out


def class_weights(labels, L: int) -> np.ndarray:
    """Inverse-frequency balance weights ``n / (L * n_j)`` clipped to [0.1, 10].

    Clusters absent from ``labels`` get weight 1 (they contribute no terms).
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=L).astype(np.float64)
    alpha = np.ones(L)
    present = counts > 0
    alpha[present] = labels.size / (L * counts[present])
    return np.clip(alpha, 0.1, 10.0)


def _loss_and_dz(z: np.ndarray, y: np.ndarray, alpha: np.ndarray, gamma: float):
    """Per-sample focal losses and their gradients w.r.t. the logits."""
    logp = _log_softmax(z)
    rows = np.arange(z.shape[0])
    ce_raw = -logp[rows, y]
    clamped = ce_raw > MAX_CE
    ce = np.minimum(ce_raw, MAX_CE)
    p = np.exp(-ce)
    a = alpha[y]
    one_m = -np.expm1(-ce)  # 1 - p without cancellation
    loss = a * one_m ** gamma * ce
    # d loss / d p, multiplied by p:  -a [gamma p (1-p)^(gamma-1) ce + (1-p)^gamma]
    if gamma == 0:
        mod = np.zeros_like(ce)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            mod = np.where(ce > 0, gamma * p * one_m ** (gamma - 1.0) * ce, 0.0)
    g = -a * (mod + one_m ** gamma)
    g[clamped] = 0.0
    s = np.exp(logp)
    dz = -g[:, None] * s
    dz[rows, y] += g
    return loss, dz


def batch_loss(head: LinearHead, x, y, alpha, gamma: float) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, np.int64)
    loss, _ = _loss_and_dz(logits(head, x), y, np.asarray(alpha, float), gamma)
    return float(loss.mean())


def gradient(head: LinearHead, x, y, alpha, gamma: float):
    """Exact gradient ``(dW, db)`` of the mean focal loss over the batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.shape[0] == 0:
        raise DataError("gradient needs a non-empty batch")
    if np.any((y < 0) | (y >= head.L)):
        raise DataError("label out of range")
    _, dz = _loss_and_dz(logits(head, x), y, np.asarray(alpha, float), gamma)
    dz /= x.shape[0]
    return dz.T @ x, dz.sum(axis=0)


def _adam_update(head: LinearHead, dw, db, cfg: TrainConfig) -> None:
    head.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    head.m_w = b1 * head.m_w + (1 - b1) * dw
    head.v_w = b2 * head.v_w + (1 - b2) * dw * dw
    head.m_b = b1 * head.m_b + (1 - b1) * db
    head.v_b = b2 * head.v_b + (1 - b2) * db * db
    c1 = 1 - b1 ** head.step
    c2 = 1 - b2 ** head.step
    head.weights = head.weights - cfg.learning_rate * (head.m_w / c1) / (np.sqrt(head.v_w / c2) + cfg.adam_eps)
    head.bias = head.bias - cfg.learning_rate * (head.m_b / c1) / (np.sqrt(head.v_b / c2) + cfg.adam_eps)


def train(head: LinearHead, x, y, cfg: TrainConfig, alpha=None):
    """Mini-batch Adam on the focal loss. Returns ``(head, final_epoch_loss)``.

    Stops early once the mean epoch loss has not improved by more than
    ``cfg.tolerance`` for ``cfg.patience`` consecutive epochs. The input head
    is not modified.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise DataError("features and labels differ in length")
    if np.any((y < 0) | (y >= head.L)):
        raise DataError("label out of range")
    head = head.copy()
    if cfg.epochs == 0 or x.shape[0] == 0:
        return head, float("nan")
    alpha = class_weights(y, head.L) if alpha is None else np.asarray(alpha, float)
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    best, stale, epoch_loss = math.inf, 0, math.nan
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            loss, dz = _loss_and_dz(logits(head, xb), yb, alpha, cfg.gamma)
            total += loss.sum()
            dz /= idx.size
            _adam_update(head, dz.T @ xb, dz.sum(axis=0), cfg)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise NumericalError("training loss became non-finite")
        if epoch_loss < best - cfg.tolerance:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return head, float(epoch_loss)


def predict(head: LinearHead, x) -> np.ndarray:
    return np.argmax(logits(head, np.atleast_2d(x)), axis=1)


def _top_probability(z: np.ndarray):
    """Argmax and max softmax for each row of logits."""
    top = np.argmax(z, axis=-1)
    zmax = np.take_along_axis(z, top[..., None], axis=-1)
    e = np.exp(z - zmax)
    np.put_along_axis(e, top[..., None], 0.0, axis=-1)
    # mass of every class except the winner, relative to it
    return top, 1.0 / (1.0 + e.sum(axis=-1))


def novelty_rbf(head: LinearHead, x, theta2: float):
    """``("novel", None, p)`` if max softmax < theta2, else ``("known", j, p)``."""
    if head.L < 1:
        raise DataError("head has no clusters")
    novel, top, pmax = novelty_rbf_many(head, np.asarray(x, float)[None, :], theta2)
    if novel[0]:
        return ("novel", None, float(pmax[0]))
    return ("known", int(top[0]), float(pmax[0]))


def novelty_rbf_many(head: LinearHead, x, theta2: float):
    """Vectorised gate: ``(novel_mask, argmax, max_prob)`` for the rows of ``x``."""
    z = logits(head, np.atleast_2d(np.asarray(x, float)))
    top, pmax = _top_probability(z)
    if theta2 >= 1.0:
        # With finite logits max p < 1 whenever there are two classes, even
        # when the other classes' mass underflows in floating point.
        novel = np.full(top.shape, head.L >= 2)
    else:
        novel = pmax < theta2
    return novel, top, pmax


def expand_head(head: LinearHead, new_cluster_count: int, seed) -> LinearHead:
    """Append randomly initialised rows; existing rows and biases are kept bit-exact."""
    if new_cluster_count < 1:
        raise ConfigError("new_cluster_count must be >= 1")
    rng = np.random.default_rng(seed)
    lim = 1.0 / math.sqrt(head.d)
    w_new = rng.uniform(-lim, lim, (new_cluster_count, head.d))
    b_new = rng.uniform(-lim, lim, new_cluster_count)
    out = head.copy()
    out.weights = np.vstack([head.weights, w_new])
    out.bias = np.concatenate([head.bias, b_new])
    out.m_w = np.vstack([head.m_w, np.zeros_like(w_new)])
    out.v_w = np.vstack([head.v_w, np.zeros_like(w_new)])
    out.m_b = np.concatenate([head.m_b, np.zeros(new_cluster_count)])
    out.v_b = np.concatenate([head.v_b, np.zeros(new_cluster_count)])
    return out
