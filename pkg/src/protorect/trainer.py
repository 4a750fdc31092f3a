"""Linear adapter + cosine classifier trained with momentum SGD.

Model: ``z = A.T @ x``; ``p = softmax(tau * cos(z, W_c))`` over base classes.
Objective: mean negative log-likelihood plus ``wd / 2 * (|A|^2 + |W|^2)``.
Gradients are analytic; ``tests/test_trainer.py`` checks them against
central finite differences.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DegenerateVectorError, FormatError, LabelError, TrainingFailure, TruncationError
from .featurestore import NORM_EPS, FeatureSet

logger = logging.getLogger(__name__)

__all__ = [
    "TrainHyper",
    "ClassifierParams",
    "Gradients",
    "init_params",
    "forward",
    "loss",
    "gradient",
    "train",
    "lr_at",
    "milestones_for",
    "training_accuracy",
    "project",
    "save_checkpoint",
    "load_checkpoint",
]

TAU_MIN = 1e-3
BASE_MILESTONES = (10, 20, 40)
BASE_EPOCHS = 60

CKPT_MAGIC = b"PRFC"
CKPT_VERSION = 1
# magic, version, d_in, d_out, num_classes, flags
_CKPT_HEADER = struct.Struct("<4sIIIIB")
# tau, lr, momentum, weight_decay, epochs, batch_size, seed
_CKPT_HYPER = struct.Struct("<ddddIIQ")


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    A: np.ndarray
    W: np.ndarray
    tau: float = 10.0
    hyper: TrainHyper = field(default_factory=TrainHyper)

    @property
    def d_in(self) -> int:
        return self.A.shape[0]

    @property
    def d_out(self) -> int:
        return self.A.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "ClassifierParams":
        return replace(self, A=self.A.copy(), W=self.W.copy())


@dataclass(frozen=True, eq=False)
class Gradients:
    A: np.ndarray
    W: np.ndarray
    tau: float


def init_params(d_in: int, d_out: int, num_classes: int, seed: int = 0, tau: float = 10.0,
                hyper: TrainHyper | None = None) -> ClassifierParams:
    rng = np.random.default_rng([seed, 0x5EED])
    A = rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)
    W = rng.standard_normal((num_classes, d_out)) / math.sqrt(d_out)
    return ClassifierParams(A=A, W=W, tau=float(tau), hyper=hyper or TrainHyper(seed=seed))


def _cosines(params: ClassifierParams, X: np.ndarray):
    Z = X @ params.A
    zn = np.linalg.norm(Z, axis=1)
    bad = np.flatnonzero(~(zn >= NORM_EPS))
    if bad.size:
        raise DegenerateVectorError(f"projected feature {int(bad[0])} is degenerate", index=int(bad[0]))
    wn = np.linalg.norm(params.W, axis=1)
    bad = np.flatnonzero(~(wn >= NORM_EPS))
    if bad.size:
        raise DegenerateVectorError(f"class weight {int(bad[0])} is degenerate", index=int(bad[0]))
    Zh = Z / zn[:, None]
    Wh = params.W / wn[:, None]
    return Zh @ Wh.T, Zh, zn, Wh, wn


def forward(params: ClassifierParams, x) -> np.ndarray:
    """Class probabilities for one vector (1-D in, 1-D out) or a batch."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    cos, *_ = _cosines(params, np.atleast_2d(X))
    probs = kernels.softmax_rows(params.tau * cos)
    return probs[0] if single else probs


def _check_labels(y, num_classes):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)][0]
        raise LabelError(f"label {int(bad)} outside [0, {num_classes})")
    return y


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def loss(params: ClassifierParams, X, y, weight_decay: float | None = None) -> float:
    wd = params.hyper.weight_decay if weight_decay is None else weight_decay
    X = np.asarray(X, dtype=np.float64).reshape(-1, params.d_in)
    y = _check_labels(y, params.num_classes)
    reg = 0.5 * wd * (np.sum(params.A**2) + np.sum(params.W**2))
    if y.size == 0:
        return float(reg)
    cos, *_ = _cosines(params, X)
    logp = _log_softmax(params.tau * cos)
    return float(-logp[np.arange(y.size), y].mean() + reg)


def gradient(params: ClassifierParams, X, y, weight_decay: float | None = None) -> Gradients:
    wd = params.hyper.weight_decay if weight_decay is None else weight_decay
    X = np.asarray(X, dtype=np.float64).reshape(-1, params.d_in)
    y = _check_labels(y, params.num_classes)
    gA = wd * params.A
    gW = wd * params.W
    if y.size == 0:
        return Gradients(A=gA, W=gW, tau=0.0)
    b = y.size
    cos, Zh, zn, Wh, wn = _cosines(params, X)
    P = kernels.softmax_rows(params.tau * cos)
    P[np.arange(b), y] -= 1.0
    G = P / b  # d loss / d logits
    g_tau = float(np.sum(G * cos))
    dcos = params.tau * G
    dZh = dcos @ Wh
    dZ = (dZh - np.sum(dZh * Zh, axis=1, keepdims=True) * Zh) / zn[:, None]
    dWh = dcos.T @ Zh
    dW = (dWh - np.sum(dWh * Wh, axis=1, keepdims=True) * Wh) / wn[:, None]
    return Gradients(A=gA + X.T @ dZ, W=gW + dW, tau=g_tau)


def milestones_for(epochs: int) -> tuple:
    """Learning-rate drop epochs, rescaled proportionally for runs shorter than 60 epochs."""
    if epochs >= BASE_EPOCHS:
        return BASE_MILESTONES
    return tuple(max(1, round(m * epochs / BASE_EPOCHS)) for m in BASE_MILESTONES)


def lr_at(epoch: int, hyper: TrainHyper) -> float:
    drops = sum(epoch >= m for m in milestones_for(hyper.epochs))
    return hyper.lr * (0.1**drops)


def train(fs: FeatureSet, params: ClassifierParams, hyper: TrainHyper | None = None, verbose: bool = False):
    """Momentum SGD on (fs.vectors, fs.labels).

    Returns ``(best_params, history)`` where ``history`` holds the full-set
    loss before training and after each epoch; ``best_params`` are those with
    the lowest such loss (the initial params if no epoch improved).
    """
    hyper = hyper or params.hyper
    if fs.num_classes < 2:
        raise ValueError("training needs at least 2 classes")
    if fs.dim != params.d_in or fs.num_classes != params.num_classes:
        raise ValueError(
            f"params expect d_in={params.d_in}, classes={params.num_classes}; "
            f"features have dim={fs.dim}, classes={fs.num_classes}"
        )
    X = fs.vectors.astype(np.float64)
    y = fs.labels
    cur = replace(params.copy(), hyper=hyper)
    best = cur.copy()
    history = [loss(cur, X, y)]
    best_loss = history[0]
    vA = np.zeros_like(cur.A)
    vW = np.zeros_like(cur.W)
    vt = 0.0
    A, W, tau = cur.A, cur.W, cur.tau
    for epoch in range(hyper.epochs):
        lr = lr_at(epoch, hyper)
        order = np.random.default_rng([hyper.seed, epoch]).permutation(X.shape[0])
        for start in range(0, order.size, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            g = gradient(ClassifierParams(A, W, tau, hyper), X[idx], y[idx])
            vA = hyper.momentum * vA + g.A
            vW = hyper.momentum * vW + g.W
            vt = hyper.momentum * vt + g.tau
            A = A - lr * vA
            W = W - lr * vW
            tau = max(TAU_MIN, tau - lr * vt)
        cur = ClassifierParams(A, W, tau, hyper)
        value = loss(cur, X, y)
        if not math.isfinite(value):
            raise TrainingFailure(f"loss became {value} at epoch {epoch}")
        history.append(value)
        if verbose:
            logger.info("epoch %d lr %.4g loss %.6f tau %.4f", epoch, lr, value, tau)
        if value < best_loss:
            best_loss = value
            best = cur.copy()
    return best, history


def training_accuracy(params: ClassifierParams, fs: FeatureSet) -> float:
    probs = forward(params, fs.vectors.astype(np.float64))
    return float(np.mean(np.argmax(probs, axis=1) == fs.labels))


def project(params: ClassifierParams, fs: FeatureSet) -> FeatureSet:
    """Map every feature through the adapter (``A.T @ x``)."""
    return FeatureSet(vectors=fs.vectors.astype(np.float64) @ params.A, labels=fs.labels,
                      class_names=fs.class_names)


def save_checkpoint(params: ClassifierParams, path) -> None:
    h = params.hyper
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, params.d_in, params.d_out, params.num_classes, 0))
        fh.write(_CKPT_HYPER.pack(params.tau, h.lr, h.momentum, h.weight_decay, h.epochs, h.batch_size, h.seed))
        fh.write(np.ascontiguousarray(params.A, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.W, dtype="<f8").tobytes())


def load_checkpoint(path) -> ClassifierParams:
    with open(path, "rb") as fh:
        data = fh.read()
    head = _CKPT_HEADER.size + _CKPT_HYPER.size
    if len(data) < head:
        raise TruncationError(f"{path}: checkpoint shorter than its {head}-byte header")
    magic, version, d_in, d_out, num_classes, _flags = _CKPT_HEADER.unpack_from(data, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    tau, lr, mom, wd, epochs, batch, seed = _CKPT_HYPER.unpack_from(data, _CKPT_HEADER.size)
    n_a, n_w = d_in * d_out, num_classes * d_out
    if len(data) != head + 8 * (n_a + n_w):
        raise TruncationError(f"{path}: payload is {len(data) - head} bytes, expected {8 * (n_a + n_w)}")
    A = np.frombuffer(data, dtype="<f8", count=n_a, offset=head).reshape(d_in, d_out).copy()
    W = np.frombuffer(data, dtype="<f8", count=n_w, offset=head + 8 * n_a).reshape(num_classes, d_out).copy()
    hyper = TrainHyper(lr=lr, momentum=mom, weight_decay=wd, epochs=epochs, batch_size=batch, seed=seed)
    return ClassifierParams(A=A, W=W, tau=tau, hyper=hyper)
