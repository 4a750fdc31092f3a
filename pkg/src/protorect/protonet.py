"""Cosine-similarity prototype classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, DegenerateVectorError, ShapeError
from .featurestore import NORM_EPS

__all__ = [
    "PrototypeSet",
    "ScoreMatrix",
    "cosine",
    "basic_prototypes",
    "score",
    "predict",
    "softmax",
]


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    class_ids: np.ndarray
    vectors: np.ndarray
    kind: str = "basic"

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[0] < 2:
            raise CapacityError(f"need at least 2 prototypes, got shape {vectors.shape}")
        if class_ids.shape[0] != vectors.shape[0]:
            raise ShapeError(f"{class_ids.shape[0]} class ids for {vectors.shape[0]} prototypes")
        if self.kind not in ("basic", "rectified"):
            raise ValueError(f"unknown prototype kind {self.kind!r}")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "class_ids", class_ids)

    @property
    def ways(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Cosines (queries x classes) and the matching softmax(tau * cos) rows."""

    cos: np.ndarray
    probs: np.ndarray
    tau: float


def check_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(~(norms >= NORM_EPS))
    if bad.size:
        i = int(bad[0])
        raise DegenerateVectorError(f"{what} {i} has norm {norms[i]:.3g} < {NORM_EPS:g}", index=i)
    return norms


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if not na >= NORM_EPS:
        raise DegenerateVectorError("first vector is degenerate", index=0)
    if not nb >= NORM_EPS:
        raise DegenerateVectorError("second vector is degenerate", index=1)
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def softmax(logits) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return kernels.softmax_rows(z)


def basic_prototypes(support, class_ids: Sequence[int] | None = None) -> PrototypeSet:
    """Plain mean of the (already normalised) support rows of each class.

    ``support`` is N x K x D. Prototypes are not renormalised.
    """
    support = np.asarray(support, dtype=np.float64)
    if support.ndim != 3:
        raise ShapeError(f"support must be N x K x D, got shape {support.shape}")
    if support.shape[1] == 0:
        raise CapacityError("each class needs at least one support row")
    if class_ids is None:
        class_ids = np.arange(support.shape[0])
    return PrototypeSet(class_ids=class_ids, vectors=support.mean(axis=1), kind="basic")


def score(queries, protos: PrototypeSet, tau: float = 10.0) -> ScoreMatrix:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if not tau > 0:
        raise ValueError("tau must be positive")
    if queries.shape[1] != protos.dim:
        raise ShapeError(f"query dim {queries.shape[1]} != prototype dim {protos.dim}")
    check_rows(protos.vectors, "prototype")
    check_rows(queries, "query")
    cos = kernels.cosine_matrix(queries, protos.vectors)
    probs = kernels.softmax_rows(tau * cos)
    return ScoreMatrix(cos=cos, probs=probs, tau=float(tau))


def predict(sm: ScoreMatrix):
    """Argmax class per query (lowest index on ties) and its softmax probability."""
    labels = np.argmax(sm.cos, axis=1)
    conf = sm.probs[np.arange(labels.shape[0]), labels]
    return labels, conf
