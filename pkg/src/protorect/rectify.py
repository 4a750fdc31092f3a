"""Bias diminishing: query feature shifting and pseudo-label prototype rectification.

Two mechanisms, usable separately or together:

* cross-class: every query is moved by ``xi = mean(support) - mean(query)``
  so the pooled query mean lands on the pooled support mean;
* intra-class: each class keeps its top-Z most confident queries as extra
  support and the prototype becomes a softmax(eps * cos)-weighted sum over
  the enlarged set.

``run_pipeline`` chains them as the four ablation modes ``cspn`` (neither),
``bdc`` (shift only), ``bdi`` (rectify only) and ``bd`` (both).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import CapacityError, ShapeError
from .featurestore import normalize_rows
from .protonet import PrototypeSet, ScoreMatrix, basic_prototypes, check_rows, predict, score

__all__ = [
    "MODES",
    "ShiftTerm",
    "PseudoLabelSet",
    "EpisodeDiagnostics",
    "PipelineResult",
    "shift_term",
    "apply_shift",
    "select_pseudo",
    "rectification_weights",
    "rectified_prototypes",
    "measure_intra_bias",
    "measure_cross_bias",
    "run_pipeline",
]

MODES = ("cspn", "bdc", "bdi", "bd")


@dataclass(frozen=True, eq=False)
class ShiftTerm:
    xi: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.xi))


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    """Selected queries per class, most confident first.

    ``picked[n]`` holds query row indices for class n, padded with -1.
    """

    picked: np.ndarray
    confidence: np.ndarray
    z: int
    epsilon: float = 10.0

    def members(self, n: int) -> list:
        row = self.picked[n]
        return [(int(i), float(c)) for i, c in zip(row, self.confidence[n]) if i >= 0]

    def counts(self) -> np.ndarray:
        return (self.picked >= 0).sum(axis=1) if self.picked.size else np.zeros(self.picked.shape[0], int)


@dataclass
class EpisodeDiagnostics:
    xi_norm: float = 0.0
    pseudo_counts: list = field(default_factory=list)
    weight_entropy: list = field(default_factory=list)
    intra_bias_basic: Optional[list] = None
    intra_bias_final: Optional[list] = None

    def to_dict(self) -> dict:
        return {
            "xi_norm": self.xi_norm,
            "pseudo_counts": list(self.pseudo_counts),
            "weight_entropy": list(self.weight_entropy),
            "intra_bias_basic": self.intra_bias_basic,
            "intra_bias_final": self.intra_bias_final,
        }


@dataclass(frozen=True, eq=False)
class PipelineResult:
    predictions: np.ndarray
    confidence: np.ndarray
    scores: ScoreMatrix
    prototypes: PrototypeSet
    diagnostics: EpisodeDiagnostics


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, x.shape[-1])


def _mean_diff(a, b, what: str) -> np.ndarray:
    a, b = _as_rows(a), _as_rows(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise CapacityError(f"{what}: both row sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"{what}: dims {a.shape[1]} and {b.shape[1]} differ")
    return a.mean(axis=0) - b.mean(axis=0)


def shift_term(support, query) -> ShiftTerm:
    """Pooled support mean minus pooled query mean (all classes together)."""
    return ShiftTerm(xi=_mean_diff(support, query, "shift_term"))


def apply_shift(query, xi: ShiftTerm) -> np.ndarray:
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    if query.shape[1] != xi.xi.shape[0]:
        raise ShapeError(f"query dim {query.shape[1]} != shift dim {xi.xi.shape[0]}")
    return query + xi.xi


def select_pseudo(sm: ScoreMatrix, z: int, epsilon: float = 10.0) -> PseudoLabelSet:
    if z < 0:
        raise ValueError("Z must be non-negative")
    picked = kernels.select_topz(sm.cos, sm.probs, int(z))
    conf = np.zeros(picked.shape, dtype=np.float64)
    if picked.size:
        labels, qconf = predict(sm)
        mask = picked >= 0
        conf[mask] = qconf[picked[mask]]
    return PseudoLabelSet(picked=picked, confidence=conf, z=int(z), epsilon=float(epsilon))


def rectification_weights(rows, basic_proto, epsilon: float = 10.0) -> np.ndarray:
    """softmax over rows of ``epsilon * cos(row, basic_proto)``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    proto = np.atleast_2d(np.asarray(basic_proto, dtype=np.float64))
    check_rows(proto, "prototype")
    check_rows(rows, "row")
    cos = kernels.cosine_matrix(rows, proto)[:, 0]
    return kernels.softmax_rows((epsilon * cos)[None, :])[0]


def _rectify(support, pseudo: PseudoLabelSet, query, basic: PrototypeSet, epsilon: float):
    support = np.asarray(support, dtype=np.float64)
    if support.ndim != 3 or support.shape[0] != basic.ways:
        raise ShapeError(f"support must be {basic.ways} x K x D, got {support.shape}")
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    if pseudo.picked.size and (pseudo.picked >= 0).any():
        query = normalize_rows(query)
    else:
        query = np.zeros((0, support.shape[2]))
    vectors, entropy = kernels.rectify_prototypes(support, query, pseudo.picked, basic.vectors, float(epsilon))
    return PrototypeSet(class_ids=basic.class_ids, vectors=vectors, kind="rectified"), entropy


def rectified_prototypes(support, pseudo: PseudoLabelSet, shifted_query, basic: PrototypeSet,
                         epsilon: float = 10.0) -> PrototypeSet:
    """Weighted sum over each class's support rows plus its pseudo-labelled queries.

    Query rows are L2-renormalised first, so every prototype is a convex
    combination of unit vectors.
    """
    return _rectify(support, pseudo, shifted_query, basic, epsilon)[0]


def measure_intra_bias(population, subset):
    vec = _mean_diff(population, subset, "measure_intra_bias")
    return vec, float(np.linalg.norm(vec))


def measure_cross_bias(support, query):
    vec = _mean_diff(support, query, "measure_cross_bias")
    return vec, float(np.linalg.norm(vec))


def run_pipeline(support, query, mode: str = "bd", z: int = 8, epsilon: float = 10.0, tau: float = 10.0,
                 intra_first: bool = False, class_ids=None, population_means=None) -> PipelineResult:
    """Classify one episode.

    ``support`` is N x K x D and ``query`` M x D, both L2-normalised. ``query``
    may include unlabelled distractor rows; they take part in the shift and in
    pseudo-labelling. ``population_means`` (N x D), when given, enables the
    intra-class bias diagnostics.

    Z = 0 switches the intra-class step off entirely (basic prototypes).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    support = np.asarray(support, dtype=np.float64)
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    basic = basic_prototypes(support, class_ids)
    diag = EpisodeDiagnostics(pseudo_counts=[0] * basic.ways, weight_entropy=[0.0] * basic.ways)

    shift = mode in ("bdc", "bd")
    intra = mode in ("bdi", "bd") and z > 0

    queries = query
    xi = None
    if shift:
        xi = shift_term(support, query)
        diag.xi_norm = xi.norm
        if not (intra and intra_first):
            queries = apply_shift(query, xi)

    protos = basic
    if intra:
        sm = score(queries, basic, tau)
        pseudo = select_pseudo(sm, z, epsilon)
        if shift and intra_first:
            queries = apply_shift(query, xi)
        protos, entropy = _rectify(support, pseudo, queries, basic, epsilon)
        diag.pseudo_counts = [int(c) for c in pseudo.counts()]
        diag.weight_entropy = [float(h) for h in entropy]

    final = score(queries, protos, tau)
    labels, conf = predict(final)

    if population_means is not None:
        pm = np.asarray(population_means, dtype=np.float64)
        diag.intra_bias_basic = [float(v) for v in np.linalg.norm(pm - basic.vectors, axis=1)]
        diag.intra_bias_final = [float(v) for v in np.linalg.norm(pm - protos.vectors, axis=1)]

    return PipelineResult(predictions=labels, confidence=conf, scores=final, prototypes=protos, diagnostics=diag)
