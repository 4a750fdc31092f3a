"""N-way K-shot Q-query episode sampling with optional distractor classes.

Each episode draws from its own generator seeded by ``(seed, episode_index)``,
so any episode can be rebuilt in isolation and episodes can be evaluated in
any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError
from .featurestore import FeatureSet

__all__ = ["EpisodeSpec", "Episode", "sample_episode", "inject_distractors", "episode_rng"]

_MAIN_STREAM = 0
_DISTRACTOR_STREAM = 1


@dataclass(frozen=True)
class EpisodeSpec:
    ways: int = 5
    shots: int = 1
    queries: int = 15
    distractors: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.ways < 2:
            raise ValueError("ways must be >= 2")
        if self.shots < 1 or self.queries < 1:
            raise ValueError("shots and queries must be >= 1")
        if self.distractors < 0:
            raise ValueError("distractors must be >= 0")


@dataclass(frozen=True, eq=False)
class Episode:
    """Row indices into the source :class:`FeatureSet`.

    ``support`` is N x K and ``query`` is N x Q, both ordered by episode class.
    ``distractor_query`` is N' x Q rows from classes outside ``class_ids``.
    """

    index: int
    class_ids: np.ndarray
    support: np.ndarray
    query: np.ndarray
    distractor_query: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))
    distractor_class_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def ways(self) -> int:
        return self.class_ids.shape[0]

    @property
    def shots(self) -> int:
        return self.support.shape[1]

    @property
    def queries(self) -> int:
        return self.query.shape[1]

    @property
    def query_truth(self) -> np.ndarray:
        """Episode-class index (0..N-1) of each labelled query, flattened class-major."""
        return np.repeat(np.arange(self.ways), self.queries)

    def all_query_rows(self) -> np.ndarray:
        """Labelled queries followed by distractors, as one flat index array."""
        return np.concatenate([self.query.reshape(-1), self.distractor_query.reshape(-1)])

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return self.index == other.index and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("class_ids", "support", "query", "distractor_query", "distractor_class_ids")
        )

    __hash__ = None


def episode_rng(seed: int, episode_index: int, stream: int = _MAIN_STREAM) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(episode_index), stream])


def _check_capacity(fs: FeatureSet, spec: EpisodeSpec) -> None:
    need_classes = spec.ways + spec.distractors
    if need_classes > fs.num_classes:
        raise CapacityError(
            f"episode needs {spec.ways} ways + {spec.distractors} distractor classes, "
            f"feature set has {fs.num_classes} classes"
        )
    sizes = fs.class_sizes()
    need = spec.shots + spec.queries
    short = np.flatnonzero(sizes < need)
    if short.size:
        c = int(short[0])
        raise CapacityError(f"class {c} has {int(sizes[c])} rows, episode needs K+Q = {need}")


def sample_episode(fs: FeatureSet, spec: EpisodeSpec, episode_index: int) -> Episode:
    _check_capacity(fs, spec)
    rng = episode_rng(spec.seed, episode_index)
    class_ids = rng.choice(fs.num_classes, size=spec.ways, replace=False)
    k, q = spec.shots, spec.queries
    support = np.empty((spec.ways, k), dtype=np.int64)
    query = np.empty((spec.ways, q), dtype=np.int64)
    for n, c in enumerate(class_ids):
        rows = rng.choice(fs.class_index[c], size=k + q, replace=False)
        support[n] = rows[:k]
        query[n] = rows[k:]
    return Episode(
        index=episode_index,
        class_ids=class_ids.astype(np.int64),
        support=support,
        query=query,
        distractor_query=np.empty((0, q), dtype=np.int64),
    )


def inject_distractors(fs: FeatureSet, ep: Episode, spec: EpisodeSpec) -> Episode:
    """Add ``spec.distractors`` x Q unlabelled query rows from non-episode classes.

    Draws come from a generator stream separate from the one that built ``ep``,
    so the labelled part of the episode is identical for every N'.
    """
    n_extra = spec.distractors
    q = ep.queries
    if n_extra == 0:
        return ep
    outside = np.setdiff1d(np.arange(fs.num_classes), ep.class_ids)
    if outside.size < n_extra:
        raise CapacityError(f"{n_extra} distractor classes requested, only {outside.size} outside the episode")
    rng = episode_rng(spec.seed, ep.index, _DISTRACTOR_STREAM)
    chosen = rng.choice(outside, size=n_extra, replace=False)
    rows = np.empty((n_extra, q), dtype=np.int64)
    for j, c in enumerate(chosen):
        pool = fs.class_index[c]
        if pool.size < q:
            raise CapacityError(f"distractor class {int(c)} has {pool.size} rows, needs Q = {q}")
        rows[j] = rng.choice(pool, size=q, replace=False)
    return replace(ep, distractor_query=rows, distractor_class_ids=chosen.astype(np.int64))
