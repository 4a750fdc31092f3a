"""Feature tables: in-memory model, L2 normalisation, file I/O, synthetic data.

Raw vectors are kept exactly as stored (float32, unnormalised). Anything that
needs unit rows asks for a :class:`NormalizedView` explicitly.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DegenerateVectorError, FormatError, TruncationError

__all__ = [
    "FeatureSet",
    "NormalizedView",
    "NORM_EPS",
    "load",
    "save",
    "normalize",
    "normalize_rows",
    "synth",
]

NORM_EPS = 1e-12

MAGIC = b"PRFS"
VERSION = 1
# magic, version, count, dim, num_classes, flags
_HEADER = struct.Struct("<4sIQIIB")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Immutable table of D-dimensional embeddings with integer class labels."""

    vectors: np.ndarray
    labels: np.ndarray
    class_names: Optional[tuple] = None

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float32, copy=True, ndmin=2)
        labels = np.array(self.labels, copy=True).reshape(-1)
        if vectors.ndim != 2 or vectors.shape[1] < 1 or vectors.shape[0] < 1:
            raise DataError(f"vectors must be a non-empty count x dim matrix, got shape {vectors.shape}")
        if labels.shape[0] != vectors.shape[0]:
            raise DataError(f"{labels.shape[0]} labels for {vectors.shape[0]} vectors")
        if labels.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise DataError(f"negative label {int(labels.min())}")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
            raise DataError(f"non-finite value in row {bad}")
        names = self.class_names
        if names is not None:
            names = tuple(str(n) for n in names)
            num_classes = len(names)
            if labels.max() >= num_classes:
                raise DataError(f"label {int(labels.max())} outside [0, {num_classes})")
        else:
            num_classes = int(labels.max()) + 1
        counts = np.bincount(labels, minlength=num_classes)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise DataError(f"class {missing} has no rows")
        object.__setattr__(self, "vectors", _readonly(vectors))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "class_names", names)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def num_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        return int(self.labels.max()) + 1

    @cached_property
    def class_index(self) -> tuple:
        """Row indices of each class, in ascending row order."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.num_classes))[:-1]
        return tuple(_readonly(part) for part in np.split(order, bounds))

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors.view(np.uint32), other.vectors.view(np.uint32))
            and np.array_equal(self.labels, other.labels)
            and self.class_names == other.class_names
            and self.num_classes == other.num_classes
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalizedView:
    """Row-wise L2-normalised copy of a :class:`FeatureSet` (float64)."""

    vectors: np.ndarray
    labels: np.ndarray
    num_classes: int = field(default=0)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def rows_of(self, cls: int) -> np.ndarray:
        return self.vectors[self.labels == cls]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Divide every row by its L2 norm; reject rows with norm below ``NORM_EPS``."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(~(norms >= NORM_EPS))
    if bad.size:
        raise DegenerateVectorError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3g} < {NORM_EPS:g}", index=int(bad[0])
        )
    out = x / norms[:, None]
    return out[0] if squeeze else out


def normalize(fs: FeatureSet) -> NormalizedView:
    vectors = _readonly(normalize_rows(fs.vectors))
    return NormalizedView(vectors=vectors, labels=fs.labels, num_classes=fs.num_classes)


def synth(num_classes: int, per_class: int, dim: int, spread: float, seed: int,
          concentration: float = 0.0) -> FeatureSet:
    """Isotropic Gaussian classes around unit-sphere mean directions.

    With ``concentration=0`` the mean directions are uniform on the sphere.
    A positive value pulls every direction towards one shared random axis
    (``normalize(concentration * axis + g / sqrt(dim))``), which gives the
    high within-class cosines typical of trained CNN embeddings while the
    classes stay hard to tell apart. Per-dimension noise std is ``spread``.

    Rows are grouped by class (class 0 first). The same arguments and seed
    always give the same table.
    """
    if num_classes < 2 or per_class < 2 or dim < 2:
        raise ValueError("synth needs num_classes >= 2, per_class >= 2, dim >= 2")
    if not spread >= 0:
        raise ValueError("spread must be non-negative")
    if not concentration >= 0:
        raise ValueError("concentration must be non-negative")
    rng = np.random.default_rng(seed)
    axis = normalize_rows(rng.standard_normal(dim))
    while True:
        raw = rng.standard_normal((num_classes, dim))
        if concentration > 0:
            raw = concentration * axis + raw / np.sqrt(dim)
        means = normalize_rows(raw)
        gram = means @ means.T
        np.fill_diagonal(gram, -np.inf)
        if gram.max() < 1.0 - 1e-9:
            break
    noise = rng.standard_normal((num_classes, per_class, dim)) * spread
    vectors = (means[:, None, :] + noise).reshape(num_classes * per_class, dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    return FeatureSet(vectors=vectors, labels=labels)


def save(fs: FeatureSet, path, format: str = "binary") -> None:
    if format == "binary":
        _save_binary(fs, path)
    elif format == "csv":
        _save_csv(fs, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def load(path, format: Optional[str] = None) -> FeatureSet:
    """Read a feature file. ``format`` defaults to csv for ``*.csv`` paths, else binary."""
    if format is None:
        format = "csv" if os.fspath(path).lower().endswith(".csv") else "binary"
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown format {format!r}")


def _save_binary(fs: FeatureSet, path) -> None:
    flags = 1 if fs.class_names is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, fs.count, fs.dim, fs.num_classes, flags))
        fh.write(fs.labels.astype("<u4").tobytes())
        fh.write(fs.vectors.astype("<f4").tobytes())
        if flags:
            for name in fs.class_names:
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)


def _load_binary(path) -> FeatureSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise TruncationError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, count, dim, num_classes, flags = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flags not in (0, 1):
        raise FormatError(f"{path}: bad flags byte {flags}")
    if dim < 1 or count < 1:
        raise FormatError(f"{path}: count={count}, dim={dim}")
    off = _HEADER.size
    need = off + 4 * count + 4 * count * dim
    if len(data) < need:
        raise TruncationError(
            f"{path}: header declares count={count}, dim={dim} ({need} bytes) but file has {len(data)}"
        )
    labels = np.frombuffer(data, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off).reshape(count, dim)
    off += 4 * count * dim
    names = None
    if flags:
        names = []
        for _ in range(num_classes):
            if off + 4 > len(data):
                raise TruncationError(f"{path}: class-name block truncated")
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if off + n > len(data):
                raise TruncationError(f"{path}: class-name block truncated")
            names.append(data[off : off + n].decode("utf-8"))
            off += n
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    if labels.size and labels.max() >= num_classes:
        raise DataError(f"{path}: label {int(labels.max())} outside [0, {num_classes})")
    if not np.all(np.isfinite(vectors)):
        bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
        raise DataError(f"{path}: non-finite value in row {bad}")
    fs = FeatureSet(vectors=vectors, labels=labels, class_names=names)
    if fs.num_classes != num_classes:
        raise DataError(f"{path}: header says {num_classes} classes, labels use {fs.num_classes}")
    return fs


def _save_csv(fs: FeatureSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(fs.dim)])
        for label, row in zip(fs.labels, fs.vectors):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def _load_csv(path) -> FeatureSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        header = [h.strip() for h in header]
        dim = len(header) - 1
        if dim < 1 or header[0] != "label" or header[1:] != [f"f{j}" for j in range(dim)]:
            raise FormatError(f"{path}: header must be label,f0,...,f{{D-1}}")
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != dim + 1:
                raise FormatError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(rec)}")
            try:
                labels.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    vectors = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(vectors)):
        bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
        raise DataError(f"{path}: non-finite value in data row {bad}")
    return FeatureSet(vectors=vectors, labels=np.asarray(labels))


def from_arrays(vectors: Sequence, labels: Sequence, class_names=None) -> FeatureSet:
    return FeatureSet(vectors=np.asarray(vectors), labels=np.asarray(labels), class_names=class_names)
