"""Gram-projection embedding and per-record matching thresholds.

A string s maps to the vector whose i-th coordinate is the number of
occurrences of gram g_i in s divided by |g_i|; vectors are compared with the
Euclidean distance. For each string, a dynamic program over two position
tables bounds how far ``ed`` edits can move its vector.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import Dataset


@dataclass(frozen=True)
class GramBase:
    grams: tuple[str, ...]

    def __post_init__(self):
        grams = tuple(self.grams)
        if not grams:
            raise ValueError("gram base must not be empty")
        if any(not g for g in grams):
            raise ValueError("grams must be non-empty")
        if len(set(grams)) != len(grams):
            raise ValueError("gram base contains duplicates")
        object.__setattr__(self, "grams", grams)
        object.__setattr__(self, "_index", {g: i for i, g in enumerate(grams)})
        lengths = sorted({len(g) for g in grams})
        object.__setattr__(self, "_lengths", tuple(lengths))
        object.__setattr__(self, "_divisors", np.array([float(len(g)) for g in grams]))

    def __len__(self) -> int:
        return len(self.grams)

    def __iter__(self) -> Iterator[str]:
        return iter(self.grams)

    @property
    def k(self) -> int:
        return len(self.grams)

    @property
    def q_min(self) -> int:
        return self._lengths[0]

    @property
    def q_max(self) -> int:
        return self._lengths[-1]

    def index(self, gram: str) -> int | None:
        return self._index.get(gram)

    def to_text(self) -> str:
        return "".join(g + "\n" for g in self.grams)

    @classmethod
    def from_text(cls, text: str) -> "GramBase":
        return cls(tuple(line for line in text.splitlines() if line))


@dataclass(frozen=True)
class EmbeddedVector:
    record_id: int
    coordinates: np.ndarray


@dataclass
class VectorSet:
    """Row-stacked embedding of a dataset: ids[i] owns matrix[i]."""

    ids: list[int]
    matrix: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[EmbeddedVector]:
        for rid, row in zip(self.ids, self.matrix):
            yield EmbeddedVector(rid, row)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def from_vectors(cls, vectors: Sequence[EmbeddedVector], dim: int | None = None) -> "VectorSet":
        if not vectors:
            return cls([], np.zeros((0, dim or 0)))
        return cls([v.record_id for v in vectors], np.vstack([v.coordinates for v in vectors]))

    def to_tsv(self) -> str:
        lines = []
        for rid, row in zip(self.ids, self.matrix):
            lines.append("\t".join([str(rid)] + [repr(float(x)) for x in row]))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_tsv(cls, text: str, dim: int | None = None) -> "VectorSet":
        ids, rows = [], []
        for line in text.splitlines():
            if not line:
                continue
            parts = line.split("\t")
            ids.append(int(parts[0]))
            rows.append([float(x) for x in parts[1:]])
        if not rows:
            return cls([], np.zeros((0, dim or 0)))
        return cls(ids, np.array(rows, dtype=float))


def _counts(s: str, base: GramBase) -> np.ndarray:
    counts = np.zeros(base.k)
    index = base._index
    lengths = base._lengths
    n = len(s)
    for i in range(n):
        for q in lengths:
            if i + q > n:
                break
            j = index.get(s[i:i + q])
            if j is not None:
                counts[j] += 1
    return counts


def embed(s: str, base: GramBase, record_id: int = -1) -> EmbeddedVector:
    return EmbeddedVector(record_id, _counts(s, base) / base._divisors)


def _count_matrix(texts: Sequence[str], base: GramBase) -> np.ndarray:
    """Occurrence counts for many strings, built from one flat index list."""
    index = base._index
    lengths = base._lengths
    k = base.k
    flat = []
    for row, s in enumerate(texts):
        offset = row * k
        n = len(s)
        for i in range(n):
            for q in lengths:
                if i + q > n:
                    break
                j = index.get(s[i:i + q])
                if j is not None:
                    flat.append(offset + j)
    counts = np.bincount(np.array(flat, dtype=np.int64), minlength=len(texts) * k)
    return counts.reshape(len(texts), k).astype(float)


def embed_dataset(dataset: Dataset, base: GramBase, workers: int = 1) -> VectorSet:
    """Embed every record; ``workers > 1`` splits the records into ranges."""
    texts = dataset.texts
    if workers > 1 and len(texts) > 1:
        bounds = np.linspace(0, len(texts), min(workers, len(texts)) + 1).astype(int)
        ranges = [texts[a:b] for a, b in zip(bounds, bounds[1:])]
        with ThreadPoolExecutor(workers) as pool:
            counts = np.vstack(list(pool.map(lambda part: _count_matrix(part, base), ranges)))
    else:
        counts = _count_matrix(texts, base)
    return VectorSet(dataset.ids, counts / base._divisors)


def distance(x: EmbeddedVector | np.ndarray, y: EmbeddedVector | np.ndarray) -> float:
    a = np.asarray(getattr(x, "coordinates", x), dtype=float)
    b = np.asarray(getattr(y, "coordinates", y), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def global_threshold_bound(q_min: int, q_max: int, ed: int) -> float:
    if ed < 0:
        raise ValueError("ed must be >= 0")
    return float((q_max - q_min + 1) * ed)


@dataclass(frozen=True)
class ThresholdTables:
    D: np.ndarray
    P: np.ndarray


def _base_occurrences(s: str, base: GramBase) -> list[tuple[int, str]]:
    occ = []
    n = len(s)
    for i in range(n):
        for q in base._lengths:
            if i + q > n:
                break
            g = s[i:i + q]
            if g in base._index:
                occ.append((i, g))
    return occ


def threshold_tables(s: str, base: GramBase) -> ThresholdTables:
    """Build the weight and compatibility tables for ``s``.

    D[i] sums (1/|g|)^2 over the distinct base grams having an occurrence
    that covers position i. P[i] is the largest p < i such that no single
    occurrence covers both p and i (-1 if none).
    """
    n = len(s)
    covering: list[set[str]] = [set() for _ in range(n)]
    # earliest start of an occurrence that covers i and begins before i
    first_start = list(range(n))
    for j, g in _base_occurrences(s, base):
        for i in range(j, j + len(g)):
            covering[i].add(g)
            if j < first_start[i]:
                first_start[i] = j
    D = np.array([math.fsum((1.0 / len(g)) ** 2 for g in cov) for cov in covering])
    P = np.array([first_start[i] - 1 for i in range(n)], dtype=int)
    return ThresholdTables(D, P)


def personalized_threshold(s: str, tables: ThresholdTables, ed: int) -> float:
    """Largest embedded displacement reachable with ``ed`` edits, per the tables.

    T[i][j] is the best total D over at most i mutually compatible positions
    among 0..j; row 0 is all zeros and column -1 is a zero sentinel.
    """
    if ed < 0:
        raise ValueError("ed must be >= 0")
    n = len(s)
    if ed == 0 or n == 0:
        return 0.0
    D, P = tables.D, tables.P
    prev = [0.0] * (n + 1)  # index j + 1, prev[0] is the j = -1 sentinel
    for _ in range(ed):
        cur = [0.0] * (n + 1)
        for j in range(n):
            cur[j + 1] = max(cur[j], prev[P[j] + 1] + D[j])
        prev = cur
    return math.sqrt(prev[n])


@dataclass
class ThresholdSet:
    ids: list[int]
    values: np.ndarray
    ed: int

    def __len__(self) -> int:
        return len(self.ids)


def thresholds_for_dataset(dataset: Dataset, base: GramBase, ed: int) -> ThresholdSet:
    values = [personalized_threshold(r.text, threshold_tables(r.text, base), ed) for r in dataset]
    return ThresholdSet(dataset.ids, np.array(values, dtype=float), ed)


def constant_thresholds(ids: Iterable[int], value: float, ed: int = 0) -> ThresholdSet:
    """The same global threshold for every record."""
    ids = list(ids)
    return ThresholdSet(ids, np.full(len(ids), float(value)), ed)
