"""String records, alphabets, gram occurrences and edit distance."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class AlphabetError(ValueError):
    """A record contains a character outside the alphabet."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Alphabet:
    """Ordered set of symbols. Order drives tie-breaks and child order in trees."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        symbols = tuple(self.symbols)
        if not symbols:
            raise ValueError("alphabet must not be empty")
        if any(len(s) != 1 for s in symbols):
            raise ValueError("alphabet symbols must be single characters")
        if len(set(symbols)) != len(symbols):
            raise ValueError("alphabet symbols must be distinct")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "_members", frozenset(symbols))

    @classmethod
    def from_string(cls, chars: str) -> "Alphabet":
        return cls(tuple(chars))

    def __contains__(self, ch: str) -> bool:
        return ch in self._members

    def __iter__(self) -> Iterator[str]:
        return iter(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def covers(self, text: str) -> bool:
        return all(ch in self._members for ch in text)

    def to_string(self) -> str:
        return "".join(self.symbols)


UPPERCASE = Alphabet.from_string(string.ascii_uppercase)


@dataclass(frozen=True)
class Record:
    id: int
    text: str


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of records with pairwise distinct ids."""

    records: tuple[Record, ...] = ()
    alphabet: Alphabet = field(default=UPPERCASE)

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("record ids must be unique within a dataset")
        for r in records:
            if not self.alphabet.covers(r.text):
                raise AlphabetError(f"record {r.id!r} has characters outside the alphabet")
        object.__setattr__(self, "records", records)

    @classmethod
    def from_strings(cls, texts: Iterable[str], alphabet: Alphabet = UPPERCASE) -> "Dataset":
        return cls(tuple(Record(i, t) for i, t in enumerate(texts)), alphabet)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, i: int) -> Record:
        return self.records[i]

    @property
    def size(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.records]

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.records]

    def head(self, n: int) -> "Dataset":
        return Dataset(self.records[:n], self.alphabet)

    def average_length(self) -> float:
        if not self.records:
            return 0.0
        return sum(len(r.text) for r in self.records) / len(self.records)


def edit_distance(x: str, y: str) -> int:
    """Levenshtein distance with unit-cost substitution, insertion and deletion."""
    if len(x) < len(y):
        x, y = y, x
    previous = list(range(len(y) + 1))
    for i, cx in enumerate(x, 1):
        current = [i]
        for j, cy in enumerate(y, 1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (cx != cy),
            ))
        previous = current
    return previous[-1]


def occurrences(s: str, gram: str) -> set[int]:
    """Start positions of every (possibly overlapping) occurrence of gram in s."""
    if not gram:
        raise ValueError("gram must have length >= 1")
    positions = set()
    start = s.find(gram)
    while start != -1:
        positions.add(start)
        start = s.find(gram, start + 1)
    return positions


def grams_of(s: str, q_min: int, q_max: int) -> Iterator[tuple[int, str]]:
    """Yield (position, substring) for every substring with length in [q_min, q_max]."""
    n = len(s)
    for i in range(n):
        for q in range(q_min, min(q_max, n - i) + 1):
            yield i, s[i:i + q]


def normalize_text(text: str, alphabet: Alphabet) -> str:
    """Uppercase and drop characters not in the alphabet (lenient ingestion)."""
    out = []
    for ch in text:
        if ch in alphabet:
            out.append(ch)
            continue
        up = ch.upper()
        if up in alphabet:
            out.append(up)
    return "".join(out)


def load_dataset(path: str | Path, alphabet: Alphabet = UPPERCASE, strict: bool = True) -> Dataset:
    """Read one record per line; ids are 0-based line numbers.

    In strict mode any character outside ``alphabet`` raises AlphabetError with
    the 1-based line number. In lenient mode text is uppercased and foreign
    characters dropped; lines left empty are skipped but ids keep their line
    index.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh):
            text = raw.rstrip("\r\n")
            if strict:
                bad = [ch for ch in text if ch not in alphabet]
                if bad:
                    raise AlphabetError(
                        f"{path}:{lineno + 1}: character {bad[0]!r} not in alphabet",
                        line=lineno + 1,
                    )
                if not text:
                    raise AlphabetError(f"{path}:{lineno + 1}: empty record", line=lineno + 1)
            else:
                text = normalize_text(text, alphabet)
                if not text:
                    continue
            records.append(Record(lineno, text))
    return Dataset(tuple(records), alphabet)


def save_dataset(dataset: Dataset | Sequence[str], path: str | Path) -> None:
    texts = dataset.texts if isinstance(dataset, Dataset) else list(dataset)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for text in texts:
            fh.write(text + "\n")
