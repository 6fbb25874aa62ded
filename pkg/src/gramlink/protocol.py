"""Three-party linkage: A and B mine and embed, C matches.

Parties exchange byte payloads over an in-process channel that records every
message, so the transcript doubles as the communication-cost measurement.
C only ever receives vectors and thresholds.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import Dataset
from .dp import PrivacyBudget
from .embedding import (
    GramBase,
    ThresholdSet,
    VectorSet,
    constant_thresholds,
    embed_dataset,
    thresholds_for_dataset,
)
from .fpm import MinerConfig, ScoredGram, fpm_mine, nonprivate_mine, top_k
from .ptree import TreeConfig, ptree_mine

log = logging.getLogger(__name__)

MINERS = (
    "fpm",
    "ptree-linear",
    "ptree-exponential",
    "ptree-adaptive",
    "ptree-hybrid",
    "nonprivate",
)
MESSAGE_KINDS = ("PrivateBase", "SharedBase", "VectorSet", "ThresholdSet", "MatchReport")

# d' and th are computed along different float paths; equal values may differ by an ulp
MATCH_TOLERANCE = 1e-9


class ProtocolError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# wire formats

def encode_scored_grams(grams: Sequence[ScoredGram]) -> bytes:
    return json.dumps([[g.gram, g.noisy_frequency] for g in grams]).encode()


def decode_scored_grams(payload: bytes) -> list[ScoredGram]:
    return [ScoredGram(g, float(f)) for g, f in json.loads(payload.decode())]


def encode_base(base: GramBase) -> bytes:
    return base.to_text().encode()


def decode_base(payload: bytes) -> GramBase:
    return GramBase.from_text(payload.decode())


_HEADER = struct.Struct("<qq")


def encode_vectors(vectors: VectorSet) -> bytes:
    n, k = vectors.matrix.shape
    return (
        _HEADER.pack(n, k)
        + np.asarray(vectors.ids, dtype="<i8").tobytes()
        + np.ascontiguousarray(vectors.matrix, dtype="<f8").tobytes()
    )


def decode_vectors(payload: bytes) -> VectorSet:
    n, k = _HEADER.unpack_from(payload)
    off = _HEADER.size
    ids = np.frombuffer(payload, dtype="<i8", count=n, offset=off)
    matrix = np.frombuffer(payload, dtype="<f8", count=n * k, offset=off + 8 * n)
    return VectorSet([int(i) for i in ids], matrix.reshape(n, k).copy())


def encode_thresholds(th: ThresholdSet) -> bytes:
    return (
        _HEADER.pack(len(th), th.ed)
        + np.asarray(th.ids, dtype="<i8").tobytes()
        + np.asarray(th.values, dtype="<f8").tobytes()
    )


def decode_thresholds(payload: bytes) -> ThresholdSet:
    n, ed = _HEADER.unpack_from(payload)
    off = _HEADER.size
    ids = np.frombuffer(payload, dtype="<i8", count=n, offset=off)
    values = np.frombuffer(payload, dtype="<f8", count=n, offset=off + 8 * n)
    return ThresholdSet([int(i) for i in ids], values.copy(), ed)


_PAIR = np.dtype([("a", "<i8"), ("b", "<i8"), ("d", "<f8")])


def encode_matches(result: "MatchResult") -> bytes:
    return np.array(result.pairs, dtype=_PAIR).tobytes()


def decode_matches(payload: bytes) -> "MatchResult":
    rows = np.frombuffer(payload, dtype=_PAIR)
    return MatchResult([(int(r["a"]), int(r["b"]), float(r["d"])) for r in rows])


# ---------------------------------------------------------------------------
# channel

@dataclass(frozen=True)
class Message:
    kind: str
    sender: str
    receiver: str
    payload: bytes

    @property
    def byte_size(self) -> int:
        return len(self.payload)


@dataclass
class Channel:
    messages: list[Message] = field(default_factory=list)

    def send(self, kind: str, sender: str, receiver: str, payload: bytes) -> Message:
        if kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {kind!r}")
        msg = Message(kind, sender, receiver, payload)
        self.messages.append(msg)
        log.debug("%s -> %s: %s (%d bytes)", sender, receiver, kind, msg.byte_size)
        return msg

    def receive(self, receiver: str, kind: str, sender: str | None = None) -> Message:
        for msg in reversed(self.messages):
            if msg.receiver == receiver and msg.kind == kind and sender in (None, msg.sender):
                return msg
        raise LookupError(f"no {kind} message for {receiver}")

    def summary(self) -> dict:
        out: dict[str, dict[str, int]] = {}
        for msg in self.messages:
            entry = out.setdefault(msg.kind, {"total_bytes": 0, "count": 0})
            entry["total_bytes"] += msg.byte_size
            entry["count"] += 1
        return out


# ---------------------------------------------------------------------------
# matching

@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def neighbors(self) -> dict[int, list[tuple[int, float]]]:
        out: dict[int, list[tuple[int, float]]] = {}
        for a, b, d in self.pairs:
            out.setdefault(a, []).append((b, d))
        return out

    def to_tsv(self) -> str:
        return "".join(f"{a}\t{b}\t{d!r}\n" for a, b, d in self.pairs)

    @classmethod
    def from_tsv(cls, text: str) -> "MatchResult":
        pairs = []
        for line in text.splitlines():
            if line:
                a, b, d = line.split("\t")
                pairs.append((int(a), int(b), float(d)))
        return cls(pairs)


def merge_bases(base_a: Sequence[ScoredGram], base_b: Sequence[ScoredGram], k: int) -> GramBase:
    """Sum noisy frequencies of shared grams and keep the top k."""
    if not base_a and not base_b:
        raise ValueError("both private bases are empty")
    merged: dict[str, float] = {}
    for s in list(base_a) + list(base_b):
        merged[s.gram] = merged.get(s.gram, 0.0) + s.noisy_frequency
    return GramBase(tuple(s.gram for s in top_k(merged.items(), k)))


def match(
    vectors_a: VectorSet,
    vectors_b: VectorSet,
    thresholds: ThresholdSet,
    chunk: int = 256,
) -> MatchResult:
    """Report (id_a, id_b, d') for every pair with d' <= th of the A record.

    A BLAS pass over |a|^2 + |b|^2 - 2 a.b keeps every pair that could be
    within threshold (with slack for its rounding error); only those get an
    exact distance, so the result equals the brute-force filter.
    """
    if len(thresholds) != len(vectors_a):
        raise ValueError("need one threshold per A vector")
    if len(vectors_a) and len(vectors_b) and vectors_a.dim != vectors_b.dim:
        raise ValueError(f"dimension mismatch: {vectors_a.dim} vs {vectors_b.dim}")
    pairs: list[tuple[int, int, float]] = []
    if not len(vectors_a) or not len(vectors_b):
        return MatchResult(pairs)
    A = np.asarray(vectors_a.matrix, dtype=float)
    B = np.asarray(vectors_b.matrix, dtype=float)
    limit = np.asarray(thresholds.values, dtype=float) + MATCH_TOLERANCE
    sq_a = np.einsum("ij,ij->i", A, A)
    sq_b = np.einsum("ij,ij->i", B, B)
    ids_a, ids_b = vectors_a.ids, vectors_b.ids
    for start in range(0, len(A), chunk):
        stop = start + chunk
        approx = sq_a[start:stop, None] + sq_b[None, :] - 2.0 * (A[start:stop] @ B.T)
        slack = 1e-10 * (sq_a[start:stop, None] + sq_b[None, :]) + 1e-12
        rows, cols = np.nonzero(approx <= limit[start:stop, None] ** 2 + slack)
        rows += start
        # exact distances for the candidates, in bounded batches
        for lo in range(0, len(rows), 65536):
            r, c = rows[lo:lo + 65536], cols[lo:lo + 65536]
            d = np.sqrt(np.sum((A[r] - B[c]) ** 2, axis=1))
            keep = d <= limit[r]
            for i, j, dist in zip(r[keep], c[keep], d[keep]):
                pairs.append((ids_a[i], ids_b[j], float(dist)))
    return MatchResult(pairs)


# ---------------------------------------------------------------------------
# parties and driver

@dataclass(frozen=True)
class ProtocolConfig:
    miner: str = "fpm"
    epsilon: float = 0.1
    k: int = 75
    q_min: int = 1
    q_max: int = 3
    ed: int = 0
    # None: each party uses the rounded average length of its own data
    h_max: int | None = None
    theta: float | None = None
    split_budget: bool = False
    seed: int = 0
    merger: str = "A"
    gamma: float = 0.0
    noise_factor: float = 2.0
    # None: personalized thresholds; a number: one global threshold for all
    global_threshold: float | None = None
    workers: int = 1

    def __post_init__(self):
        if self.miner not in MINERS:
            raise ValueError(f"unknown miner {self.miner!r}; expected one of {MINERS}")
        if self.merger not in ("A", "B"):
            raise ValueError("merger must be 'A' or 'B'")
        if self.ed < 0:
            raise ValueError("ed must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.q_min <= self.q_max:
            raise ValueError("need 1 <= q_min <= q_max")

    @property
    def party_epsilon(self) -> float:
        return self.epsilon / 2 if self.split_budget else self.epsilon

    def to_dict(self) -> dict:
        return asdict(self)


class DataParty:
    """A or B: owns raw data, a budget and its own random stream."""

    def __init__(self, role: str, dataset: Dataset, config: ProtocolConfig, rng: np.random.Generator):
        self.role = role
        self.dataset = dataset
        self.config = config
        self.rng = rng
        self.budget = PrivacyBudget(config.party_epsilon)
        self.base: GramBase | None = None

    def mine(self) -> list[ScoredGram]:
        cfg = self.config
        if cfg.miner == "nonprivate":
            return nonprivate_mine(self.dataset, cfg.k, cfg.q_min, cfg.q_max)
        if cfg.miner == "fpm":
            mc = MinerConfig(cfg.k, cfg.q_min, cfg.q_max, self.budget.epsilon_total, cfg.gamma, cfg.noise_factor)
            return fpm_mine(self.dataset, mc, self.budget, self.rng)
        h_max = cfg.h_max if cfg.h_max is not None else max(1, round(self.dataset.average_length()))
        tc = TreeConfig(
            epsilon=self.budget.epsilon_total, h_max=h_max, theta=cfg.theta,
            strategy=cfg.miner.split("-", 1)[1], q_min=cfg.q_min, q_max=cfg.q_max, k=cfg.k,
        )
        return ptree_mine(self.dataset, tc, self.budget, self.rng)

    def embed(self) -> VectorSet:
        return embed_dataset(self.dataset, self.base, workers=self.config.workers)

    def thresholds(self) -> ThresholdSet:
        if self.config.global_threshold is not None:
            return constant_thresholds(self.dataset.ids, self.config.global_threshold, self.config.ed)
        return thresholds_for_dataset(self.dataset, self.base, self.config.ed)


class MatchingParty:
    """C: sees vectors and thresholds only."""

    role = "C"

    def match(self, channel: Channel) -> MatchResult:
        va = decode_vectors(channel.receive("C", "VectorSet", sender="A").payload)
        vb = decode_vectors(channel.receive("C", "VectorSet", sender="B").payload)
        th = decode_thresholds(channel.receive("C", "ThresholdSet").payload)
        if va.ids != th.ids:
            raise ValueError("threshold ids do not line up with A's vectors")
        return match(va, vb, th)


@dataclass
class ProtocolRun:
    matches: MatchResult
    channel: Channel
    base: GramBase
    budgets: dict[str, PrivacyBudget]
    timings: dict[str, float]

    @property
    def transcript(self) -> list[Message]:
        return self.channel.messages

    def transcript_summary(self) -> dict:
        return self.channel.summary()

    def linkage_time(self) -> float:
        """Mining through threshold generation; matching at C excluded."""
        return sum(v for k, v in self.timings.items() if k != "match")


def _stage(name, timings, fn, *args):
    t0 = time.perf_counter()
    try:
        return fn(*args)
    except ProtocolError:
        raise
    except Exception as exc:
        raise ProtocolError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


def run_protocol(dataset_a: Dataset, dataset_b: Dataset, config: ProtocolConfig) -> ProtocolRun:
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    a = DataParty("A", dataset_a, config, np.random.default_rng(seeds[0]))
    b = DataParty("B", dataset_b, config, np.random.default_rng(seeds[1]))
    c = MatchingParty()
    channel = Channel()
    timings: dict[str, float] = {}
    merger, other = (a, b) if config.merger == "A" else (b, a)
    parallel = config.workers > 1

    def both(name, fn):
        if parallel:
            t0 = time.perf_counter()
            with ThreadPoolExecutor(2) as pool:
                fa, fb = pool.submit(fn, a), pool.submit(fn, b)
                try:
                    out = fa.result(), fb.result()
                except Exception as exc:
                    raise ProtocolError(name, exc) from exc
            timings[name] = time.perf_counter() - t0
            return out
        return _stage(name, timings, fn, a), _stage(name, timings, fn, b)

    private_a, private_b = both("mine", DataParty.mine)
    mined = {"A": private_a, "B": private_b}
    channel.send("PrivateBase", other.role, merger.role, encode_scored_grams(mined[other.role]))

    def do_merge():
        received = decode_scored_grams(channel.receive(merger.role, "PrivateBase").payload)
        return merge_bases(mined[merger.role], received, config.k)

    base = _stage("merge", timings, do_merge)
    merger.base = base
    channel.send("SharedBase", merger.role, other.role, encode_base(base))
    other.base = decode_base(channel.receive(other.role, "SharedBase").payload)

    va, vb = both("embed", DataParty.embed)
    channel.send("VectorSet", "A", "C", encode_vectors(va))
    channel.send("VectorSet", "B", "C", encode_vectors(vb))

    th = _stage("thresholds", timings, a.thresholds)
    channel.send("ThresholdSet", "A", "C", encode_thresholds(th))

    result = _stage("match", timings, c.match, channel)
    channel.send("MatchReport", "C", "driver", encode_matches(result))
    return ProtocolRun(result, channel, base, {"A": a.budget, "B": b.budget}, timings)
