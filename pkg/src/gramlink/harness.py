"""Experiment harness: corrupted copies, F1 scoring, baselines and sweeps."""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import UPPERCASE, Alphabet, Dataset, Record, edit_distance, load_dataset
from .embedding import (
    GramBase,
    VectorSet,
    constant_thresholds,
    embed_dataset,
    thresholds_for_dataset,
)
from .protocol import MatchResult, ProtocolConfig, match, run_protocol

SAMPLES = ("cities", "names")


def load_sample(name: str, n: int | None = None) -> Dataset:
    """Bundled datasets: ``cities`` (5,000 US city names) and ``names`` (20,000 surnames)."""
    if name not in SAMPLES:
        raise ValueError(f"unknown sample {name!r}; choose from {SAMPLES}")
    path = resources.files("gramlink") / "data" / f"{name}.txt"
    with resources.as_file(path) as p:
        ds = load_dataset(p, UPPERCASE, strict=True)
    return ds.head(n) if n is not None else ds


# ---------------------------------------------------------------------------
# perturbation

@dataclass(frozen=True)
class PerturbationSpec:
    ed: int
    seed: int = 0
    substitute: float = 1.0
    insert: float = 1.0
    delete: float = 1.0
    # False applies exactly ed edits, True a uniform count in [0, ed]
    up_to: bool = False

    def __post_init__(self):
        if self.ed < 0:
            raise ValueError("ed must be >= 0")
        weights = (self.substitute, self.insert, self.delete)
        if min(weights) < 0 or sum(weights) <= 0:
            raise ValueError("operation weights must be non-negative and not all zero")


def _edit_once(text: str, op: str, alphabet: Alphabet, rng: np.random.Generator) -> str:
    symbols = alphabet.symbols
    if op == "delete" and len(text) == 1:
        op = "substitute"
    if op == "insert":
        pos = int(rng.integers(len(text) + 1))
        return text[:pos] + symbols[int(rng.integers(len(symbols)))] + text[pos:]
    pos = int(rng.integers(len(text)))
    if op == "delete":
        return text[:pos] + text[pos + 1:]
    others = [s for s in symbols if s != text[pos]]
    if not others:
        return text
    return text[:pos] + others[int(rng.integers(len(others)))] + text[pos + 1:]


def perturb_dataset(dataset: Dataset, spec: PerturbationSpec) -> Dataset:
    """Copy of ``dataset`` with random edits per record; ids are unchanged."""
    rng = np.random.default_rng(spec.seed)
    ops = ("substitute", "insert", "delete")
    w = np.array([spec.substitute, spec.insert, spec.delete], dtype=float)
    w /= w.sum()
    out = []
    for r in dataset:
        text = r.text
        n_edits = int(rng.integers(spec.ed + 1)) if spec.up_to else spec.ed
        for _ in range(n_edits):
            text = _edit_once(text, ops[int(rng.choice(3, p=w))], dataset.alphabet, rng)
        out.append(Record(r.id, text))
    return Dataset(tuple(out), dataset.alphabet)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(matches: MatchResult, ids_a: Sequence[int], ids_b: Sequence[int] | None = None) -> Metrics:
    """Score reported pairs against id-equality ground truth.

    A record of A is a false negative when its twin exists in B (all of
    ``ids_a`` when ``ids_b`` is omitted) and the pair was not reported.
    """
    reported = {(a, b) for a, b, _ in matches.pairs}
    tp = sum(1 for a, b in reported if a == b)
    fp = len(reported) - tp
    twins = set(ids_a) if ids_b is None else set(ids_a) & set(ids_b)
    found = {a for a, b in reported if a == b}
    fn = len(twins - found)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision, recall, f1, tp, fp, fn)


# ---------------------------------------------------------------------------
# baselines

def random_base(
    k: int, q_min: int, q_max: int, alphabet: Alphabet, rng: np.random.Generator,
) -> GramBase:
    """k distinct grams, lengths uniform in [q_min, q_max], symbols uniform."""
    if k < 1:
        raise ValueError("k must be >= 1")
    possible = sum(len(alphabet) ** q for q in range(q_min, q_max + 1))
    if k > possible:
        raise ValueError(f"k={k} exceeds the {possible} possible grams")
    symbols = alphabet.symbols
    grams: list[str] = []
    seen: set[str] = set()
    while len(grams) < k:
        q = int(rng.integers(q_min, q_max + 1))
        g = "".join(symbols[i] for i in rng.integers(len(symbols), size=q))
        if g not in seen:
            seen.add(g)
            grams.append(g)
    return GramBase(tuple(grams))


def lipschitz_reference_sets(
    n_sets: int = 12,
    alphabet: Alphabet = UPPERCASE,
    rng: np.random.Generator | None = None,
    pool_size: int = 1000,
    string_length: int = 10,
) -> list[list[str]]:
    """Random reference sets drawn from a pool of random strings.

    Set sizes cycle through powers of two up to 2^4, the usual Bourgain-style
    choice capped to keep the embedding cheap.
    """
    rng = rng or np.random.default_rng()
    symbols = alphabet.symbols
    pool = ["".join(symbols[i] for i in rng.integers(len(symbols), size=string_length))
            for _ in range(pool_size)]
    sets = []
    for i in range(n_sets):
        size = min(2 ** (i % 5), pool_size)
        sets.append([pool[j] for j in rng.choice(pool_size, size=size, replace=False)])
    return sets


def lipschitz_embed(dataset: Dataset, reference_sets: Sequence[Sequence[str]]) -> VectorSet:
    if not reference_sets or any(not ref for ref in reference_sets):
        raise ValueError("reference sets must be non-empty")
    rows = [[min(edit_distance(x, r.text) for x in ref) for ref in reference_sets] for r in dataset]
    matrix = np.array(rows, dtype=float).reshape(len(dataset), len(reference_sets))
    return VectorSet(dataset.ids, matrix)


# ---------------------------------------------------------------------------
# experiments

@dataclass
class ExperimentConfig:
    """Protocol parameters, one swept parameter and the repetition policy."""

    dataset: str = "cities"
    n: int | None = None
    miner: str = "fpm"
    epsilon: float = 0.1
    k: int = 75
    q_min: int = 1
    q_max: int = 3
    ed: int = 1
    h_max: int | None = None
    theta: float | None = None
    split_budget: bool = False
    base: str = "mined"  # mined | random | lipschitz
    global_threshold: float | None = None
    up_to: bool = False
    repetitions: int = 5
    seeds: list[int] | None = None
    sweep: str | None = None
    values: list = field(default_factory=list)

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else list(range(1, self.repetitions + 1))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**data)


def _dataset_for(config: ExperimentConfig) -> Dataset:
    if config.dataset in SAMPLES:
        return load_sample(config.dataset, config.n)
    ds = load_dataset(Path(config.dataset), UPPERCASE, strict=False)
    return ds.head(config.n) if config.n is not None else ds


def run_point(dataset_a: Dataset, config: ExperimentConfig, seed: int) -> dict:
    """One repetition at one sweep point."""
    dataset_b = perturb_dataset(dataset_a, PerturbationSpec(config.ed, seed=seed, up_to=config.up_to))
    t0 = time.perf_counter()
    if config.base == "mined":
        pc = ProtocolConfig(
            miner=config.miner, epsilon=config.epsilon, k=config.k, q_min=config.q_min,
            q_max=config.q_max, ed=config.ed, h_max=config.h_max, theta=config.theta,
            split_budget=config.split_budget, seed=seed, global_threshold=config.global_threshold,
        )
        run = run_protocol(dataset_a, dataset_b, pc)
        matches = run.matches
        timings = dict(run.timings)
        transcript = run.transcript_summary()
    else:
        rng = np.random.default_rng(seed)
        if config.base == "random":
            base = random_base(config.k, config.q_min, config.q_max, dataset_a.alphabet, rng)
            va, vb = embed_dataset(dataset_a, base), embed_dataset(dataset_b, base)
            if config.global_threshold is None:
                th = thresholds_for_dataset(dataset_a, base, config.ed)
            else:
                th = constant_thresholds(dataset_a.ids, config.global_threshold, config.ed)
        elif config.base == "lipschitz":
            refs = lipschitz_reference_sets(config.k, dataset_a.alphabet, rng)
            va, vb = lipschitz_embed(dataset_a, refs), lipschitz_embed(dataset_b, refs)
            # each coordinate is 1-Lipschitz in edit distance
            value = config.global_threshold if config.global_threshold is not None else config.ed * math.sqrt(config.k)
            th = constant_thresholds(dataset_a.ids, value, config.ed)
        else:
            raise ValueError(f"unknown base kind {config.base!r}")
        t1 = time.perf_counter()
        matches = match(va, vb, th)
        timings = {"embed": t1 - t0, "match": time.perf_counter() - t1}
        transcript = {}
    metrics = evaluate(matches, dataset_a.ids, dataset_b.ids)
    return {
        "seed": seed,
        "metrics": metrics.to_dict(),
        "timings": timings,
        "linkage_seconds": sum(v for key, v in timings.items() if key != "match"),
        "transcript": transcript,
    }


def _summarize(values: list[float]) -> dict:
    return {"mean": statistics.fmean(values), "min": min(values), "max": max(values)}


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every sweep point over all seeds and return a JSON-ready report."""
    dataset = _dataset_for(config)
    points = []
    sweep_values = config.values if config.sweep else [None]
    for value in sweep_values:
        point_cfg = replace(config, **{config.sweep: value}) if config.sweep else config
        label = f"{config.sweep}={value}" if config.sweep else "default"
        try:
            ds = dataset.head(point_cfg.n) if config.sweep == "n" else dataset
            runs = [run_point(ds, point_cfg, seed) for seed in config.seed_list()]
        except Exception as exc:
            raise RuntimeError(f"sweep point {label}: {exc}") from exc
        summary = {
            key: _summarize([r["metrics"][key] for r in runs])
            for key in ("precision", "recall", "f1")
        }
        summary["linkage_seconds"] = _summarize([r["linkage_seconds"] for r in runs])
        points.append({"label": label, "value": value, "n": len(ds), "summary": summary, "runs": runs})
    return {"config": config.to_dict(), "points": points}


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
