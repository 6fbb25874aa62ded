"""Top-k variable-length gram mining by truncated, perturbed supports.

One private run per gram length q in [q_min, q_max], each with epsilon / dq,
then a final top-k over the pooled noisy scores.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import Dataset
from .dp import PrivacyBudget, sample_laplace


@dataclass(frozen=True)
class ScoredGram:
    gram: str
    noisy_frequency: float


@dataclass(frozen=True)
class MinerConfig:
    k: int = 75
    q_min: int = 1
    q_max: int = 3
    epsilon: float = 0.1
    gamma: float = 0.0
    # per-candidate Laplace scale is noise_factor * k / epsilon_run
    noise_factor: float = 2.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.q_min <= self.q_max:
            raise ValueError("need 1 <= q_min <= q_max")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def delta_q(self) -> int:
        return self.q_max - self.q_min + 1


def top_k(scored: Iterable[tuple[str, float]], k: int) -> list[ScoredGram]:
    """Highest score first, ties broken by lexicographic gram order."""
    ranked = sorted(scored, key=lambda item: (-item[1], item[0]))
    return [ScoredGram(g, float(f)) for g, f in ranked[:k]]


def support(dataset: Dataset, gram: str) -> int:
    """Number of records containing gram at least once."""
    return sum(1 for r in dataset if gram in r.text)


def supports_of_length(dataset: Dataset, q: int) -> Counter:
    counts: Counter = Counter()
    for r in dataset:
        t = r.text
        counts.update({t[i:i + q] for i in range(len(t) - q + 1)})
    return counts


def mine_fixed_length(
    dataset: Dataset,
    q: int,
    k: int,
    epsilon_run: float,
    gamma: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    noise_factor: float = 2.0,
) -> list[ScoredGram]:
    if not epsilon_run > 0:
        raise ValueError("epsilon_run must be positive")
    budget.charge(epsilon_run, label=f"fpm q={q}")
    counts = supports_of_length(dataset, q)
    if not counts:
        return []
    ordered = sorted(counts.values(), reverse=True)
    f_k = ordered[k - 1] if len(ordered) >= k else 0
    cutoff = max(f_k - gamma, 1)
    candidates = sorted(g for g, c in counts.items() if c >= cutoff)
    noise = sample_laplace(noise_factor * k / epsilon_run, rng, size=len(candidates))
    return top_k(((g, counts[g] + n) for g, n in zip(candidates, noise)), k)


def fpm_mine(
    dataset: Dataset,
    config: MinerConfig,
    budget: PrivacyBudget,
    rng: np.random.Generator,
) -> list[ScoredGram]:
    eps_run = config.epsilon / config.delta_q
    pooled: list[ScoredGram] = []
    for q in range(config.q_min, config.q_max + 1):
        pooled.extend(mine_fixed_length(
            dataset, q, config.k, eps_run, config.gamma, budget, rng, config.noise_factor,
        ))
    return top_k(((s.gram, s.noisy_frequency) for s in pooled), config.k)


def nonprivate_mine(dataset: Dataset, k: int, q_min: int, q_max: int) -> list[ScoredGram]:
    """Exact top-k grams by record support over all lengths; spends no budget."""
    pooled: Counter = Counter()
    for q in range(q_min, q_max + 1):
        pooled.update(supports_of_length(dataset, q))
    return top_k(pooled.items(), k)
