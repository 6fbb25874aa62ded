"""Laplace noise, noisy counting queries and a composition-aware budget accountant.

Charges carry a *scope*: a string path such as a prefix-tree label. Two charges
compose sequentially when one scope is a prefix of the other and in parallel
otherwise, so sibling queries over disjoint partitions do not add up. Charges
that all use the root scope ``""`` compose purely sequentially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

# Slack for float round-off when a schedule spends the budget exactly.
BUDGET_TOLERANCE = 1e-9


class BudgetExceededError(RuntimeError):
    """A charge would push a composition chain past the total budget."""


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw from Lap(0, scale); returns a float when ``size`` is None."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    value = rng.laplace(0.0, scale, size=size)
    return float(value) if size is None else value


def laplace_cdf(x, scale: float):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(x / scale), 1.0 - 0.5 * np.exp(-x / scale))


def audit_sequential(charges: Iterable[float]) -> float:
    charges = list(charges)
    if any(c <= 0 for c in charges):
        raise ValueError("charges must be positive")
    return math.fsum(charges)


def audit_parallel(group_totals: Iterable[float]) -> float:
    return max(group_totals, default=0.0)


@dataclass
class Charge:
    label: str
    epsilon: float
    scope: str = ""


@dataclass
class PrivacyBudget:
    """Tracks charges against ``epsilon_total``.

    The effective spend is the largest sum of charges along any chain of nested
    scopes. A charge is rejected (BudgetExceededError) if some chain through its
    scope would exceed the total; a chain summing to exactly the total is
    accepted.
    """

    epsilon_total: float
    spent: list[Charge] = field(default_factory=list)

    def __post_init__(self):
        if not self.epsilon_total > 0:
            raise ValueError("epsilon_total must be positive")
        self._own: dict[str, float] = {}
        # best chain total strictly below each scope
        self._below: dict[str, float] = {}

    def _ancestors(self, scope: str):
        return (scope[:i] for i in range(len(scope)) if scope[:i] in self._own)

    def _chain_through(self, scope: str, extra: float) -> float:
        above = math.fsum(self._own[a] for a in self._ancestors(scope))
        return above + self._own.get(scope, 0.0) + extra + self._below.get(scope, 0.0)

    def remaining(self, scope: str = "") -> float:
        return self.epsilon_total - self._chain_through(scope, 0.0)

    def charge(self, epsilon: float, label: str = "query", scope: str = "") -> None:
        if not epsilon > 0:
            raise ValueError(f"charge must be positive, got {epsilon}")
        total = self._chain_through(scope, epsilon)
        if total > self.epsilon_total + BUDGET_TOLERANCE:
            raise BudgetExceededError(
                f"charge {label!r} of {epsilon:.6g} at scope {scope!r} would spend "
                f"{total:.6g} > budget {self.epsilon_total:.6g}"
            )
        self.spent.append(Charge(label, epsilon, scope))
        self._own[scope] = self._own.get(scope, 0.0) + epsilon
        # propagate the new chain value to every registered ancestor
        child_best = self._own[scope] + self._below.get(scope, 0.0)
        for i in range(len(scope) - 1, -1, -1):
            anc = scope[:i]
            if child_best <= self._below.get(anc, 0.0):
                break
            self._below[anc] = child_best
            child_best = self._own.get(anc, 0.0) + child_best

    @property
    def total_spent(self) -> float:
        """Worst-case spend over all scope chains."""
        return self._own.get("", 0.0) + self._below.get("", 0.0)

    def charges(self, scope: str | None = None) -> list[float]:
        return [c.epsilon for c in self.spent if scope is None or c.scope == scope]


def noisy_count(
    true_count: int,
    epsilon: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    label: str = "count",
    scope: str = "",
) -> float:
    """Sensitivity-1 count released as ``true_count + Lap(1/epsilon)``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    budget.charge(epsilon, label, scope)
    return true_count + sample_laplace(1.0 / epsilon, rng)
