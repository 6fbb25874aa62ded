"""Private prefix-tree partitioning and frequent-gram extraction.

Every node holds a prefix, a noisy count of the records starting with that
prefix, and the ids of those records. Children of a node query disjoint
record subsets, so budgets add along a root-to-leaf path and not across
siblings. Grams are read off the finished tree by crediting each prefix's
count to each of its suffixes with a length in [q_min, q_max].
"""

from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .core import Alphabet, Dataset
from .dp import PrivacyBudget, noisy_count
from .fpm import ScoredGram, top_k

STRATEGIES = ("linear", "exponential", "adaptive", "hybrid")

# remaining path budget below this is treated as exhausted
_EXHAUSTED = 1e-12

# Default theta is this many standard deviations (sqrt(2) / eps) of the query
# noise. One deviation lets an empty child through with probability 0.12, so
# each empty node spawns ~3 noise children over a 26-symbol alphabet and the
# tree fills with empty partitions down to h_max; at two deviations the
# expected number of noise children per empty node drops below one.
THETA_DEVIATIONS = 2.0


@dataclass(frozen=True)
class TreeConfig:
    epsilon: float = 0.1
    h_max: int = 7
    # None selects THETA_DEVIATIONS * sqrt(2) / eps_query per query
    theta: float | None = None
    strategy: str = "hybrid"
    q_min: int = 1
    q_max: int = 3
    k: int = 75

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.h_max < 0:
            raise ValueError("h_max must be >= 0")
        if not 1 <= self.q_min <= self.q_max:
            raise ValueError("need 1 <= q_min <= q_max")
        if self.h_max < self.q_max:
            warnings.warn(
                f"h_max={self.h_max} < q_max={self.q_max}: grams of length q_max cannot be extracted",
                stacklevel=2,
            )

    def theta_for(self, eps_query: float) -> float:
        if self.theta is not None:
            return self.theta
        return THETA_DEVIATIONS * math.sqrt(2.0) / eps_query


@dataclass
class PrefixTreeNode:
    label: str
    noisy_count: float | None
    partition: list[int]
    epsilon_used: float
    budget_accumulated: float
    depth: int
    theta: float = 0.0
    children: dict[str, "PrefixTreeNode"] = field(default_factory=dict)

    def iter_nodes(self) -> Iterator["PrefixTreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(list(node.children.values())))


@dataclass
class PrefixTree:
    root: PrefixTreeNode
    config: TreeConfig
    alphabet: Alphabet

    def nodes(self) -> Iterator[PrefixTreeNode]:
        return self.root.iter_nodes()

    def leaves(self) -> Iterator[PrefixTreeNode]:
        return (n for n in self.nodes() if not n.children)

    def paths(self) -> Iterator[list[PrefixTreeNode]]:
        """Every root-to-leaf path, root first."""
        def walk(node, path):
            path = path + [node]
            if not node.children:
                yield path
            for child in node.children.values():
                yield from walk(child, path)
        yield from walk(self.root, [])

    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def extract(self, q_min: int, q_max: int, k: int) -> list[ScoredGram]:
        """Re-mine this tree for other gram parameters at no privacy cost.

        Hybrid trees split their budget around the build-time q_max and are
        locked to it.
        """
        if self.config.strategy == "hybrid" and q_max > self.config.q_max:
            raise ValueError(
                f"hybrid tree was built for q_max={self.config.q_max}; rebuild to mine q_max={q_max}"
            )
        return extract_grams(self, q_min, q_max, k)

    def to_dict(self) -> dict:
        """Serializable view. Partitions are private state and are left out."""
        def dump(node):
            return {
                "label": node.label,
                "noisy_count": node.noisy_count,
                "epsilon_used": node.epsilon_used,
                "depth": node.depth,
                "children": [dump(c) for c in node.children.values()],
            }
        return {
            "strategy": self.config.strategy,
            "epsilon": self.config.epsilon,
            "h_max": self.config.h_max,
            "root": dump(self.root),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _scheduled(level: int, config: TreeConfig) -> float:
    eps, h, qmax = config.epsilon, config.h_max, config.q_max
    if config.strategy == "linear":
        return eps / h
    if config.strategy in ("exponential", "adaptive"):
        return eps * 2.0 ** level / (2.0 ** (h + 1) - 1)
    # hybrid
    if level <= qmax:
        return eps * (level + 1) / (qmax * (qmax + 1))
    return eps * 2.0 ** (level - qmax - 1) / (2 * (2.0 ** (h - qmax) - 1))


def allocate_budget(node: PrefixTreeNode, config: TreeConfig) -> float:
    """Budget for each child query of ``node`` (children sit at level node.depth + 1).

    Adaptive and hybrid spend the whole remaining path budget once a node's
    noisy count falls to 2 * theta or below. The result never exceeds what is
    left on the path.
    """
    remaining = config.epsilon - node.budget_accumulated
    if remaining <= _EXHAUSTED:
        return 0.0
    if (
        config.strategy in ("adaptive", "hybrid")
        and node.noisy_count is not None
        and node.noisy_count <= 2 * node.theta
    ):
        return remaining
    return min(_scheduled(node.depth + 1, config), remaining)


def build_tree(
    dataset: Dataset,
    config: TreeConfig,
    budget: PrivacyBudget,
    rng: np.random.Generator,
) -> PrefixTree:
    alphabet = dataset.alphabet
    texts = {r.id: r.text for r in dataset}
    root = PrefixTreeNode(
        label="", noisy_count=None, partition=sorted(texts),
        epsilon_used=0.0, budget_accumulated=0.0, depth=0,
    )

    def expand(node: PrefixTreeNode) -> None:
        if node.depth >= config.h_max:
            return
        eps = allocate_budget(node, config)
        if eps <= _EXHAUSTED:
            return
        theta = config.theta_for(eps)
        # one pass splits the partition by next symbol; id order is preserved
        by_symbol = defaultdict(list)
        for rid in node.partition:
            t = texts[rid]
            if len(t) > node.depth:
                by_symbol[t[node.depth]].append(rid)
        for a in alphabet:
            label = node.label + a
            part = by_symbol.get(a, [])
            count = noisy_count(len(part), eps, budget, rng, label=f"ptree {label}", scope=label)
            if count > theta:
                child = PrefixTreeNode(
                    label=label, noisy_count=count, partition=part,
                    epsilon_used=eps, budget_accumulated=node.budget_accumulated + eps,
                    depth=node.depth + 1, theta=theta,
                )
                node.children[a] = child
                expand(child)

    expand(root)
    return PrefixTree(root, config, alphabet)


def _copy_tree(tree: PrefixTree) -> PrefixTree:
    def copy(node):
        new = PrefixTreeNode(
            node.label, node.noisy_count, list(node.partition), node.epsilon_used,
            node.budget_accumulated, node.depth, node.theta,
        )
        new.children = {a: copy(c) for a, c in node.children.items()}
        return new
    return PrefixTree(copy(tree.root), tree.config, tree.alphabet)


def enforce_consistency(tree: PrefixTree) -> PrefixTree:
    """Return a copy whose counts satisfy both parent/child constraints.

    Top-down: children are clamped into [0, parent]; if their sum still
    exceeds the parent they are scaled by parent / sum. The root carries no
    released count and constrains nothing.
    """
    out = _copy_tree(tree)
    stack = [out.root]
    while stack:
        node = stack.pop()
        kids = list(node.children.values())
        if not kids:
            continue
        for c in kids:
            c.noisy_count = max(c.noisy_count, 0.0)
        if node.noisy_count is not None:
            parent = node.noisy_count
            for c in kids:
                c.noisy_count = min(c.noisy_count, parent)
            original = [c.noisy_count for c in kids]
            total = math.fsum(original)
            if total > parent:
                scale = parent / total
                # step the factor down until rounding cannot push the sum past parent
                while math.fsum(v * scale for v in original) > parent:
                    scale = float(np.nextafter(scale, 0.0))
                for c, v in zip(kids, original):
                    c.noisy_count = v * scale
        stack.extend(kids)
    return out


def check_consistency(tree: PrefixTree, tol: float = 0.0) -> list[str]:
    """Labels of nodes violating either constraint (empty when consistent)."""
    bad = []
    for node in tree.nodes():
        if node.noisy_count is None or not node.children:
            continue
        counts = [c.noisy_count for c in node.children.values()]
        if any(c > node.noisy_count + tol or c < 0 for c in counts):
            bad.append(node.label)
        elif math.fsum(counts) > node.noisy_count + tol:
            bad.append(node.label)
    return bad


def extract_grams(tree: PrefixTree, q_min: int, q_max: int, k: int) -> list[ScoredGram]:
    freq: dict[str, float] = defaultdict(float)
    for node in tree.nodes():
        w = node.label
        if node.noisy_count is None or len(w) < q_min:
            continue
        for q in range(q_min, min(q_max, len(w)) + 1):
            freq[w[-q:]] += node.noisy_count
    return top_k(freq.items(), k)


def ptree_mine(
    dataset: Dataset,
    config: TreeConfig,
    budget: PrivacyBudget,
    rng: np.random.Generator,
) -> list[ScoredGram]:
    """Build, make consistent, extract.

    To re-mine with other (q_min, q_max, k), keep the consistent tree from
    ``enforce_consistency(build_tree(...))`` and call ``PrefixTree.extract``.
    """
    tree = enforce_consistency(build_tree(dataset, config, budget, rng))
    return extract_grams(tree, config.q_min, config.q_max, config.k)


def path_budgets(tree: PrefixTree) -> list[float]:
    """Sequential spend of every root-to-leaf path."""
    return [math.fsum(n.epsilon_used for n in path) for path in tree.paths()]
