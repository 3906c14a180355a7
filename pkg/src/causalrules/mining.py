"""Frequent-conjunction mining and candidate-pool assembly.

Conjunctions are mined with FP-Growth from the effect-positive (z=1)
subpopulation, then screened: a covariate-balance validity check drops
confounded rules, and a propensity-matched effect estimate ranks the rest.
Coverage bitsets are computed over all training rows, since the model
applies every rule to everyone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bitsets
from .data import Dataset
from .errors import DataError, EmptyPoolError
from .vtwins import ZLabels, covariate_balance_pvalues, matched_ate


@dataclass(frozen=True)
class Rule:
    """A conjunction of condition columns, identified by sorted column ids."""

    condition_column_ids: tuple[int, ...]

    def __post_init__(self):
        ids = self.condition_column_ids
        if not ids or any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("condition ids must be non-empty and strictly increasing")

    @property
    def length(self) -> int:
        return len(self.condition_column_ids)


@dataclass
class Screen:
    """Pool screening knobs: balance-test level (None disables the check)
    and the number of top-ranked rules to keep (None keeps all)."""

    alpha: float | None = 0.05
    top_m: int | None = None


class _Node:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item, count, parent):
        self.item = item
        self.count = count
        self.parent = parent
        self.children = {}


def _mine_tree(item_nodes: dict, suffix: tuple, threshold: float, max_len: int, out: dict):
    # item_nodes: item -> list of tree nodes; items visited in ascending id
    # order so the output is deterministic.
    for item in sorted(item_nodes):
        nodes = item_nodes[item]
        support = sum(n.count for n in nodes)
        if support < threshold:
            continue
        itemset = tuple(sorted((item,) + suffix))
        out[itemset] = support
        if len(itemset) >= max_len:
            continue
        # Conditional pattern base: prefix paths of `item`, weighted by its
        # node counts, restricted to items still frequent within the base.
        paths = []
        base_counts: dict[int, int] = {}
        for node in nodes:
            path = []
            p = node.parent
            while p.item is not None:
                path.append(p.item)
                p = p.parent
            if path:
                path.reverse()
                paths.append((path, node.count))
                for it in path:
                    base_counts[it] = base_counts.get(it, 0) + node.count
        keep = {it for it, c in base_counts.items() if c >= threshold}
        if not keep:
            continue
        root = _Node(None, 0, None)
        cond_nodes: dict[int, list[_Node]] = {}
        for path, count in paths:
            filtered = [it for it in path if it in keep]
            filtered.sort(key=lambda it: (-base_counts[it], it))
            cur = root
            for it in filtered:
                nxt = cur.children.get(it)
                if nxt is None:
                    nxt = _Node(it, 0, cur)
                    cur.children[it] = nxt
                    cond_nodes.setdefault(it, []).append(nxt)
                nxt.count += count
                cur = nxt
        _mine_tree(cond_nodes, itemset, threshold, max_len, out)


def fp_growth(rows: np.ndarray, min_support: float, max_len: int) -> dict[tuple[int, ...], int]:
    """All itemsets of size <= max_len whose support fraction among the given
    transactions is >= min_support, mapped to their support counts.

    `rows` is a binary transaction matrix; items are its column indices.
    """
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DataError("empty transaction set")
    if not 0.0 < min_support <= 1.0:
        raise ValueError("min_support must be in (0, 1]")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    dense = rows != 0
    n_trans = dense.shape[0]
    threshold = min_support * n_trans - 1e-9

    item_counts = dense.sum(axis=0)
    frequent = [int(j) for j in np.flatnonzero(item_counts >= threshold)]
    out: dict[tuple[int, ...], int] = {}
    if not frequent:
        return out
    counts = {j: int(item_counts[j]) for j in frequent}

    root = _Node(None, 0, None)
    item_nodes: dict[int, list[_Node]] = {}
    for r in range(n_trans):
        present = [j for j in frequent if dense[r, j]]
        present.sort(key=lambda j: (-counts[j], j))
        cur = root
        for it in present:
            nxt = cur.children.get(it)
            if nxt is None:
                nxt = _Node(it, 0, cur)
                cur.children[it] = nxt
                item_nodes.setdefault(it, []).append(nxt)
            nxt.count += 1
            cur = nxt

    _mine_tree(item_nodes, (), threshold, max_len, out)
    return out


@dataclass
class CandidatePool:
    """Screened candidate rules with coverage bitsets over the training rows.

    Rules are ordered by (length, condition ids); `sizes[l-1]` counts the
    rules of each length 1..L.
    """

    rules: list[Rule]
    coverage_bits: np.ndarray
    n_rows: int
    L: int
    sizes: np.ndarray
    support: np.ndarray
    ate: np.ndarray
    min_balance_p: np.ndarray
    n_z_rows: int
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_rules(self) -> int:
        return len(self.rules)

    def rules_of_length(self, length: int) -> list[int]:
        return [i for i, r in enumerate(self.rules) if r.length == length]

    def rules_covering_row(self) -> list[np.ndarray]:
        """For each row, the sorted ids of rules covering it (memoized)."""
        if "row_rules" not in self._memo:
            masks = np.unpackbits(self.coverage_bits, axis=1, count=self.n_rows).astype(bool)
            self._memo["row_rules"] = [np.flatnonzero(masks[:, r]) for r in range(self.n_rows)]
        return self._memo["row_rules"]


def rule_coverage_mask(ids: tuple[int, ...], X: np.ndarray) -> np.ndarray:
    """Rows satisfying every condition column in `ids`."""
    return (X[:, list(ids)] == 1.0).all(axis=1)


def build_pool(
    itemsets: dict[tuple[int, ...], int],
    ds: Dataset,
    zl: ZLabels,
    screen: Screen,
    L: int | None = None,
) -> CandidatePool:
    """Screen mined itemsets into the candidate pool.

    Rules failing the covariate-balance check at screen.alpha are dropped
    (alpha=None skips the check); survivors are ranked by matched effect,
    ties broken by larger support then lexicographic ids, and the top_m
    kept. Rules whose coverage leaves an arm empty have no defined effect
    estimate and are dropped.
    """
    if not itemsets:
        raise EmptyPoolError("no mined itemsets to screen")
    max_len = max(len(k) for k in itemsets)
    L = max_len if L is None else L
    if max_len > L:
        raise ValueError(f"itemset of length {max_len} exceeds L={L}")

    candidates = sorted(set(itemsets))  # dedupe + deterministic order
    kept: list[tuple[tuple[int, ...], int, float, float]] = []
    for ids in candidates:
        cov = rule_coverage_mask(ids, ds.X)
        rows = np.flatnonzero(cov)
        if rows.size == 0:
            continue
        min_p = float("nan")
        if screen.alpha is not None:
            pvalues = covariate_balance_pvalues(rows, ds)
            if pvalues is None:
                continue
            informative = ~np.isnan(pvalues)
            if informative.any():
                min_p = float(np.min(pvalues[informative]))
                if not np.all(pvalues[informative] > screen.alpha):
                    continue
        t_covered = ds.T[rows]
        if not (t_covered == 1).any() or not (t_covered == 0).any():
            continue
        kept.append((ids, int(itemsets[ids]), matched_ate(rows, ds), min_p))

    if not kept:
        raise EmptyPoolError("empty pool: every mined rule was screened out")

    kept.sort(key=lambda rec: (-rec[2], -rec[1], rec[0]))
    if screen.top_m is not None:
        kept = kept[: screen.top_m]

    kept.sort(key=lambda rec: (len(rec[0]), rec[0]))
    rules = [Rule(ids) for ids, _, _, _ in kept]
    masks = np.stack([rule_coverage_mask(r.condition_column_ids, ds.X) for r in rules])
    sizes = np.zeros(L, dtype=np.int64)
    for r in rules:
        sizes[r.length - 1] += 1
    return CandidatePool(
        rules=rules,
        coverage_bits=bitsets.pack_matrix(masks),
        n_rows=ds.n,
        L=L,
        sizes=sizes,
        support=np.array([s for _, s, _, _ in kept], dtype=np.int64),
        ate=np.array([a for _, _, a, _ in kept], dtype=np.float64),
        min_balance_p=np.array([p for _, _, _, p in kept], dtype=np.float64),
        n_z_rows=int(np.sum(zl.z == 1)),
    )


def pool_audit(pool: CandidatePool, ds: Dataset) -> dict:
    """JSON-ready pool listing, sorted by screened effect estimate descending."""
    strings = ds.condition_strings()
    order = sorted(
        range(pool.n_rules),
        key=lambda i: (-pool.ate[i], -pool.support[i], pool.rules[i].condition_column_ids),
    )
    entries = []
    for i in order:
        rule = pool.rules[i]
        min_p = pool.min_balance_p[i]
        entries.append(
            {
                "conditions": [strings[c] for c in rule.condition_column_ids],
                "length": rule.length,
                "support_z": int(pool.support[i]),
                "support_fraction_z": pool.support[i] / pool.n_z_rows if pool.n_z_rows else None,
                "coverage_rows": int(bitsets.popcount(pool.coverage_bits[i])),
                "matched_ate": float(pool.ate[i]),
                "min_balance_p": None if np.isnan(min_p) else float(min_p),
            }
        )
    return {
        "n_rules": pool.n_rules,
        "sizes_by_length": [int(s) for s in pool.sizes],
        "n_z_rows": pool.n_z_rows,
        "rules": entries,
    }
