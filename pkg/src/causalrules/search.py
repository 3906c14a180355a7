"""Guided annealed search for the maximum-a-posteriori rule set.

The proposal step repairs the current model locally: draw a row that is
either wrongly covered (good control outcome or failed treated outcome)
or not yet covered among the undetermined rows, pick an edit action, and
choose the rule greedily by coverage precision with an exploration
probability. A shrinking per-length upper bound on the MAP model size
modulates how often rules are added, and a Metropolis accept/reject on the
objective drives the chain.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bitsets
from .data import Dataset
from .errors import EmptyPoolError
from .mining import CandidatePool
from .model import (
    Hyperparams,
    RuleSetModel,
    evaluate_rule_set,
    ideal_theta,
    log_prior,
)


@dataclass
class OutcomePartition:
    """Rows split by what the observed (T, y) pair reveals about the effect:
    e0 = control successes, e1 = treated failures (both known non-positive),
    u = rows whose effect sign is undetermined."""

    e0: np.ndarray
    e1: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.e01 = self.e0 | self.e1
        self.u_bits = bitsets.pack(self.u)
        self.n_u = int(self.u.sum())


def partition_outcomes(ds: Dataset) -> OutcomePartition:
    t = ds.T.astype(bool)
    y = ds.y.astype(bool)
    return OutcomePartition(e0=~t & y, e1=t & ~y, u=t == y)


def precision_q(cov: np.ndarray, part: OutcomePartition) -> float:
    """Fraction of the undetermined rows the coverage captures."""
    if part.n_u == 0:
        warnings.warn("no undetermined rows; precision defined as 0", stacklevel=2)
        return 0.0
    return float((cov & part.u).sum()) / part.n_u


def mispartition(cov: np.ndarray, part: OutcomePartition) -> tuple[np.ndarray, np.ndarray]:
    """(covered known-bad rows, uncovered undetermined rows). Both empty means
    the coverage is perfect and the search may stop."""
    return np.flatnonzero(cov & part.e01), np.flatnonzero(~cov & part.u)


@dataclass
class SearchParams:
    n_iter: int = 150
    T0: float = 1.0
    q_explore: float = 0.1
    C: float | None = None  # bound-decay constant; None uses the initial bound sum
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1 or self.T0 <= 0 or not 0.0 <= self.q_explore <= 1.0:
            raise ValueError("invalid search parameters")
        if self.C is not None and self.C <= 0:
            raise ValueError("C must be positive")


@dataclass
class BoundTracker:
    """Per-length upper bounds on how many rules the MAP model can hold,
    tightened as better objective values are found; monotonically
    non-increasing and clamped at zero."""

    m: np.ndarray
    v_best: float
    theta_ideal: float
    log_p_empty: float
    enabled: np.ndarray

    @classmethod
    def initial(
        cls,
        H: Hyperparams,
        pool_sizes: np.ndarray,
        theta_ideal: float,
        log_p_empty: float,
        v_start: float,
    ) -> "BoundTracker":
        tracker = cls(
            m=np.asarray(pool_sizes, dtype=np.float64).copy(),
            v_best=v_start,
            theta_ideal=theta_ideal,
            log_p_empty=log_p_empty,
            enabled=H.alpha < H.beta,
        )
        tracker.update(H, pool_sizes)
        return tracker

    def update(self, H: Hyperparams, pool_sizes: np.ndarray) -> np.ndarray:
        numer = self.theta_ideal + self.log_p_empty - self.v_best
        sizes = np.asarray(pool_sizes, dtype=np.float64)
        for l in range(self.m.size):
            if not self.enabled[l]:
                continue
            prev = self.m[l]
            den_arg = prev + H.alpha[l] - 1.0
            if den_arg <= 0.0:
                new = 0.0
            else:
                new = numer / np.log((sizes[l] + H.beta[l] - 1.0) / den_arg)
            self.m[l] = min(prev, max(0.0, new))
        return self.m

    @property
    def total(self) -> float:
        return float(self.m.sum())


def _pick(eligible: list[int], explore: bool, rng, score) -> int:
    """A rule from `eligible` (ascending ids): uniform when exploring, else
    the score argmax with ties to the lowest id."""
    if explore:
        return eligible[int(rng.integers(len(eligible)))]
    scores = score(eligible)
    return eligible[int(np.argmax(scores))]


def _q_add_scores(cands: list[int], cov: np.ndarray, pool: CandidatePool, part: OutcomePartition):
    gain_bits = bitsets.pack(part.u & ~cov)
    return bitsets.popcount_rows(pool.coverage_bits[cands] & gain_bits)


def _q_cut_scores(ids: tuple[int, ...], elig: list[int], pool: CandidatePool, part: OutcomePartition):
    scores = []
    for a in elig:
        rest = [i for i in ids if i != a]
        union = bitsets.union(pool.coverage_bits[rest]) if rest else bitsets.zeros(pool.n_rows)
        scores.append(bitsets.popcount(union & part.u_bits))
    return scores


def propose(
    ids: tuple[int, ...],
    cov: np.ndarray,
    pool: CandidatePool,
    part: OutcomePartition,
    q_explore: float,
    rng: np.random.Generator,
    bound_total: float,
    C: float,
) -> tuple[tuple[int, ...], str]:
    """One local edit of the rule set: ADD, CUT, or REPLACE seeded by a row
    drawn from the covered-bad/uncovered-undetermined pool.

    A row the current set covers wrongly triggers CUT or REPLACE (1/2 each)
    over the member rules covering it. An uncovered undetermined row mixes
    CUT/ADD/REPLACE, with the ADD probability exp(-sum(m)/C)/3 taken out of
    CUT's 2/3 share. Infeasible actions fall back to the first feasible one
    in (CUT, REPLACE, ADD) order; with nothing feasible the set is returned
    unchanged.
    """
    eps_idx, u_idx = mispartition(cov, part)
    total = eps_idx.size + u_idx.size
    if total == 0:
        return ids, "none"
    j = int(rng.integers(total))
    in_eps = j < eps_idx.size
    k = int(eps_idx[j]) if in_eps else int(u_idx[j - eps_idx.size])

    r1 = pool.rules_covering_row()[k]
    a_set = set(ids)
    add_cands = [int(i) for i in r1 if int(i) not in a_set]
    if in_eps:
        elig_remove = [int(i) for i in r1 if int(i) in a_set]
        action = "cut" if rng.random() < 0.5 else "replace"
        menu = ("cut", "replace")
    else:
        p_add = float(np.exp(-bound_total / C)) / 3.0
        p_cut = 2.0 / 3.0 - p_add
        x = rng.random()
        action = "cut" if x < p_cut else ("add" if x < p_cut + p_add else "replace")
        elig_remove = sorted(a_set)
        menu = ("cut", "replace", "add")

    def feasible(act: str) -> bool:
        if act == "add":
            return len(add_cands) > 0
        if act == "cut":
            return len(elig_remove) > 0
        # replace: after removing z, z itself re-enters the candidates when
        # it covers row k, so the add step can always proceed in that case
        return len(elig_remove) > 0 and (len(add_cands) > 0 or in_eps)

    if not feasible(action):
        for alt in menu:
            if alt != action and feasible(alt):
                action = alt
                break
        else:
            return ids, "none"

    def explore() -> bool:
        return rng.random() < q_explore

    if action == "cut":
        z = _pick(elig_remove, explore(), rng, lambda e: _q_cut_scores(ids, e, pool, part))
        return tuple(sorted(a_set - {z})), "cut"

    if action == "add":
        z = _pick(add_cands, explore(), rng, lambda e: _q_add_scores(e, cov, pool, part))
        return tuple(sorted(a_set | {z})), "add"

    z1 = _pick(elig_remove, explore(), rng, lambda e: _q_cut_scores(ids, e, pool, part))
    mid = a_set - {z1}
    mid_ids = tuple(sorted(mid))
    mid_cov = (
        bitsets.unpack(bitsets.union(pool.coverage_bits[list(mid_ids)]), pool.n_rows)
        if mid_ids
        else np.zeros(pool.n_rows, dtype=bool)
    )
    cands2 = [int(i) for i in r1 if int(i) not in mid]
    if not cands2:
        return mid_ids, "cut"  # degenerate replace: nothing to add back
    z2 = _pick(cands2, explore(), rng, lambda e: _q_add_scores(e, mid_cov, pool, part))
    return tuple(sorted(mid | {z2})), "replace"


@dataclass
class TraceRow:
    t: int
    action: str
    accepted: bool
    f_current: float
    f_best: float
    n_rules: int
    q: float
    sum_m: float


@dataclass
class SearchTrace:
    rows: list[TraceRow]
    best_history: list[tuple[int, tuple[int, ...]]]  # (iteration, rule ids) at improvements

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "action", "accepted", "F_current", "F_best", "n_rules", "Q", "sum_m_l"]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.t,
                        r.action,
                        int(r.accepted),
                        repr(r.f_current),
                        repr(r.f_best),
                        r.n_rules,
                        repr(r.q),
                        repr(r.sum_m),
                    ]
                )


def search(
    pool: CandidatePool, ds: Dataset, H: Hyperparams, params: SearchParams
) -> tuple[RuleSetModel, SearchTrace]:
    """Run the annealed chain and return the best model seen plus the trace.

    Starts from the empty set, proposes one edit per iteration, refits the
    weights (warm-started from the current state), tracks the best objective
    and the shrinking size bounds, and accepts with probability
    min(1, exp((F_new - F_cur) / T(t))) under T(t) = T0^(1 - t/n_iter).
    """
    if pool.n_rules == 0:
        raise EmptyPoolError("cannot search an empty pool")
    rng = np.random.default_rng(params.seed)
    part = partition_outcomes(ds)

    current = evaluate_rule_set((), pool, ds, H)
    best = current
    v_best = current.logF
    theta_id = ideal_theta(ds, H)
    log_p_empty = log_prior(np.zeros(H.L), H, pool.sizes)
    tracker = BoundTracker.initial(H, pool.sizes, theta_id, log_p_empty, v_best)
    C = params.C if params.C is not None else max(tracker.total, 1e-12)

    cov = np.zeros(ds.n, dtype=bool)
    rows: list[TraceRow] = []
    history: list[tuple[int, tuple[int, ...]]] = [(-1, ())]

    for t in range(params.n_iter):
        eps_idx, u_idx = mispartition(cov, part)
        if eps_idx.size + u_idx.size == 0:
            break  # perfect cover, nothing to repair

        cand_ids, action = propose(
            current.rule_ids, cov, pool, part, params.q_explore, rng, tracker.total, C
        )
        candidate = evaluate_rule_set(cand_ids, pool, ds, H, w0=current.weights)

        if candidate.logF >= v_best:
            v_best = candidate.logF
            best = candidate
            history.append((t, candidate.rule_ids))
        tracker.v_best = v_best
        tracker.update(H, pool.sizes)

        temp = params.T0 ** (1.0 - t / params.n_iter)
        delta = candidate.logF - current.logF
        p_accept = 1.0 if delta >= 0 else float(np.exp(delta / temp))
        accepted = bool(rng.random() < p_accept)
        if accepted:
            current = candidate
            cov = bitsets.unpack(candidate.coverage_bits, ds.n)
        rows.append(
            TraceRow(
                t=t,
                action=action,
                accepted=accepted,
                f_current=current.logF,
                f_best=v_best,
                n_rules=len(current.rule_ids),
                q=precision_q(cov, part),
                sum_m=tracker.total,
            )
        )
    return best, SearchTrace(rows=rows, best_history=history)
