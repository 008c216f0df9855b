"""Client-selection policies.

Classic-PSP draws a uniform sample of the online nodes. AW-PSP filters out
nodes that look failed or sit in a currently failing correlated cluster,
weights the rest by their availability-derived sampling probability and a
participation-age factor, ranks them, and refines the top of the ranking
for label coverage.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .availability import (
    AvailabilityParams,
    NodeTelemetry,
    overall_availability,
    predict_availability,
    recovery_probability,
    window_availability,
)
from .correlation import CorrelationState, ProximityWeights

log = logging.getLogger(__name__)

__all__ = [
    "PolicyKind",
    "FreshnessMode",
    "SelectionPolicy",
    "SelectionRound",
    "sampling_probability",
    "freshness",
    "idle_credit",
    "freshness_weight",
    "select_classic_psp",
    "select_aw_psp",
    "greedy_coverage",
]


class PolicyKind(str, Enum):
    CLASSIC_PSP = "classic_psp"
    AW_PSP = "aw_psp"


class FreshnessMode(str, Enum):
    # weight = exp(-age / tau): favours the most recent participants
    RECENCY = "recency"
    # weight = 1 - exp(-age / tau): favours nodes that have waited longest
    IDLE = "idle"
    NONE = "none"


@dataclass(frozen=True)
class SelectionPolicy:
    kind: PolicyKind = PolicyKind.AW_PSP
    target_count: int = 5
    base_p: float = 1.0
    freshness_tau: float = 10.0
    freshness_mode: FreshnessMode = FreshnessMode.IDLE
    pool_factor: int = 2
    bernoulli: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "freshness_mode", FreshnessMode(self.freshness_mode))
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if not 0.0 < self.base_p <= 1.0:
            raise ValueError("base_p must lie in (0, 1]")
        if not self.freshness_tau > 0:
            raise ValueError("freshness_tau must be positive")
        if self.pool_factor < 1:
            raise ValueError("pool_factor must be >= 1")


@dataclass
class SelectionRound:
    round: int
    policy: str
    candidates: list[int]
    selected: list[int]
    probabilities: dict[int, float] = field(default_factory=dict)
    scores: dict[int, float] = field(default_factory=dict)
    excluded_correlated: set[int] = field(default_factory=set)
    excluded_detected: set[int] = field(default_factory=set)
    label_coverage: set[int] = field(default_factory=set)
    stalled: bool = False

    def __post_init__(self):
        self.stalled = not self.selected

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "policy": self.policy,
            "candidates": list(self.candidates),
            "selected": list(self.selected),
            "probabilities": {str(k): round(v, 12) for k, v in sorted(self.probabilities.items())},
            "scores": {str(k): round(v, 12) for k, v in sorted(self.scores.items())},
            "excluded_correlated": sorted(self.excluded_correlated),
            "excluded_detected": sorted(self.excluded_detected),
            "coverage": sorted(self.label_coverage),
            "stalled": self.stalled,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def sampling_probability(
    a_comp: float, a_comm: float, beta: float, rho_clamped: float, base_p: float
) -> float:
    """``p * [a + (1 - a) * beta] * (1 - rho)`` with ``a = a_comp * a_comm``."""
    a = overall_availability(a_comp, a_comm)
    return base_p * predict_availability(a, beta) * (1.0 - rho_clamped)


def freshness(last_participation_round: int | None, current_round: int, freshness_tau: float) -> float:
    if last_participation_round is None:
        return 1.0
    age = current_round - last_participation_round
    if age < 0:
        raise ValueError("current_round precedes the last participation")
    return math.exp(-age / freshness_tau)


def idle_credit(last_participation_round: int | None, current_round: int, freshness_tau: float) -> float:
    """Complement of :func:`freshness`; newcomers get full credit."""
    if last_participation_round is None:
        return 1.0
    return 1.0 - freshness(last_participation_round, current_round, freshness_tau)


def freshness_weight(
    mode: FreshnessMode, last_participation_round: int | None, current_round: int, tau: float
) -> float:
    mode = FreshnessMode(mode)
    if mode is FreshnessMode.RECENCY:
        return freshness(last_participation_round, current_round, tau)
    if mode is FreshnessMode.IDLE:
        return idle_credit(last_participation_round, current_round, tau)
    return 1.0


def select_classic_psp(
    active: Sequence[int], target_count: int, rng: np.random.Generator, round_index: int = 0
) -> SelectionRound:
    pool = list(active)
    k = min(target_count, len(pool))
    picked = rng.choice(len(pool), size=k, replace=False) if k else []
    selected = [pool[int(i)] for i in picked]
    return SelectionRound(round_index, PolicyKind.CLASSIC_PSP.value, pool, selected)


def _coverage(nodes: Sequence[int], labels: Mapping[int, frozenset | set]) -> set[int]:
    out: set[int] = set()
    for n in nodes:
        out |= set(labels.get(n, ()))
    return out


def greedy_coverage(
    ranked: Sequence[int],
    scores: Mapping[int, float],
    labels: Mapping[int, frozenset | set],
    target: int,
) -> list[int]:
    """Greedy max-coverage over ``ranked``; ties by higher score, then lower id.

    Once no node adds a new label the remaining slots are filled in score
    order. If plain score order over the same pool covers strictly more
    labels, that selection is returned instead, so coverage never falls
    below the score-only top-``target``.
    """
    remaining = list(ranked)
    chosen: list[int] = []
    covered: set[int] = set()
    while remaining and len(chosen) < target:
        best = min(
            remaining,
            key=lambda n: (-len(set(labels.get(n, ())) - covered), -scores[n], n),
        )
        chosen.append(best)
        covered |= set(labels.get(best, ()))
        remaining.remove(best)
    top = list(ranked[:target])
    if len(_coverage(top, labels)) > len(covered):
        log.debug("greedy coverage %d below score order %d; using score order", len(covered), len(_coverage(top, labels)))
        return top
    return chosen


def select_aw_psp(
    candidates: Sequence[int],
    telemetry: Mapping[int, NodeTelemetry],
    correlation: CorrelationState,
    labels: Mapping[int, frozenset | set],
    policy: SelectionPolicy,
    rng: np.random.Generator | None = None,
    *,
    round_index: int = 0,
    params: AvailabilityParams | None = None,
    weights: ProximityWeights | None = None,
    failed: set[int] | frozenset[int] = frozenset(),
    detected: set[int] | frozenset[int] = frozenset(),
    rho: np.ndarray | None = None,
) -> SelectionRound:
    """Score-ranked, coverage-refined selection.

    ``detected`` holds nodes the failure detector flagged and ``failed`` the
    nodes currently down; a candidate whose correlated group intersects
    ``failed`` is excluded. ``rho`` may carry precomputed clamped penalties
    for all nodes (otherwise they are computed from ``weights``).
    """
    params = params or AvailabilityParams()
    pool = list(candidates)
    excluded_detected = {n for n in pool if n in detected}
    remaining = [n for n in pool if n not in excluded_detected]

    excluded_corr: set[int] = set()
    if failed and remaining:
        failed_idx = np.fromiter(sorted(failed), dtype=np.int64)
        gmask = correlation.group_mask()
        hits = gmask[np.asarray(remaining)][:, failed_idx].any(axis=1)
        excluded_corr = {n for n, h in zip(remaining, hits) if h}
        remaining = [n for n in remaining if n not in excluded_corr]

    if rho is None:
        if weights is None:
            rho = np.zeros(correlation.n)
        else:
            rho = correlation.penalties(weights)[1]

    probs: dict[int, float] = {}
    scores: dict[int, float] = {}
    for n in remaining:
        tel = telemetry[n]
        a_c, a_b = window_availability(tel, params)
        beta = recovery_probability(tel, params.beta0)
        p = sampling_probability(a_c, a_b, beta, float(rho[n]), policy.base_p)
        probs[n] = p
        scores[n] = p * freshness_weight(
            policy.freshness_mode, tel.last_participation_round, round_index, policy.freshness_tau
        )

    ranked = sorted(remaining, key=lambda n: (-scores[n], n))
    target = policy.target_count
    if policy.bernoulli:
        if rng is None:
            raise ValueError("bernoulli mode needs an rng")
        draws = rng.random(len(ranked))
        drawn = [n for n, u in zip(ranked, draws) if u < probs[n]]
        selected = drawn[:target]
    else:
        # zero-score nodes only fill slots that positive-score nodes cannot
        live = [n for n in ranked if scores[n] > 0.0]
        selected = greedy_coverage(live[: policy.pool_factor * target], scores, labels, target)
        if len(selected) < target:
            selected += [n for n in ranked if scores[n] <= 0.0][: target - len(selected)]

    return SelectionRound(
        round_index,
        PolicyKind.AW_PSP.value,
        pool,
        selected,
        probabilities=probs,
        scores=scores,
        excluded_correlated=excluded_corr,
        excluded_detected=excluded_detected,
        label_coverage=_coverage(selected, labels),
    )
