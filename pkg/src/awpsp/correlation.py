"""Blended failure correlation, correlated groups and the correlation penalty.

Node ids are dense integers ``0..n-1`` indexing the static trace-correlation
matrix. The runtime co-failure counters live in an integer matrix so that a
whole round can be recorded with one vectorized update.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "CorrelationState",
    "ProximityWeights",
    "adjusted_availability",
    "neighbor_mask_from_pairs",
]


def neighbor_mask_from_pairs(n: int, pairs: Iterable[tuple[int, int]]) -> np.ndarray:
    """Symmetric boolean adjacency: ``(i, j)`` are neighbours if either lists the other."""
    mask = np.zeros((n, n), dtype=bool)
    for i, j in pairs:
        if i != j:
            mask[i, j] = mask[j, i] = True
    return mask


@dataclass
class CorrelationState:
    trace_corr: np.ndarray
    alpha: float = 0.5
    tau_corr: float = 0.5
    cofail_rounds: np.ndarray = field(default=None)  # type: ignore[assignment]
    rounds_elapsed: int = 0

    def __post_init__(self):
        corr = np.asarray(self.trace_corr, dtype=np.float64)
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
            raise ValueError("trace_corr must be a square matrix")
        if not np.allclose(corr, corr.T):
            raise ValueError("trace_corr must be symmetric")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.tau_corr <= 1.0:
            raise ValueError("tau_corr must lie in [0, 1]")
        self.trace_corr = corr
        if self.cofail_rounds is None:
            self.cofail_rounds = np.zeros(corr.shape, dtype=np.int64)
        self._trace_term = np.clip(corr, 0.0, 1.0)

    @property
    def n(self) -> int:
        return int(self.trace_corr.shape[0])

    def record_round_failures(self, failed: Iterable[int], neighbors) -> None:
        """Count one elapsed round; bump co-failure for neighbouring failed pairs.

        ``neighbors`` is either a symmetric boolean ``n x n`` mask or an
        iterable of ``(i, j)`` pairs.
        """
        if not isinstance(neighbors, np.ndarray):
            neighbors = neighbor_mask_from_pairs(self.n, neighbors)
        f = np.zeros(self.n, dtype=bool)
        idx = np.fromiter(failed, dtype=np.int64)
        f[idx] = True
        if idx.size >= 2:
            both = np.outer(f, f) & neighbors
            np.fill_diagonal(both, False)
            self.cofail_rounds += both
        self.rounds_elapsed += 1

    def fail_ratio(self) -> np.ndarray:
        if self.rounds_elapsed == 0:
            return np.zeros((self.n, self.n))
        return self.cofail_rounds / self.rounds_elapsed

    def gamma_matrix(self) -> np.ndarray:
        """All-pairs blended correlation; the diagonal is set to 0."""
        g = self.alpha * self._trace_term + (1.0 - self.alpha) * self.fail_ratio()
        np.fill_diagonal(g, 0.0)
        return g

    def gamma(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("gamma is undefined for i == j")
        fail = self.cofail_rounds[i, j] / self.rounds_elapsed if self.rounds_elapsed else 0.0
        return float(self.alpha * self._trace_term[i, j] + (1.0 - self.alpha) * fail)

    def correlated_group(self, i: int) -> set[int]:
        row = self.alpha * self._trace_term[i] + (1.0 - self.alpha) * self.fail_ratio()[i]
        members = np.flatnonzero(row > self.tau_corr)
        return {int(j) for j in members if j != i}

    def group_mask(self, gamma: np.ndarray | None = None) -> np.ndarray:
        g = self.gamma_matrix() if gamma is None else gamma
        mask = g > self.tau_corr
        np.fill_diagonal(mask, False)
        return mask

    def penalty(self, weights: "ProximityWeights", i: int) -> tuple[float, float]:
        """Raw correlation penalty of node ``i`` and its value clamped to [0, 1]."""
        raw = 0.0
        for j in sorted(self.correlated_group(i)):
            raw += weights.values[i, j] * self.gamma(i, j)
        return raw, min(raw, 1.0)

    def penalties(self, weights: "ProximityWeights") -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`penalty` for every node."""
        g = self.gamma_matrix()
        terms = np.where(self.group_mask(g), weights.values * g, 0.0)
        raw = terms.sum(axis=1)
        return raw, np.minimum(raw, 1.0)

    def export_csv(self, weights: "ProximityWeights | None" = None) -> str:
        g = self.gamma_matrix()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["node", *range(self.n)]
        if weights is not None:
            header += ["rho_raw", "rho"]
            raw, clamped = self.penalties(weights)
        writer.writerow(header)
        for i in range(self.n):
            row = [i, *(f"{v:.10g}" for v in g[i])]
            if weights is not None:
                row += [f"{raw[i]:.10g}", f"{clamped[i]:.10g}"]
            writer.writerow(row)
        return buf.getvalue()


@dataclass(frozen=True)
class ProximityWeights:
    """Symmetric pairwise proximity weights in [0, 1] with a zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("weights must be square")
        if not np.array_equal(v, v.T):
            raise ValueError("weights must be symmetric")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("weights must lie in [0, 1]")
        v = v.copy()
        np.fill_diagonal(v, 0.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_rtt(
        cls, rtt: np.ndarray, tau_d_ms: float, neighbors: np.ndarray | None = None
    ) -> "ProximityWeights":
        """Linear latency kernel ``max(0, 1 - RTT / tau_d)``.

        When a neighbour mask is given, pairs outside it get weight 0.
        """
        if tau_d_ms <= 0:
            raise ValueError("tau_d_ms must be positive")
        w = np.maximum(0.0, 1.0 - np.asarray(rtt, dtype=np.float64) / tau_d_ms)
        w = 0.5 * (w + w.T)
        if neighbors is not None:
            w = np.where(neighbors, w, 0.0)
        return cls(w)

    def __getitem__(self, ij: tuple[int, int]) -> float:
        return float(self.values[ij])


def adjusted_availability(tilde_a: float, rho_clamped: float) -> float:
    return tilde_a * (1.0 - rho_clamped)
