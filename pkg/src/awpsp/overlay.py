"""Simulated metadata overlay.

Stands in for a DHT: it ranks neighbours by measured round-trip time, holds
per-node metadata snapshots by round and flags failed nodes from their
latency, packet loss or heartbeat timeouts.
"""

from __future__ import annotations

import bisect
import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "OverlayConfig",
    "NodeMetadata",
    "NeighborTable",
    "MetadataStore",
    "build_neighbors",
    "detect_failure",
    "synthetic_topology",
    "read_rtt_csv",
]


@dataclass(frozen=True)
class OverlayConfig:
    k_neighbors: int = 4
    tau_d_ms: float = 200.0
    tau_c_comp_ms: float = 500.0
    latency_fail_ms: float = 100.0
    tau_loss: float = 0.4

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        for name in ("tau_d_ms", "tau_c_comp_ms", "latency_fail_ms", "tau_loss"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class NodeMetadata:
    node_id: int
    latency_ms: float
    loss_rate: float
    a_comp: float = 1.0
    a_comm: float = 1.0
    freshness: float = 1.0
    last_round_participated: int | None = None
    recent_failures: int = 0
    timed_out: bool = False

    def __post_init__(self):
        if self.latency_ms < 0:
            raise ValueError("latency must be non-negative")
        for name in ("loss_rate", "a_comp", "a_comm", "freshness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class NeighborTable:
    neighbors: dict[int, tuple[int, ...]]
    out_of_threshold: frozenset[int] = frozenset()

    def __getitem__(self, node: int) -> tuple[int, ...]:
        return self.neighbors[node]

    def pairs(self) -> set[tuple[int, int]]:
        return {(min(i, j), max(i, j)) for i, js in self.neighbors.items() for j in js}

    def mask(self, n: int) -> np.ndarray:
        """Symmetric adjacency: linked if either node lists the other."""
        m = np.zeros((n, n), dtype=bool)
        for i, js in self.neighbors.items():
            for j in js:
                m[i, j] = m[j, i] = True
        return m


def build_neighbors(
    latencies: np.ndarray, comp_times: np.ndarray, config: OverlayConfig
) -> NeighborTable:
    """Rank each node's peers by RTT (ties by ascending id) and keep ``k``.

    Only peers within both the RTT threshold and the computation-time
    threshold qualify. A node with fewer than ``k`` qualifying peers takes its
    ``k`` nearest peers overall and is reported in ``out_of_threshold``.
    """
    rtt = np.asarray(latencies, dtype=np.float64)
    comp = np.asarray(comp_times, dtype=np.float64)
    n = rtt.shape[0]
    if rtt.shape != (n, n):
        raise ValueError("latency matrix must be square")
    if not np.array_equal(rtt, rtt.T):
        raise ValueError("latency matrix must be symmetric")
    if comp.shape != (n,):
        raise ValueError("comp_times must have one entry per node")
    k = min(config.k_neighbors, n - 1)
    ids = np.arange(n)
    neighbors: dict[int, tuple[int, ...]] = {}
    flagged = []
    for i in range(n):
        others = ids[ids != i]
        order = others[np.lexsort((others, rtt[i, others]))]
        ok = (rtt[i, order] <= config.tau_d_ms) & (np.abs(comp[order] - comp[i]) <= config.tau_c_comp_ms)
        qualified = order[ok]
        if qualified.size >= k:
            chosen = qualified[:k]
        else:
            chosen = order[:k]
            flagged.append(i)
        neighbors[i] = tuple(int(j) for j in chosen)
    return NeighborTable(neighbors, frozenset(flagged))


def detect_failure(meta: NodeMetadata, config: OverlayConfig) -> bool:
    return bool(
        meta.timed_out
        or meta.latency_ms > config.latency_fail_ms
        or meta.loss_rate > config.tau_loss
    )


@dataclass
class MetadataStore:
    """Per-node append-only snapshot log with "latest at or before" lookup."""

    _rounds: dict[int, list[int]] = field(default_factory=dict)
    _snaps: dict[int, list[NodeMetadata]] = field(default_factory=dict)

    def register(self, node: int) -> None:
        self._rounds.setdefault(node, [])
        self._snaps.setdefault(node, [])

    def publish(self, meta: NodeMetadata, round_index: int) -> None:
        node = meta.node_id
        if node not in self._rounds:
            raise KeyError(f"node {node} is not registered")
        rounds = self._rounds[node]
        if rounds and round_index < rounds[-1]:
            raise ValueError(f"node {node}: publish at round {round_index} after {rounds[-1]}")
        if rounds and rounds[-1] == round_index:
            self._snaps[node][-1] = meta
        else:
            rounds.append(round_index)
            self._snaps[node].append(meta)

    def query(self, node: int, round_index: int) -> NodeMetadata:
        if node not in self._rounds:
            raise KeyError(f"node {node} is not registered")
        pos = bisect.bisect_right(self._rounds[node], round_index)
        if pos == 0:
            raise LookupError(f"node {node} has no metadata at or before round {round_index}")
        return self._snaps[node][pos - 1]

    def export_jsonl(self) -> str:
        lines = []
        for node in sorted(self._rounds):
            for r, meta in zip(self._rounds[node], self._snaps[node]):
                lines.append(json.dumps({"round": r, **asdict(meta)}, sort_keys=True))
        return "".join(line + "\n" for line in lines)


def synthetic_topology(
    n: int,
    seed: int,
    *,
    clusters: Iterable[int] | None = None,
    base_rtt_ms: float = 5.0,
    scale_ms: float = 300.0,
    cluster_spread: float = 0.03,
    comp_mean_ms: float = 200.0,
    comp_sd_ms: float = 50.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Random RTT matrix from 2D positions, plus per-node computation times.

    ``clusters`` assigns a cluster label per node; members are placed near a
    shared centre so that clusters are close in RTT.
    """
    rng = np.random.default_rng(seed)
    if clusters is None:
        pos = rng.random((n, 2))
    else:
        labels = np.asarray(list(clusters))
        if labels.shape != (n,):
            raise ValueError("clusters must give one label per node")
        uniq = np.unique(labels)
        centres = rng.random((uniq.size, 2))
        centre_of = centres[np.searchsorted(uniq, labels)]
        pos = centre_of + rng.normal(0.0, cluster_spread, size=(n, 2))
    diff = pos[:, None, :] - pos[None, :, :]
    rtt = base_rtt_ms + scale_ms * np.sqrt((diff**2).sum(axis=-1))
    rtt = np.round(0.5 * (rtt + rtt.T), 3)
    np.fill_diagonal(rtt, 0.0)
    comp = np.maximum(1.0, rng.normal(comp_mean_ms, comp_sd_ms, size=n))
    return rtt, np.round(comp, 3)


def read_rtt_csv(path: str | Path) -> np.ndarray:
    """Square RTT matrix in milliseconds, one row per line, no header."""
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    rtt = np.array(rows, dtype=np.float64)
    if rtt.ndim != 2 or rtt.shape[0] != rtt.shape[1]:
        raise ValueError(f"{path}: RTT matrix must be square")
    return rtt
