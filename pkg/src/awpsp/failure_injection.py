"""Per-round failure generation.

Three regimes: each node down independently with probability ``p_f``;
nodes down because their trace says so or their telemetry trips the
detector; or correlated propagation, where a seed failure takes down every
node reachable through pairs whose trace correlation exceeds ``c``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .overlay import NodeMetadata

__all__ = [
    "FailureMode",
    "FailureConfig",
    "TelemetryProfile",
    "inject_independent",
    "inject_correlated",
    "inject_telemetry_noise",
    "telemetry_noise_arrays",
    "failure_log_line",
]


class FailureMode(str, Enum):
    INDEPENDENT_PROB = "independent_prob"
    INDEPENDENT_TELEMETRY = "independent_telemetry"
    CORRELATED = "correlated"


@dataclass(frozen=True)
class FailureConfig:
    mode: FailureMode = FailureMode.INDEPENDENT_TELEMETRY
    p_f: float = 0.0
    c_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", FailureMode(self.mode))
        if not 0.0 <= self.p_f <= 1.0:
            raise ValueError("p_f must lie in [0, 1]")
        if not 0.0 <= self.c_threshold <= 1.0:
            raise ValueError("c_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class TelemetryProfile:
    """Additive perturbation applied on top of each node's baseline link."""

    baseline_latency_ms: float = 20.0
    baseline_loss: float = 0.05
    latency_jitter_ms: float = 0.0
    loss_jitter: float = 0.0
    spike_prob: float = 0.0
    spike_latency_ms: float = 200.0
    spike_loss: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ValueError("spike_prob must lie in [0, 1]")
        for name in ("baseline_latency_ms", "latency_jitter_ms", "spike_latency_ms", "loss_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("baseline_loss", "spike_loss"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def inject_independent(nodes: Sequence[int], p_f: float, rng: np.random.Generator) -> frozenset[int]:
    if not 0.0 <= p_f <= 1.0:
        raise ValueError("p_f must lie in [0, 1]")
    draws = rng.random(len(nodes))
    return frozenset(int(n) for n, u in zip(nodes, draws) if u < p_f)


def inject_correlated(
    nodes: Sequence[int],
    corr: np.ndarray,
    c_threshold: float,
    seed_failures: Iterable[int],
    rng: np.random.Generator | None = None,
) -> frozenset[int]:
    """Transitive closure of the seeds over the graph ``corr[i, j] > c``.

    Propagation is deterministic, so ``rng`` is accepted only for interface
    symmetry with :func:`inject_independent`.
    """
    if not 0.0 <= c_threshold <= 1.0:
        raise ValueError("c_threshold must lie in [0, 1]")
    node_list = list(nodes)
    pos = {n: k for k, n in enumerate(node_list)}
    values = np.asarray(corr)
    sub = values[np.ix_(node_list, node_list)] > c_threshold
    np.fill_diagonal(sub, False)
    seen = np.zeros(len(node_list), dtype=bool)
    queue = deque()
    for s in seed_failures:
        if s in pos and not seen[pos[s]]:
            seen[pos[s]] = True
            queue.append(pos[s])
    while queue:
        k = queue.popleft()
        fresh = sub[k] & ~seen
        seen |= fresh
        queue.extend(np.flatnonzero(fresh).tolist())
    return frozenset(node_list[k] for k in np.flatnonzero(seen))


def telemetry_noise_arrays(
    base_latency: np.ndarray,
    base_loss: np.ndarray,
    profile: TelemetryProfile,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vector form: returns ``(latency_ms, loss_rate, spiked)``."""
    n = base_latency.shape[0]
    spiked = rng.random(n) < profile.spike_prob
    latency = base_latency.astype(np.float64).copy()
    loss = base_loss.astype(np.float64).copy()
    if profile.latency_jitter_ms > 0:
        latency += rng.normal(0.0, profile.latency_jitter_ms, size=n)
    if profile.loss_jitter > 0:
        loss += rng.normal(0.0, profile.loss_jitter, size=n)
    latency += np.where(spiked, profile.spike_latency_ms, 0.0)
    loss += np.where(spiked, profile.spike_loss, 0.0)
    return np.maximum(latency, 0.0), np.clip(loss, 0.0, 1.0), spiked


def inject_telemetry_noise(
    metadata: Sequence[NodeMetadata],
    round_index: int,
    profile: TelemetryProfile,
    rng: np.random.Generator,
) -> list[NodeMetadata]:
    """Perturb latency/loss of each snapshot; a zero-spike, zero-jitter profile is the identity."""
    lat = np.array([m.latency_ms for m in metadata], dtype=np.float64)
    loss = np.array([m.loss_rate for m in metadata], dtype=np.float64)
    new_lat, new_loss, _ = telemetry_noise_arrays(lat, loss, profile, rng)
    return [
        replace(m, latency_ms=float(a), loss_rate=float(b))
        for m, a, b in zip(metadata, new_lat, new_loss)
    ]


def failure_log_line(round_index: int, mode: FailureMode | str, failed: Iterable[int]) -> str:
    return json.dumps(
        {"round": round_index, "mode": FailureMode(mode).value, "failed_ids": sorted(int(f) for f in failed)},
        sort_keys=True,
    )
