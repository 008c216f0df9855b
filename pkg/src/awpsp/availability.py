"""Per-node availability estimators.

Each node keeps a rolling :class:`NodeTelemetry` record that the simulation
loop updates once per round. The estimators turn that record into the
computation/communication availability pair, the recovery likelihood and the
baseline availability prediction consumed by selection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

__all__ = [
    "AvailabilityParams",
    "NodeTelemetry",
    "deadline_indicator",
    "ewma_update",
    "window_availability",
    "overall_availability",
    "recovery_probability",
    "predict_availability",
]


@dataclass(frozen=True)
class AvailabilityParams:
    t_max_ms: float = 1000.0
    lambda_: float = 0.9
    window_w: int = 10
    tau_c: float = 0.7
    tau_lat_ms: float = 100.0
    tau_loss: float = 0.4
    beta0: float = 0.5

    def __post_init__(self):
        if not self.t_max_ms > 0:
            raise ValueError("t_max_ms must be positive")
        if not 0.0 < self.lambda_ < 1.0:
            raise ValueError("lambda must lie strictly inside (0, 1)")
        if self.window_w < 1:
            raise ValueError("window_w must be >= 1")
        if not 0.0 < self.tau_c < 1.0:
            raise ValueError("tau_c must lie in (0, 1)")
        if not self.tau_lat_ms > 0:
            raise ValueError("tau_lat_ms must be positive")
        if not 0.0 < self.tau_loss < 1.0:
            raise ValueError("tau_loss must lie in (0, 1)")
        if not 0.0 <= self.beta0 <= 1.0:
            raise ValueError("beta0 must lie in [0, 1]")


def deadline_indicator(t_comp_ms: float, t_comm_ms: float, t_max_ms: float) -> int:
    if min(t_comp_ms, t_comm_ms, t_max_ms) < 0:
        raise ValueError("times must be non-negative")
    return int(t_comp_ms + t_comm_ms <= t_max_ms)


def ewma_update(prev: float, indicator: int, lambda_: float) -> float:
    return lambda_ * prev + (1.0 - lambda_) * indicator


def overall_availability(a_comp: float, a_comm: float) -> float:
    return a_comp * a_comm


def predict_availability(prev_tilde_a: float, beta: float) -> float:
    """Baseline prediction: current availability plus recovery of the remainder."""
    return prev_tilde_a + (1.0 - prev_tilde_a) * beta


@dataclass
class NodeTelemetry:
    """Rolling per-node state.

    ``comp_history``/``comm_history`` hold the last ``W`` binary H-signals and
    start with one synthetic success each so that newcomers are selectable.
    ``outcomes`` holds the last ``W`` per-round success flags; a failure counts
    toward the recovery estimate once the following round has been observed,
    and counts as a recovery if that following round succeeded.
    """

    node_id: int
    window_w: int = 10
    ewma_availability: float = 1.0
    last_latency_ms: float = 0.0
    last_loss_rate: float = 0.0
    timed_out: bool = False
    last_participation_round: int | None = None
    rounds_participated: int = 0
    rounds_observed: int = 0
    rounds_succeeded: int = 0
    comp_history: deque = field(default=None)  # type: ignore[assignment]
    comm_history: deque = field(default=None)  # type: ignore[assignment]
    outcomes: deque = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.window_w < 1:
            raise ValueError("window_w must be >= 1")
        if self.comp_history is None:
            self.comp_history = deque([True], maxlen=self.window_w)
        if self.comm_history is None:
            self.comm_history = deque([True], maxlen=self.window_w)
        if self.outcomes is None:
            # one extra slot so the oldest in-window failure keeps its successor
            self.outcomes = deque(maxlen=self.window_w + 1)

    @property
    def failures_in_window(self) -> int:
        seq = list(self.outcomes)
        return sum(1 for k in range(len(seq) - 1) if not seq[k])

    @property
    def recoveries_in_window(self) -> int:
        seq = list(self.outcomes)
        return sum(1 for k in range(len(seq) - 1) if not seq[k] and seq[k + 1])

    @property
    def success_rate(self) -> float | None:
        if self.rounds_observed == 0:
            return None
        return self.rounds_succeeded / self.rounds_observed

    def observe(
        self,
        success: bool,
        latency_ms: float,
        loss_rate: float,
        params: AvailabilityParams,
        *,
        timed_out: bool = False,
    ) -> None:
        """Record one round of heartbeat/telemetry for this node."""
        self.rounds_observed += 1
        self.rounds_succeeded += int(success)
        self.last_latency_ms = float(latency_ms)
        self.last_loss_rate = float(loss_rate)
        self.timed_out = bool(timed_out)
        self.comp_history.append(self.rounds_succeeded / self.rounds_observed > params.tau_c)
        self.comm_history.append(
            (not timed_out) and latency_ms < params.tau_lat_ms and loss_rate < params.tau_loss
        )
        self.ewma_availability = ewma_update(self.ewma_availability, int(success), params.lambda_)
        self.outcomes.append(bool(success))

    def mark_participation(self, round_index: int) -> None:
        self.rounds_participated += 1
        self.last_participation_round = round_index

    def snapshot(self) -> dict:
        return {
            "node_id": self.node_id,
            "comp_history": [int(b) for b in self.comp_history],
            "comm_history": [int(b) for b in self.comm_history],
            "ewma_availability": self.ewma_availability,
            "last_latency_ms": self.last_latency_ms,
            "last_loss_rate": self.last_loss_rate,
            "timed_out": self.timed_out,
            "last_participation_round": self.last_participation_round,
            "failures_in_window": self.failures_in_window,
            "recoveries_in_window": self.recoveries_in_window,
            "rounds_participated": self.rounds_participated,
            "rounds_observed": self.rounds_observed,
            "rounds_succeeded": self.rounds_succeeded,
        }


def window_availability(telemetry: NodeTelemetry, params: AvailabilityParams) -> tuple[float, float]:
    """Mean of the last ``W`` computation and communication H-signals."""
    comp = list(telemetry.comp_history)[-params.window_w :]
    comm = list(telemetry.comm_history)[-params.window_w :]
    if not comp or not comm:
        raise ValueError(f"node {telemetry.node_id}: empty availability history")
    return sum(comp) / len(comp), sum(comm) / len(comm)


def recovery_probability(telemetry: NodeTelemetry, beta0: float = 0.5) -> float:
    failures = telemetry.failures_in_window
    if failures == 0:
        return beta0
    return telemetry.recoveries_in_window / failures
