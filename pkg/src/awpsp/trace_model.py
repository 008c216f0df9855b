"""Device availability traces.

Raw device event logs (WiFi / charging transitions) are discretized into
binary availability vectors, one per device. A device counts as available
during a step only if it is both connected to WiFi and charging for the
entire step. The module also synthesizes grouped traces for desk-scale runs
and computes availability statistics and the pairwise trace correlation
matrix used by the correlation and failure-injection layers.

Event CSV format (one event per row, optional header)::

    device_id,timestamp,kind
    d-01,0,wifi_on
    d-01,0,charge_on
    d-01,100,wifi_off
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EventKind",
    "DeviceEvent",
    "AvailabilityTrace",
    "TraceCorrelationMatrix",
    "Histogram",
    "GroupSpec",
    "TraceFormatError",
    "NoLiveWindowError",
    "IngestResult",
    "parse_event_rows",
    "read_event_csv",
    "ingest_events",
    "availability_percentage",
    "availability_histogram",
    "trace_correlation",
    "synthesize_traces",
    "traces_to_json",
    "traces_from_json",
    "histogram_to_csv",
    "correlation_to_csv",
]


class EventKind(str, Enum):
    WIFI_ON = "wifi_on"
    WIFI_OFF = "wifi_off"
    CHARGE_ON = "charge_on"
    CHARGE_OFF = "charge_off"


@dataclass(frozen=True, order=True)
class DeviceEvent:
    device_id: str
    timestamp: int
    kind: EventKind

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp} for {self.device_id}")


@dataclass(frozen=True)
class AvailabilityTrace:
    """Binary availability of one device over discrete time steps.

    ``first_seen``/``last_seen`` bound the live window (first and last
    available step) and are ``None`` for a trace that is never available.
    """

    device_id: str
    steps: np.ndarray
    first_seen: int | None = None
    last_seen: int | None = None

    def __post_init__(self):
        bits = np.asarray(self.steps, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise ValueError("availability trace must be a non-empty 1-d vector")
        if np.any(bits > 1):
            raise ValueError("availability trace must be binary")
        bits.setflags(write=False)
        object.__setattr__(self, "steps", bits)
        on = np.flatnonzero(bits)
        first = int(on[0]) if on.size else None
        last = int(on[-1]) if on.size else None
        if self.first_seen is None and self.last_seen is None:
            object.__setattr__(self, "first_seen", first)
            object.__setattr__(self, "last_seen", last)
        elif (self.first_seen, self.last_seen) != (first, last):
            raise ValueError(
                f"{self.device_id}: live window ({self.first_seen}, {self.last_seen}) "
                f"does not match availability bits ({first}, {last})"
            )

    def __len__(self) -> int:
        return int(self.steps.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AvailabilityTrace):
            return NotImplemented
        return self.device_id == other.device_id and np.array_equal(self.steps, other.steps)

    __hash__ = None  # type: ignore[assignment]

    @property
    def has_live_window(self) -> bool:
        return self.first_seen is not None

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.steps)


@dataclass(frozen=True)
class TraceCorrelationMatrix:
    """Symmetric matrix of pairwise Pearson correlations between traces."""

    device_ids: tuple[str, ...]
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.device_ids)

    def __getitem__(self, ij: tuple[int, int]) -> float:
        return float(self.values[ij])


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> list[tuple[float, float, int]]:
        return [
            (float(self.edges[k]), float(self.edges[k + 1]), int(self.counts[k]))
            for k in range(self.counts.size)
        ]


class TraceFormatError(ValueError):
    """Raised for malformed event records; carries every offending line."""

    def __init__(self, problems: Sequence[tuple[int, str]]):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems)
        super().__init__(f"{len(self.problems)} malformed event record(s): {lines}")


class NoLiveWindowError(ValueError):
    """The trace is never available, so its availability percentage is undefined."""


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_HEADER = ("device_id", "timestamp", "kind")


def parse_event_rows(lines: Iterable[str]) -> list[DeviceEvent]:
    """Parse CSV event rows, collecting all malformed records before raising."""
    events: list[DeviceEvent] = []
    problems: list[tuple[int, str]] = []
    reader = csv.reader(lines)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if lineno == 1 and tuple(c.lower() for c in cells) == _HEADER:
            continue
        if len(cells) != 3:
            problems.append((lineno, f"expected 3 fields, got {len(cells)}"))
            continue
        device_id, ts, kind = cells
        if not device_id:
            problems.append((lineno, "empty device_id"))
            continue
        try:
            timestamp = int(ts)
        except ValueError:
            problems.append((lineno, f"timestamp {ts!r} is not an integer"))
            continue
        if timestamp < 0:
            problems.append((lineno, f"negative timestamp {timestamp}"))
            continue
        try:
            ev_kind = EventKind(kind.lower())
        except ValueError:
            problems.append((lineno, f"unknown event kind {kind!r}"))
            continue
        events.append(DeviceEvent(device_id, timestamp, ev_kind))
    if problems:
        raise TraceFormatError(problems)
    return events


def read_event_csv(path: str | Path) -> list[DeviceEvent]:
    with open(path, newline="") as fh:
        return parse_event_rows(fh)


@dataclass
class IngestResult:
    traces: list[AvailabilityTrace]
    excluded: list[str] = field(default_factory=list)


def _on_intervals(events: Sequence[DeviceEvent], horizon: int) -> list[tuple[int, int]]:
    """Half-open [start, end) intervals during which WiFi and charging are both on."""
    wifi = charge = False
    intervals: list[tuple[int, int]] = []
    opened: int | None = None
    i = 0
    while i < len(events):
        t = events[i].timestamp
        # apply every event sharing this timestamp before re-evaluating the state
        while i < len(events) and events[i].timestamp == t:
            kind = events[i].kind
            if kind is EventKind.WIFI_ON:
                wifi = True
            elif kind is EventKind.WIFI_OFF:
                wifi = False
            elif kind is EventKind.CHARGE_ON:
                charge = True
            else:
                charge = False
            i += 1
        both = wifi and charge
        if both and opened is None:
            opened = t
        elif not both and opened is not None:
            if t > opened:
                intervals.append((opened, t))
            opened = None
    if opened is not None and horizon > opened:
        intervals.append((opened, horizon))
    return intervals


def ingest_events(
    events: Iterable[DeviceEvent],
    step_seconds: int,
    *,
    horizon_seconds: int | None = None,
    devices: Iterable[str] | None = None,
) -> IngestResult:
    """Discretize device events into availability traces.

    All traces share one time axis: step ``k`` covers ``[k*s, (k+1)*s)``.
    Unless ``horizon_seconds`` is given the axis runs through the step that
    contains the latest timestamp in the input. Devices listed in
    ``devices`` that have no events are excluded and reported.
    """
    if step_seconds <= 0:
        raise ValueError("step_seconds must be positive")
    by_device: dict[str, list[DeviceEvent]] = defaultdict(list)
    for ev in events:
        by_device[ev.device_id].append(ev)
    excluded = sorted(set(devices or ()) - set(by_device))
    if not by_device:
        return IngestResult([], excluded)

    latest = max(ev.timestamp for evs in by_device.values() for ev in evs)
    if horizon_seconds is None:
        n_steps = latest // step_seconds + 1
    else:
        n_steps = max(1, math.ceil(horizon_seconds / step_seconds))
    horizon = n_steps * step_seconds

    starts = np.arange(n_steps, dtype=np.int64) * step_seconds
    ends = starts + step_seconds
    traces = []
    for device_id in sorted(by_device):
        evs = sorted(by_device[device_id], key=lambda e: (e.timestamp, e.kind.value))
        bits = np.zeros(n_steps, dtype=np.uint8)
        for a, b in _on_intervals(evs, horizon):
            bits[(starts >= a) & (ends <= b)] = 1
        traces.append(AvailabilityTrace(device_id, bits))
    return IngestResult(traces, excluded)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def availability_percentage(trace: AvailabilityTrace) -> float:
    """Fraction of the live window [first_seen, last_seen] spent available."""
    if not trace.has_live_window:
        raise NoLiveWindowError(f"{trace.device_id} is never available")
    window = trace.steps[trace.first_seen : trace.last_seen + 1]
    return float(window.sum()) / window.size


def availability_histogram(traces: Sequence[AvailabilityTrace], bins: int = 20) -> Histogram:
    """Equal-width histogram over [0, 1] of availability percentages.

    Traces without a live window are skipped. The last bin is closed.
    """
    if bins <= 0:
        raise ValueError("bins must be positive")
    live = [t for t in traces if t.has_live_window]
    if not live:
        raise NoLiveWindowError("no trace has a live window")
    # exact integer binning so ratios like 7/20 land on the right side of an edge
    counts = np.zeros(bins, dtype=np.int64)
    for t in live:
        window = t.last_seen - t.first_seen + 1
        on = int(t.steps[t.first_seen : t.last_seen + 1].sum())
        counts[min(on * bins // window, bins - 1)] += 1
    return Histogram(edges=np.linspace(0.0, 1.0, bins + 1), counts=counts)


def trace_correlation(traces: Sequence[AvailabilityTrace]) -> TraceCorrelationMatrix:
    """Pearson correlation between every pair of traces.

    Pairs involving a constant trace get correlation 0. The diagonal is 1.
    """
    if len(traces) < 2:
        raise ValueError("need at least two traces")
    length = len(traces[0])
    if any(len(t) != length for t in traces):
        raise ValueError("all traces must have the same length")
    x = np.vstack([t.steps for t in traces]).astype(np.float64)
    x -= x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    constant = norms == 0.0
    norms[constant] = 1.0
    z = x / norms[:, None]
    corr = z @ z.T
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    corr.setflags(write=False)
    return TraceCorrelationMatrix(tuple(t.device_id for t in traces), corr)


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    """One group of devices sharing a base on/off pattern.

    The base pattern is a two-state Markov chain with stationary on-fraction
    ``p_on`` and mean on-run length ``mean_on_steps``. Each member then flips
    every bit of the shared pattern independently with ``flip_prob``.
    """

    size: int
    p_on: float = 0.5
    mean_on_steps: float = 5.0
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("group size must be >= 1")
        if not 0.0 <= self.p_on <= 1.0:
            raise ValueError("p_on must be in [0, 1]")
        if self.mean_on_steps < 1.0:
            raise ValueError("mean_on_steps must be >= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")


def _markov_pattern(spec: GroupSpec, steps: int, rng: np.random.Generator) -> np.ndarray:
    if spec.p_on in (0.0, 1.0):
        return np.full(steps, int(spec.p_on), dtype=np.uint8)
    p_off = 1.0 / spec.mean_on_steps  # on -> off
    # on-fraction of the stationary chain: p_on = p_up / (p_up + p_off)
    p_up = min(1.0, spec.p_on * p_off / (1.0 - spec.p_on))
    u = rng.random(steps)
    bits = np.empty(steps, dtype=np.uint8)
    state = u[0] < spec.p_on
    bits[0] = state
    for t in range(1, steps):
        state = (u[t] >= p_off) if state else (u[t] < p_up)
        bits[t] = state
    return bits


def synthesize_traces(
    n: int,
    steps: int,
    group_spec: Sequence[GroupSpec],
    seed: int,
) -> list[AvailabilityTrace]:
    """Grouped synthetic traces; members of a group share a base pattern.

    Devices are numbered consecutively group by group (``node-0000`` ...).
    """
    if n < 1 or steps < 1:
        raise ValueError("n and steps must be >= 1")
    if not group_spec:
        raise ValueError("group_spec must not be empty")
    if sum(g.size for g in group_spec) != n:
        raise ValueError(f"group sizes sum to {sum(g.size for g in group_spec)}, expected {n}")
    rng = np.random.default_rng(seed)
    traces = []
    node = 0
    for spec in group_spec:
        base = _markov_pattern(spec, steps, rng)
        for _ in range(spec.size):
            flips = (rng.random(steps) < spec.flip_prob).astype(np.uint8)
            traces.append(AvailabilityTrace(f"node-{node:04d}", base ^ flips))
            node += 1
    return traces


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def traces_to_json(traces: Sequence[AvailabilityTrace]) -> str:
    payload = [
        {
            "device_id": t.device_id,
            "bits": t.bitstring(),
            "first_seen": t.first_seen,
            "last_seen": t.last_seen,
        }
        for t in traces
    ]
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def traces_from_json(text: str) -> list[AvailabilityTrace]:
    out = []
    for rec in json.loads(text):
        bits = np.frombuffer(rec["bits"].encode("ascii"), dtype=np.uint8) - ord("0")
        out.append(AvailabilityTrace(rec["device_id"], bits.copy()))
    return out


def histogram_to_csv(hist: Histogram) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_low", "bin_high", "count"])
    for low, high, count in hist.rows():
        writer.writerow([f"{low:.6g}", f"{high:.6g}", count])
    return buf.getvalue()


def correlation_to_csv(corr: TraceCorrelationMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["device_id", *corr.device_ids])
    for dev, row in zip(corr.device_ids, corr.values):
        writer.writerow([dev, *(f"{v:.10g}" for v in row)])
    return buf.getvalue()
