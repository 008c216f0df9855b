"""Experiment orchestration: the per-round simulation loop.

One run is a (config, seed, policy) triple. Everything that should be
identical across policies for a paired comparison (data, partition, traces,
topology, telemetry noise, failure draws) is derived from the seed alone;
only the selection stream depends on the policy.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..availability import NodeTelemetry
from ..config import ExperimentConfig
from ..correlation import CorrelationState, ProximityWeights
from ..fairness import fairness_report
from ..failure_injection import FailureMode, inject_correlated, inject_independent, telemetry_noise_arrays
from ..overlay import build_neighbors, synthetic_topology
from ..selection import PolicyKind, SelectionRound, select_aw_psp, select_classic_psp
from ..trace_model import AvailabilityTrace, GroupSpec, synthesize_traces, trace_correlation
from .partition import materialize, partition_data
from .rounds import GlobalModel, aggregate, evaluate, local_train, plan_waves
from .task import GaussianBlobTask

log = logging.getLogger(__name__)

__all__ = ["Environment", "RunLog", "build_environment", "run_experiment", "group_assignment"]

# independent random streams, keyed by purpose
STREAM_TRACES = 1
STREAM_TOPOLOGY = 2
STREAM_TELEMETRY = 3
STREAM_FAILURE = 4
STREAM_SELECTION = 5
STREAM_TRAIN = 6


def group_assignment(n: int, n_groups: int, mode: str) -> np.ndarray:
    if mode == "strided":
        return np.arange(n) % n_groups
    return (np.arange(n) * n_groups) // n


@dataclass
class Environment:
    """Seed-determined world shared by every policy in a paired comparison."""

    config: ExperimentConfig
    seed: int
    task: GaussianBlobTask
    partitions: list
    local_data: list
    labels: dict[int, frozenset[int]]
    traces: np.ndarray  # (n, T) availability bits
    trace_corr: np.ndarray
    groups: np.ndarray
    rtt: np.ndarray
    comp_times: np.ndarray
    neighbor_mask: np.ndarray
    weights: ProximityWeights
    strong_partner: np.ndarray  # node has a partner with corr > c_threshold


def build_environment(cfg: ExperimentConfig, seed: int) -> Environment:
    n = cfg.n_logical_clients
    d = cfg.data
    task = GaussianBlobTask(
        n_classes=d.n_classes,
        n_features=d.n_features,
        train_per_class=d.train_per_class,
        test_per_class=d.test_per_class,
        separation=d.class_separation,
        seed=seed,
    )
    parts = partition_data(n, d.n_classes, d.labels_per_client, d.train_per_class, seed, task.train.y)
    local = [materialize(p, task.train) for p in parts]
    labels = {p.node_id: p.class_labels for p in parts}

    t = cfg.traces
    groups = group_assignment(n, t.n_groups, t.assignment)
    p_on = list(t.p_on) if isinstance(t.p_on, (list, tuple)) else [t.p_on] * t.n_groups
    specs = [
        GroupSpec(int(np.sum(groups == g)), float(p_on[g]), float(t.mean_on_steps), float(t.flip_prob))
        for g in range(t.n_groups)
    ]
    synth = synthesize_traces(n, t.steps, specs, int(np.random.SeedSequence([seed, STREAM_TRACES]).generate_state(1)[0]))
    # synthesized traces come out group by group; map them onto node ids
    order = np.argsort(groups, kind="stable")
    bits = np.empty((n, t.steps), dtype=np.uint8)
    for k, node in enumerate(order):
        bits[node] = synth[k].steps
    if n >= 2:
        corr = trace_correlation([AvailabilityTrace(str(i), bits[i]) for i in range(n)]).values
    else:
        corr = np.ones((1, 1))

    topo = cfg.topology
    rtt, comp = synthetic_topology(
        n,
        int(np.random.SeedSequence([seed, STREAM_TOPOLOGY]).generate_state(1)[0]),
        clusters=groups if topo.cluster_by_group else None,
        base_rtt_ms=topo.base_rtt_ms,
        scale_ms=topo.scale_ms,
        cluster_spread=topo.cluster_spread,
        comp_mean_ms=topo.comp_mean_ms,
        comp_sd_ms=topo.comp_sd_ms,
    )
    if n >= 2:
        table = build_neighbors(rtt, comp, cfg.overlay)
        mask = table.mask(n)
    else:
        mask = np.zeros((1, 1), dtype=bool)
    weights = ProximityWeights.from_rtt(rtt, cfg.overlay.tau_d_ms, mask)
    off_diag = corr.copy()
    np.fill_diagonal(off_diag, -np.inf)
    strong = (off_diag > cfg.failure.c_threshold).any(axis=1)
    return Environment(
        cfg, seed, task, parts, local, labels, bits, corr, groups, rtt, comp, mask, weights, strong
    )


@dataclass
class RunLog:
    seed: int
    policy: str
    records: list[dict] = field(default_factory=list)
    complete: bool = False

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def series(self, key: str) -> list:
        return [r[key] for r in self.records if r.get("type") == "round"]

    def fairness_series(self, key: str) -> list:
        return [r["fairness"][key] for r in self.records if r.get("type") == "round"]


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _round_float(x: float | None, nd: int = 12) -> float | None:
    return None if x is None else round(float(x), nd)


def run_experiment(
    cfg: ExperimentConfig,
    seed: int,
    policy: str | PolicyKind,
    env: Environment | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> RunLog:
    """Simulate ``cfg.rounds`` rounds; ``on_record`` sees each record as it is emitted."""
    policy = PolicyKind(policy)
    env = env or build_environment(cfg, seed)
    n = cfg.n_logical_clients
    nodes = list(range(n))
    params = cfg.availability
    sel_policy = cfg.with_policy(policy.value).selection
    task = env.task
    run = RunLog(seed, policy.value)

    def emit(record: dict) -> None:
        run.records.append(record)
        if on_record is not None:
            on_record(record)

    telemetry = {i: NodeTelemetry(i, window_w=params.window_w) for i in nodes}
    corr_state = CorrelationState(env.trace_corr, alpha=cfg.alpha, tau_corr=cfg.tau_corr)
    rho = np.zeros(n)
    model = GlobalModel(task.init_params(), 0)
    cumulative = np.zeros(n, dtype=np.int64)
    base_lat = np.full(n, cfg.telemetry.baseline_latency_ms)
    base_loss = np.full(n, cfg.telemetry.baseline_loss)
    mode = cfg.failure.mode
    T = env.traces.shape[1]

    acc0, _ = evaluate(model, task.test, range(cfg.data.n_classes), task)
    emit({
        "type": "init",
        "seed": seed,
        "policy": policy.value,
        "n_logical_clients": n,
        "n_physical_workers": cfg.n_physical_workers,
        "rounds": cfg.rounds,
        "accuracy": _round_float(acc0),
    })

    for r in range(cfg.rounds):
        step = (cfg.traces.offset + r) % T
        online = env.traces[:, step].astype(bool)
        latency, loss, spiked = telemetry_noise_arrays(base_lat, base_loss, cfg.telemetry, _rng(seed, STREAM_TELEMETRY, r))
        link_bad = (latency > cfg.overlay.latency_fail_ms) | (loss > cfg.overlay.tau_loss)

        if mode is FailureMode.INDEPENDENT_PROB:
            failed = set(inject_independent(nodes, cfg.failure.p_f, _rng(seed, STREAM_FAILURE, r)))
            failed |= set(np.flatnonzero(link_bad).tolist())
        elif mode is FailureMode.INDEPENDENT_TELEMETRY:
            failed = set(np.flatnonzero(~online | link_bad).tolist())
        else:
            seeds = np.flatnonzero((~online & env.strong_partner) | link_bad).tolist()
            failed = set(inject_correlated(nodes, env.trace_corr, cfg.failure.c_threshold, seeds))
        timed_out = np.zeros(n, dtype=bool)
        timed_out[list(failed)] = True

        active = [i for i in nodes if i not in failed]
        covered = sorted(set().union(*(env.labels[i] for i in active))) if active else []

        if policy is PolicyKind.CLASSIC_PSP:
            sel = select_classic_psp(active, sel_policy.target_count, _rng(seed, STREAM_SELECTION, r), r)
            sel.label_coverage = set().union(*(env.labels[i] for i in sel.selected)) if sel.selected else set()
        else:
            sel = select_aw_psp(
                active,
                telemetry,
                corr_state,
                env.labels,
                sel_policy,
                _rng(seed, STREAM_SELECTION, r),
                round_index=r,
                params=params,
                failed=failed,
                rho=rho,
            )

        plan = plan_waves(sel.selected, cfg.n_physical_workers)
        losses_by_class: dict[int, list[float]] = {}
        class_counts: dict[int, int] = {}
        updates = []
        utility = {}
        for wave in plan.waves:
            for node in wave:
                data = env.local_data[node]
                per_sample = task.per_sample_loss(model.params, data)
                for c in sorted(env.labels[node]):
                    vals = per_sample[data.y == c]
                    losses_by_class.setdefault(c, []).extend(vals.tolist())
                    class_counts[c] = class_counts.get(c, 0) + int(vals.size)
                w, lb, la = local_train(
                    model,
                    data,
                    cfg.data.local_epochs,
                    task,
                    learning_rate=cfg.data.learning_rate,
                    batch_size=cfg.data.batch_size,
                    rng=_rng(seed, STREAM_TRAIN, r, node),
                )
                updates.append((w, len(data)))
                utility[str(node)] = _round_float(lb - la)
        stalled = not updates
        model = GlobalModel(aggregate(updates, model).params, r + 1)
        cumulative[sel.selected] += 1

        acc, per_class = evaluate(model, task.test, covered, task)
        report = fairness_report(r, losses_by_class, class_counts, cfg.data.n_classes, cumulative)

        # telemetry and correlation state advance after selection
        for i in nodes:
            ok = (not timed_out[i]) and latency[i] + env.comp_times[i] <= params.t_max_ms
            telemetry[i].observe(bool(ok), float(latency[i]), float(loss[i]), params, timed_out=bool(timed_out[i]))
        for i in sel.selected:
            telemetry[i].mark_participation(r)
        corr_state.record_round_failures(failed, env.neighbor_mask)
        rho = corr_state.penalties(env.weights)[1]

        emit({
            "type": "round",
            "round": r,
            "trace_step": int(step),
            "failed_count": len(failed),
            "active_count": len(active),
            "failed_ids": sorted(failed),
            "covered_labels": covered,
            "selection": sel.to_record(),
            "waves": [list(w) for w in plan.waves],
            "n_waves": plan.n_waves,
            "stalled": stalled,
            "accuracy": _round_float(acc),
            "per_class_accuracy": {str(k): _round_float(v) for k, v in per_class.items()},
            "loss_delta": utility,
            "spikes": int(spiked.sum()),
            "fairness": {
                "avg_within_class_var": _round_float(report.avg_within_class_var),
                "var_of_class_means": _round_float(report.var_of_class_means),
                "kl_divergence": _round_float(report.kl_divergence),
                "unseen_class_count": report.unseen_class_count,
                "gini": _round_float(report.gini),
            },
        })
    emit({"type": "summary", **summarize(run)})
    run.complete = True
    return run


def _mean(values: list) -> float | None:
    vals = [v for v in values if v is not None]
    return round(float(np.mean(vals)), 12) if vals else None


def summarize(run: RunLog) -> dict:
    rounds = [r for r in run.records if r.get("type") == "round"]
    acc = [r["accuracy"] for r in rounds]
    return {
        "seed": run.seed,
        "policy": run.policy,
        "rounds": len(rounds),
        "stalled_rounds": sum(1 for r in rounds if r["stalled"]),
        "undefined_accuracy_rounds": sum(1 for a in acc if a is None),
        "mean_accuracy": _mean(acc),
        "final_accuracy": acc[-1] if acc else None,
        "mean_active": _mean([r["active_count"] for r in rounds]),
        "mean_failed": _mean([r["failed_count"] for r in rounds]),
        "mean_unseen": _mean([r["fairness"]["unseen_class_count"] for r in rounds]),
        "mean_kl": _mean([r["fairness"]["kl_divergence"] for r in rounds]),
        "mean_avg_within_class_var": _mean([r["fairness"]["avg_within_class_var"] for r in rounds]),
        "mean_var_of_class_means": _mean([r["fairness"]["var_of_class_means"] for r in rounds]),
        "final_gini": rounds[-1]["fairness"]["gini"] if rounds else None,
    }
