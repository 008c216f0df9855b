"""Experiment configuration.

A config is a YAML mapping with nested sections. Parameter names follow the
symbols used in the model (``lambda``, ``tau_lat_ms``, ``alpha``, ``p_f``,
``c_threshold`` ...). Unknown keys and invalid values are collected and
reported together before anything runs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .availability import AvailabilityParams
from .failure_injection import FailureConfig, FailureMode, TelemetryProfile
from .overlay import OverlayConfig
from .selection import FreshnessMode, PolicyKind, SelectionPolicy

__all__ = [
    "ConfigError",
    "DataConfig",
    "TraceConfig",
    "TopologyConfig",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_to_dict",
]


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 10
    n_features: int = 20
    labels_per_client: int = 2
    train_per_class: int = 200
    test_per_class: int = 50
    class_separation: float = 0.6
    local_epochs: int = 3
    learning_rate: float = 0.1
    batch_size: int | None = None


@dataclass(frozen=True)
class TraceConfig:
    """Synthetic availability traces.

    ``n_groups`` groups share a base on/off pattern. ``assignment`` maps
    groups to nodes: ``contiguous`` blocks of ids or ``strided`` (node ``i``
    in group ``i mod n_groups``). ``p_on`` may be a scalar or one value per
    group.
    """

    n_groups: int = 10
    steps: int = 2000
    p_on: Any = 0.5
    mean_on_steps: float = 5.0
    flip_prob: float = 0.05
    assignment: str = "contiguous"
    offset: int = 0


@dataclass(frozen=True)
class TopologyConfig:
    cluster_by_group: bool = True
    base_rtt_ms: float = 5.0
    scale_ms: float = 300.0
    cluster_spread: float = 0.03
    comp_mean_ms: float = 200.0
    comp_sd_ms: float = 50.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    n_logical_clients: int = 100
    n_physical_workers: int = 10
    rounds: int = 50
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    policies: tuple[str, ...] = ("aw_psp", "classic_psp")
    output_dir: str = "runs"
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    failure: FailureConfig = field(default_factory=FailureConfig)
    telemetry: TelemetryProfile = field(default_factory=TelemetryProfile)
    availability: AvailabilityParams = field(default_factory=AvailabilityParams)
    alpha: float = 0.5
    tau_corr: float = 0.5
    overlay: OverlayConfig = field(default_factory=OverlayConfig)
    data: DataConfig = field(default_factory=DataConfig)
    traces: TraceConfig = field(default_factory=TraceConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)

    @property
    def target_selection_count(self) -> int:
        return self.selection.target_count

    def with_policy(self, kind: str) -> "ExperimentConfig":
        return dataclasses.replace(self, selection=dataclasses.replace(self.selection, kind=PolicyKind(kind)))


# YAML key -> dataclass field, where the symbol name is not a valid identifier
_RENAMES = {"availability": {"lambda": "lambda_"}}
_SECTIONS = {
    "selection": SelectionPolicy,
    "failure": FailureConfig,
    "telemetry": TelemetryProfile,
    "availability": AvailabilityParams,
    "overlay": OverlayConfig,
    "data": DataConfig,
    "traces": TraceConfig,
    "topology": TopologyConfig,
}
_TOP_LEVEL = {
    "name", "n_logical_clients", "n_physical_workers", "rounds", "seeds", "policies",
    "output_dir", "correlation",
}


def _build_section(name: str, cls, raw: Any, problems: list[str]):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        problems.append(f"{name}: expected a mapping, got {type(raw).__name__}")
        return cls()
    renames = _RENAMES.get(name, {})
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        target = renames.get(key, key)
        if target not in known or target in {"seed"}:
            problems.append(f"{name}.{key}: unknown key")
            continue
        kwargs[target] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{name}: {exc}")
        return cls()


def _check_int(problems: list[str], key: str, value: Any, minimum: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        problems.append(f"{key}: expected an integer >= {minimum}, got {value!r}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    problems: list[str] = []
    for key in raw:
        if key not in _TOP_LEVEL and key not in _SECTIONS:
            problems.append(f"{key}: unknown key")
    sections = {name: _build_section(name, cls, raw.get(name), problems) for name, cls in _SECTIONS.items()}

    corr = raw.get("correlation") or {}
    alpha = corr.get("alpha", 0.5) if isinstance(corr, dict) else 0.5
    tau_corr = corr.get("tau_corr", 0.5) if isinstance(corr, dict) else 0.5
    if isinstance(corr, dict):
        for key in corr:
            if key not in {"alpha", "tau_corr"}:
                problems.append(f"correlation.{key}: unknown key")
    else:
        problems.append("correlation: expected a mapping")
    for key, v in (("correlation.alpha", alpha), ("correlation.tau_corr", tau_corr)):
        if not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
            problems.append(f"{key}: expected a number in [0, 1], got {v!r}")

    defaults = ExperimentConfig()
    top = {k: raw.get(k, getattr(defaults, k)) for k in _TOP_LEVEL - {"correlation"}}
    _check_int(problems, "n_logical_clients", top["n_logical_clients"], 1)
    _check_int(problems, "n_physical_workers", top["n_physical_workers"], 1)
    _check_int(problems, "rounds", top["rounds"], 0)
    seeds = top["seeds"]
    if not isinstance(seeds, (list, tuple)) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        problems.append(f"seeds: expected a non-empty list of non-negative integers, got {seeds!r}")
        seeds = defaults.seeds
    policies = top["policies"]
    if isinstance(policies, str):
        policies = [policies]
    valid = {p.value for p in PolicyKind}
    if not isinstance(policies, (list, tuple)) or not policies or any(p not in valid for p in policies):
        problems.append(f"policies: expected a non-empty list from {sorted(valid)}, got {policies!r}")
        policies = defaults.policies

    data: DataConfig = sections["data"]
    traces: TraceConfig = sections["traces"]
    n = top["n_logical_clients"] if isinstance(top["n_logical_clients"], int) else 1
    _validate_data(data, problems)
    _validate_traces(traces, n, problems)
    if isinstance(n, int) and data.labels_per_client <= data.n_classes:
        holders = -(-n * data.labels_per_client // data.n_classes)
        if data.train_per_class < holders:
            problems.append(
                f"data.train_per_class: {data.train_per_class} samples cannot cover "
                f"{holders} holders per class"
            )
    if sections["selection"].target_count > n:
        problems.append("selection.target_count: exceeds n_logical_clients")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        name=str(top["name"]),
        n_logical_clients=top["n_logical_clients"],
        n_physical_workers=top["n_physical_workers"],
        rounds=top["rounds"],
        seeds=tuple(seeds),
        policies=tuple(policies),
        output_dir=str(top["output_dir"]),
        alpha=float(alpha),
        tau_corr=float(tau_corr),
        **sections,
    )


def _validate_data(d: DataConfig, problems: list[str]) -> None:
    for key in ("n_classes", "n_features", "labels_per_client", "train_per_class", "test_per_class"):
        _check_int(problems, f"data.{key}", getattr(d, key), 1)
    _check_int(problems, "data.local_epochs", d.local_epochs, 0)
    if isinstance(d.labels_per_client, int) and isinstance(d.n_classes, int) and d.labels_per_client > d.n_classes:
        problems.append("data.labels_per_client: exceeds n_classes")
    if not isinstance(d.learning_rate, (int, float)) or d.learning_rate <= 0:
        problems.append("data.learning_rate: must be positive")
    if not isinstance(d.class_separation, (int, float)) or d.class_separation <= 0:
        problems.append("data.class_separation: must be positive")
    if d.batch_size is not None:
        _check_int(problems, "data.batch_size", d.batch_size, 1)
    if isinstance(d.n_classes, int) and d.n_classes < 2:
        problems.append("data.n_classes: need at least 2 classes")


def _validate_traces(t: TraceConfig, n: int, problems: list[str]) -> None:
    _check_int(problems, "traces.n_groups", t.n_groups, 1)
    _check_int(problems, "traces.steps", t.steps, 1)
    _check_int(problems, "traces.offset", t.offset, 0)
    if isinstance(t.n_groups, int) and t.n_groups > n:
        problems.append("traces.n_groups: more groups than nodes")
    if t.assignment not in {"contiguous", "strided"}:
        problems.append(f"traces.assignment: expected 'contiguous' or 'strided', got {t.assignment!r}")
    p_on = t.p_on if isinstance(t.p_on, (list, tuple)) else [t.p_on]
    if isinstance(t.p_on, (list, tuple)) and len(p_on) != t.n_groups:
        problems.append("traces.p_on: list length must equal n_groups")
    if not all(isinstance(p, (int, float)) and 0.0 <= p <= 1.0 for p in p_on):
        problems.append("traces.p_on: values must lie in [0, 1]")
    if not isinstance(t.mean_on_steps, (int, float)) or t.mean_on_steps < 1:
        problems.append("traces.mean_on_steps: must be >= 1")
    if not isinstance(t.flip_prob, (int, float)) or not 0.0 <= t.flip_prob <= 1.0:
        problems.append("traces.flip_prob: must lie in [0, 1]")


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return config_from_dict(raw or {})


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Inverse of :func:`config_from_dict` (round-trips exactly)."""
    out = {}
    for f in fields(cfg):
        if f.name in {"alpha", "tau_corr"}:
            continue
        value = _plain(getattr(cfg, f.name))
        if f.name == "availability":
            value["lambda"] = value.pop("lambda_")
        if f.name == "failure":
            value.pop("seed", None)
        out[f.name] = value
    out["correlation"] = {"alpha": cfg.alpha, "tau_corr": cfg.tau_corr}
    return out
