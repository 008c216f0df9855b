"""Per-round building blocks: wave planning, local training, aggregation, evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .task import Dataset, Task

log = logging.getLogger(__name__)

__all__ = [
    "GlobalModel",
    "WavePlan",
    "plan_waves",
    "local_train",
    "aggregate",
    "evaluate",
]


@dataclass(frozen=True)
class GlobalModel:
    params: np.ndarray
    round: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.params)):
            raise ValueError("model parameters must be finite")


@dataclass(frozen=True)
class WavePlan:
    selected_logical: tuple[int, ...]
    physical_pool: int
    waves: tuple[tuple[int, ...], ...]

    @property
    def n_waves(self) -> int:
        return len(self.waves)


def plan_waves(selected: Sequence[int], physical: int) -> WavePlan:
    """Chunk the selected logical clients into ``ceil(m / P)`` sequential waves."""
    if physical < 1:
        raise ValueError("need at least one physical worker")
    sel = tuple(int(s) for s in selected)
    waves = tuple(sel[k : k + physical] for k in range(0, len(sel), physical))
    assert len(waves) == math.ceil(len(sel) / physical)
    return WavePlan(sel, physical, waves)


def local_train(
    model: GlobalModel,
    data: Dataset,
    epochs: int,
    task: Task,
    *,
    learning_rate: float = 0.1,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, float, float]:
    """Gradient descent on local data; returns ``(params, loss_before, loss_after)``.

    With ``batch_size=None`` each epoch is one full-batch step; otherwise an
    epoch is one shuffled pass in mini-batches (``rng`` required).
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty partition")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    w = model.params.copy()
    loss_before, _ = task.loss_and_grad(w, data)
    n = len(data)
    for _ in range(epochs):
        if batch_size is None or batch_size >= n:
            _, g = task.loss_and_grad(w, data)
            w -= learning_rate * g
            continue
        if rng is None:
            raise ValueError("mini-batch training needs an rng")
        order = rng.permutation(n)
        for k in range(0, n, batch_size):
            _, g = task.loss_and_grad(w, data.subset(order[k : k + batch_size]))
            w -= learning_rate * g
    loss_after = loss_before if epochs == 0 else task.loss_and_grad(w, data)[0]
    return w, float(loss_before), float(loss_after)


def aggregate(
    updates: Iterable[tuple[np.ndarray, float]], previous: GlobalModel | None = None
) -> GlobalModel | None:
    """FedAvg: weighted mean with weights normalized to sum to one.

    An empty update list leaves ``previous`` unchanged (``None`` if absent).
    Updates are reduced in a canonical order so the result does not depend
    on the order they arrive in.
    """
    ups = [(np.asarray(p, dtype=np.float64), float(wt)) for p, wt in updates]
    if not ups:
        log.info("no updates to aggregate; model unchanged")
        return previous
    dims = {p.shape for p, _ in ups}
    if len(dims) != 1:
        raise ValueError(f"updates have mismatched shapes {sorted(dims)}")
    if any(wt < 0 for _, wt in ups):
        raise ValueError("weights must be non-negative")
    total = sum(wt for _, wt in ups)
    if total <= 0:
        raise ValueError("weights must not all be zero")
    ups.sort(key=lambda u: (u[1], u[0].tobytes()))
    acc = np.zeros_like(ups[0][0])
    for p, wt in ups:
        acc += (wt / total) * p
    round_index = previous.round + 1 if previous is not None else 0
    return GlobalModel(acc, round_index)


def evaluate(
    model: GlobalModel, test_set: Dataset, active_label_set: Iterable[int], task: Task
) -> tuple[float | None, dict[int, float]]:
    """Accuracy restricted to covered classes; ``None`` when nothing is covered."""
    covered = sorted(set(int(c) for c in active_label_set))
    if not covered:
        return None, {}
    pred = task.predict(model.params, test_set.x)
    per_class = {}
    for c in covered:
        mask = test_set.y == c
        if not mask.any():
            continue
        per_class[c] = float(np.mean(pred[mask] == c))
    if not per_class:
        return None, {}
    return float(np.mean(list(per_class.values()))), per_class
