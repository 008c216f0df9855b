"""Fairness and coverage metrics.

Variances are population variances. Functions return ``None`` when the
metric is undefined for the input (no covered class, no samples, no
selections).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "RoundLossSample",
    "FairnessReport",
    "group_losses",
    "avg_within_class_variance",
    "var_of_class_means",
    "kl_from_uniform",
    "unseen_classes",
    "gini",
    "fairness_report",
    "reports_to_csv",
]


@dataclass(frozen=True)
class RoundLossSample:
    class_label: int
    node_id: int
    loss: float

    def __post_init__(self):
        if not math.isfinite(self.loss) or self.loss < 0:
            raise ValueError(f"loss must be finite and non-negative, got {self.loss}")


@dataclass(frozen=True)
class FairnessReport:
    round: int
    avg_within_class_var: float | None
    var_of_class_means: float | None
    kl_divergence: float | None
    unseen_class_count: int
    gini: float | None


def group_losses(samples: Iterable[RoundLossSample]) -> dict[int, np.ndarray]:
    grouped: dict[int, list[float]] = {}
    for s in samples:
        grouped.setdefault(s.class_label, []).append(s.loss)
    return {c: np.asarray(v, dtype=np.float64) for c, v in sorted(grouped.items())}


def _population_var(x: np.ndarray) -> float:
    return float(np.mean((x - x.mean()) ** 2))


def avg_within_class_variance(losses_by_class: Mapping[int, Sequence[float]]) -> float | None:
    covered = [np.asarray(v, dtype=np.float64) for v in losses_by_class.values() if len(v) > 0]
    if not covered:
        return None
    return float(np.mean([_population_var(v) if v.size > 1 else 0.0 for v in covered]))


def var_of_class_means(losses_by_class: Mapping[int, Sequence[float]]) -> float | None:
    means = [float(np.mean(v)) for v in losses_by_class.values() if len(v) > 0]
    if not means:
        return None
    return _population_var(np.asarray(means))


def kl_from_uniform(class_counts: Mapping[int, int], n_classes: int) -> float | None:
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    counts = np.array([c for c in class_counts.values() if c > 0], dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return None
    p = counts / total
    return max(0.0, float(np.sum(p * np.log(p * n_classes))))


def unseen_classes(class_counts: Mapping[int, int], n_classes: int) -> int:
    return sum(1 for c in range(n_classes) if class_counts.get(c, 0) == 0)


def gini(counts: Sequence[int] | np.ndarray) -> float | None:
    """Pairwise-difference inequality index via the sorted closed form."""
    x = np.sort(np.asarray(counts, dtype=np.int64))
    n = x.size
    if np.any(x < 0):
        raise ValueError("counts must be non-negative")
    total = int(x.sum())
    if n == 0 or total == 0:
        return None
    # sum_{i,j}|x_i - x_j| = 2 * sum_k (2k - n - 1) x_(k), k = 1..n; integers keep this exact
    ranks = 2 * np.arange(1, n + 1, dtype=np.int64) - n - 1
    num = int(np.dot(ranks, x))
    return num / (n * total)


def fairness_report(
    round_index: int,
    losses_by_class: Mapping[int, Sequence[float]],
    class_counts: Mapping[int, int],
    n_classes: int,
    cumulative_selections: Sequence[int] | np.ndarray,
) -> FairnessReport:
    return FairnessReport(
        round=round_index,
        avg_within_class_var=avg_within_class_variance(losses_by_class),
        var_of_class_means=var_of_class_means(losses_by_class),
        kl_divergence=kl_from_uniform(class_counts, n_classes),
        unseen_class_count=unseen_classes(class_counts, n_classes),
        gini=gini(cumulative_selections),
    )


def reports_to_csv(reports: Iterable[FairnessReport], policy: str) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(FairnessReport)]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([names[0], "policy", *names[1:]])
    for rep in reports:
        row = asdict(rep)
        cells = ["" if row[k] is None else (f"{row[k]:.12g}" if isinstance(row[k], float) else row[k]) for k in names]
        writer.writerow([cells[0], policy, *cells[1:]])
    return buf.getvalue()
