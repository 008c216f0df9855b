"""Label-skewed data partitioning across logical clients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .task import Dataset

__all__ = ["DataPartition", "partition_data", "materialize"]


@dataclass(frozen=True)
class DataPartition:
    node_id: int
    class_labels: frozenset[int]
    sample_count: dict[int, int]
    indices: np.ndarray

    def __post_init__(self):
        if not self.class_labels:
            raise ValueError(f"node {self.node_id} holds no labels")

    @property
    def total(self) -> int:
        return int(sum(self.sample_count.values()))


def partition_data(
    n_nodes: int,
    n_classes: int,
    labels_per_client: int,
    samples_per_class: int,
    seed: int,
    labels: np.ndarray | None = None,
) -> list[DataPartition]:
    """Round-robin label assignment with an even split of each class.

    Node ``i`` holds labels ``(i * L + k) mod C`` for ``k < L``. Each class's
    ``samples_per_class`` training rows are shuffled (per ``seed``) and split
    as evenly as possible among that class's holders. ``labels`` gives the
    training label vector; by default rows are laid out class by class.
    """
    if n_nodes < 1 or n_classes < 1:
        raise ValueError("n_nodes and n_classes must be >= 1")
    if not 1 <= labels_per_client <= n_classes:
        raise ValueError("labels_per_client must lie in [1, n_classes]")
    if labels is None:
        labels = np.repeat(np.arange(n_classes), samples_per_class)
    label_sets = [
        frozenset((i * labels_per_client + k) % n_classes for k in range(labels_per_client))
        for i in range(n_nodes)
    ]
    holders: dict[int, list[int]] = {c: [] for c in range(n_classes)}
    for i, ls in enumerate(label_sets):
        for c in sorted(ls):
            holders[c].append(i)
    rng = np.random.default_rng([seed, 0x9A27])
    per_node: list[dict[int, np.ndarray]] = [{} for _ in range(n_nodes)]
    for c in range(n_classes):
        rows = np.flatnonzero(labels == c)
        if not holders[c]:
            continue
        if rows.size < len(holders[c]):
            raise ValueError(
                f"class {c} has {rows.size} samples for {len(holders[c])} holders; "
                "every holder needs at least one"
            )
        rows = rng.permutation(rows)
        for node, chunk in zip(holders[c], np.array_split(rows, len(holders[c]))):
            per_node[node][c] = np.sort(chunk)
    out = []
    for i in range(n_nodes):
        parts = per_node[i]
        idx = np.concatenate([parts[c] for c in sorted(parts)])
        out.append(
            DataPartition(i, label_sets[i], {c: int(parts[c].size) for c in sorted(parts)}, idx)
        )
    return out


def materialize(partition: DataPartition, data: Dataset) -> Dataset:
    return data.subset(partition.indices)
