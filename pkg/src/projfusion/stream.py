"""Class-incremental task streams: Base-b / Inc-m splits over a shuffled class order."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dataio import EmbeddingDataset
from .errors import StreamError
from .rng import SplitMix64


@dataclass(frozen=True)
class TaskStream:
    """Immutable split of an ordered class list into incremental tasks.

    tasks[b] holds the class ids of stage b+1 in shuffled order; stages are
    disjoint and cover every class exactly once.
    """
    class_order: tuple
    base: int
    inc: int
    tasks: tuple  # tuple of tuples of class ids
    seed: int

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def seen_before(self, b: int) -> tuple:
        """Class ids of stages 1..b in arrival order (b is 1-indexed)."""
        out = []
        for t in self.tasks[:b]:
            out.extend(t)
        return tuple(out)


class TaskView(NamedTuple):
    embeddings: np.ndarray  # records of this stage's classes
    labels: np.ndarray
    seen: tuple    # class ids seen through this stage, arrival order
    unseen: tuple  # remaining class ids, arrival order


def make_task_stream(dataset, base: int, inc: int, seed: int) -> TaskStream:
    """Shuffle class ids with the stream's own derived RNG and slice into tasks.

    `dataset` may be an EmbeddingDataset or a plain class count. A pure
    function of (class count, base, inc, seed).
    """
    if isinstance(dataset, EmbeddingDataset):
        num_classes = dataset.num_classes
    else:
        num_classes = int(dataset)
    if num_classes <= 0:
        raise StreamError("need at least one class")
    if inc < 1:
        raise StreamError("inc must be >= 1")
    if base < 0:
        raise StreamError("base must be >= 0")
    first = base if base > 0 else inc
    if first > num_classes:
        raise StreamError(f"first task wants {first} classes, dataset has {num_classes}")
    if (num_classes - first) % inc != 0:
        raise StreamError(
            f"{num_classes} classes do not split into base {first} + k*{inc}")
    order = list(range(num_classes))
    SplitMix64(seed).shuffle(order)  # shuffle PRNG seeded directly with `seed`
    tasks = [tuple(order[:first])]
    for lo in range(first, num_classes, inc):
        tasks.append(tuple(order[lo:lo + inc]))
    return TaskStream(class_order=tuple(order), base=base, inc=inc,
                      tasks=tuple(tasks), seed=seed)


def task_view(stream: TaskStream, dataset: EmbeddingDataset, b: int) -> TaskView:
    """Records and label bookkeeping for stage b (1-indexed)."""
    if not (1 <= b <= stream.num_tasks):
        raise StreamError(f"stage {b} out of range 1..{stream.num_tasks}")
    current = stream.tasks[b - 1]
    mask = np.isin(dataset.labels, current)
    seen = stream.seen_before(b)
    unseen = tuple(c for t in stream.tasks[b:] for c in t)
    return TaskView(embeddings=dataset.embeddings[mask],
                    labels=dataset.labels[mask],
                    seen=seen, unseen=unseen)
