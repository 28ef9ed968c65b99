"""Class-incremental learning on frozen vision-language embeddings.

Expandable per-task projections with self-attention cross-modal fusion,
exemplar replay, and the full incremental evaluation protocol, in numpy
(numba-accelerated attention kernels, pure-numpy fallback).
"""

from .dataio import ClassEntry, EmbeddingDataset, read_dataset, split_dataset, write_dataset
from .model import ModelState, expand_task, new_state, predict, predict_batch
from .stream import TaskStream, make_task_stream, task_view
from .synth import synth_dataset
from .trainer import (ExemplarStore, MemoryPolicy, TrainConfig, run_incremental,
                      train_retrieval, train_task)

__version__ = "0.1.0"

__all__ = [
    "ClassEntry", "EmbeddingDataset", "read_dataset", "write_dataset",
    "split_dataset", "synth_dataset", "TaskStream", "make_task_stream",
    "task_view", "ModelState", "new_state", "expand_task", "predict",
    "predict_batch", "TrainConfig", "MemoryPolicy", "ExemplarStore",
    "run_incremental", "train_task", "train_retrieval", "__version__",
]
