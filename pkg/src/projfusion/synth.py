"""Synthetic embedding datasets with controllable class separation.

Each class k gets a unit direction a_k. Image records are
normalize(a_k + g / separation) and the class text embedding is
normalize(a_k + 2 * g_t / separation): text anchors carry twice the image
noise so nearest-text classification is informative but beatable by
adaptation. separation = inf collapses both onto a_k exactly.
"""

from __future__ import annotations

import numpy as np

from .dataio import ClassEntry, EmbeddingDataset, validate
from .rng import SplitMix64, derive

TEXT_NOISE_FACTOR = 2.0


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def synth_dataset(num_classes: int, per_class: int, dim: int, seed: int,
                  separation: float) -> EmbeddingDataset:
    """Generate a dataset of num_classes * per_class records.

    Deterministic in all arguments; draw order is pinned (anchor block,
    text-noise block, then per-class image blocks).
    """
    if num_classes < 2 or per_class < 1 or dim < 2:
        raise ValueError("need num_classes >= 2, per_class >= 1, dim >= 2")
    if not separation > 0:
        raise ValueError("separation must be positive")
    inv = 0.0 if np.isinf(separation) else 1.0 / separation

    anchors = _unit_rows(SplitMix64(derive(seed, 0xA17C)).normal((num_classes, dim)))
    text_noise = SplitMix64(derive(seed, 0x7E87)).normal((num_classes, dim))
    texts = _unit_rows(anchors + TEXT_NOISE_FACTOR * inv * text_noise)

    img_rng = SplitMix64(derive(seed, 0x13A6))
    embeddings = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for k in range(num_classes):
        block = anchors[k] + inv * img_rng.normal((per_class, dim))
        embeddings[k * per_class:(k + 1) * per_class] = _unit_rows(block)
        labels[k * per_class:(k + 1) * per_class] = k

    width = len(str(num_classes - 1))
    classes = [ClassEntry(f"class_{k:0{width}d}", texts[k]) for k in range(num_classes)]
    ds = EmbeddingDataset(dim=dim, classes=classes, embeddings=embeddings, labels=labels)
    validate(ds)
    return ds
