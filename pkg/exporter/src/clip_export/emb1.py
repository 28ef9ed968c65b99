"""Writer for the EMB1 embedding interchange format.

Layout, all integers little-endian, all floats IEEE-754 float32:

    magic   4 bytes  b"EMB1"
    version u32      1
    dim     u32      embedding width d
    nclass  u32      number of classes
    per class:
        name_len u32, name UTF-8 bytes, text embedding d * f32
    nrec    u64      number of records
    per record:
        label u32, image embedding d * f32

This is an independent implementation of the format; consumers parse it with
their own readers. Embeddings go to disk exactly as the encoder produced
them (unnormalized), cast to float32 at this boundary. The writer enforces
the same invariants readers check (unique non-empty names, finite values,
labels in range, nonzero text norms) so an emitted file is always loadable.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ExportError

MAGIC = b"EMB1"
VERSION = 1


def _validate(class_names, text_embeddings, labels, image_embeddings):
    names = list(class_names)
    if not names:
        raise ExportError("no classes to export")
    if len(set(names)) != len(names):
        raise ExportError("class names must be unique")
    if any(not n for n in names):
        raise ExportError("class names must be non-empty")
    txt = np.asarray(text_embeddings, dtype=np.float64)
    img = np.asarray(image_embeddings, dtype=np.float64)
    lbl = np.asarray(labels, dtype=np.int64)
    if txt.ndim != 2 or txt.shape[0] != len(names):
        raise ExportError(f"text embeddings shape {txt.shape} != ({len(names)}, d)")
    dim = txt.shape[1]
    if dim == 0:
        raise ExportError("embedding dim must be positive")
    if img.ndim != 2 or img.shape[1] != dim:
        raise ExportError(f"image embeddings shape {img.shape} incompatible with dim {dim}")
    if lbl.ndim != 1 or lbl.shape[0] != img.shape[0]:
        raise ExportError("labels/image embeddings length mismatch")
    if not np.all(np.isfinite(txt)) or not np.all(np.isfinite(img)):
        raise ExportError("non-finite embedding values")
    if np.any(np.linalg.norm(txt, axis=1) == 0.0):
        raise ExportError("zero-norm text embedding")
    if lbl.size and (lbl.min() < 0 or lbl.max() >= len(names)):
        raise ExportError("record label out of class range")
    return names, txt, lbl, img


def write_emb1(path, class_names, text_embeddings, labels, image_embeddings) -> None:
    """Serialize one embedding set. `text_embeddings` is (num_classes, d),
    `image_embeddings` is (num_records, d), `labels` maps records to classes."""
    names, txt, lbl, img = _validate(class_names, text_embeddings, labels, image_embeddings)
    dim = txt.shape[1]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, dim, len(names)))
        for name, vec in zip(names, txt):
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(vec.astype("<f4").tobytes())
        f.write(struct.pack("<Q", lbl.shape[0]))
        rec = np.dtype([("label", "<u4"), ("emb", "<f4", (dim,))])
        out = np.empty(lbl.shape[0], dtype=rec)
        out["label"] = lbl.astype(np.uint32)
        out["emb"] = img.astype(np.float32)
        f.write(out.tobytes())
