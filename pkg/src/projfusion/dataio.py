"""Embedding dataset container and the EMB1 binary interchange format.

EMB1 layout (all integers little-endian, all floats IEEE-754 float32):

    magic   4 bytes  b"EMB1"
    version u32      1
    dim     u32      embedding width d
    nclass  u32      number of classes
    per class:
        name_len u32, name UTF-8 bytes, text embedding d * f32
    nrec    u64      number of records
    per record:
        label u32, image embedding d * f32

Embeddings are stored as produced by the encoder (unnormalized); consumers
normalize where the math requires it. In memory everything is float64; the
f32 cast happens only at this I/O boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFileError, DatasetValidationError, EmbeddingFormatError

MAGIC = b"EMB1"
VERSION = 1


@dataclass
class ClassEntry:
    name: str
    text_embedding: np.ndarray  # (d,) float64


@dataclass
class EmbeddingDataset:
    dim: int
    classes: list[ClassEntry]
    embeddings: np.ndarray = field(repr=False)  # (n, d) float64
    labels: np.ndarray = field(repr=False)      # (n,) int64

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_records(self) -> int:
        return int(self.labels.shape[0])

    def text_matrix(self) -> np.ndarray:
        """All class text embeddings stacked, shape (num_classes, d)."""
        return np.stack([c.text_embedding for c in self.classes])

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]


def validate(ds: EmbeddingDataset) -> None:
    """Raise DatasetValidationError on any invariant violation."""
    if ds.dim <= 0:
        raise DatasetValidationError("dim must be positive")
    names = [c.name for c in ds.classes]
    if len(set(names)) != len(names):
        raise DatasetValidationError("class names must be unique")
    if any(not n for n in names):
        raise DatasetValidationError("class names must be non-empty")
    for i, c in enumerate(ds.classes):
        t = np.asarray(c.text_embedding)
        if t.shape != (ds.dim,):
            raise DatasetValidationError(f"class {i}: text embedding shape {t.shape} != ({ds.dim},)")
        if not np.all(np.isfinite(t)):
            raise DatasetValidationError(f"class {i}: non-finite text embedding")
        if float(np.linalg.norm(t)) == 0.0:
            raise DatasetValidationError(f"class {i}: zero-norm text embedding")
    emb = np.asarray(ds.embeddings)
    if emb.ndim != 2 or emb.shape[1] != ds.dim:
        raise DatasetValidationError(f"embeddings shape {emb.shape} incompatible with dim {ds.dim}")
    if emb.shape[0] != ds.labels.shape[0]:
        raise DatasetValidationError("labels/embeddings length mismatch")
    if not np.all(np.isfinite(emb)):
        raise DatasetValidationError("non-finite image embedding")
    if ds.num_records and (ds.labels.min() < 0 or ds.labels.max() >= ds.num_classes):
        raise DatasetValidationError("record label out of range")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"file ends inside {what} ({len(buf)}/{n} bytes)")
    return buf


def read_dataset(path) -> EmbeddingDataset:
    """Parse an EMB1 file; validates contents before returning."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version, dim, nclass = struct.unpack("<III", _read_exact(f, 12, "header"))
        if version != VERSION:
            raise EmbeddingFormatError(f"unsupported version {version}")
        if dim == 0:
            raise EmbeddingFormatError("dim must be positive")
        classes = []
        for i in range(nclass):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, f"class {i} name length"))
            name = _read_exact(f, name_len, f"class {i} name").decode("utf-8")
            vec = np.frombuffer(_read_exact(f, 4 * dim, f"class {i} text embedding"), dtype="<f4")
            classes.append(ClassEntry(name, vec.astype(np.float64)))
        (nrec,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))
        rec_dtype = np.dtype([("label", "<u4"), ("emb", "<f4", (dim,))])
        raw = _read_exact(f, rec_dtype.itemsize * nrec, "records") if nrec else b""
        trailing = f.read(1)
    if trailing:
        raise EmbeddingFormatError("trailing bytes after last record")
    if nrec:
        recs = np.frombuffer(raw, dtype=rec_dtype)
        labels = recs["label"].astype(np.int64)
        embeddings = recs["emb"].astype(np.float64)
    else:
        labels = np.zeros(0, dtype=np.int64)
        embeddings = np.zeros((0, dim), dtype=np.float64)
    ds = EmbeddingDataset(dim=int(dim), classes=classes, embeddings=embeddings, labels=labels)
    validate(ds)
    return ds


def write_dataset(ds: EmbeddingDataset, path) -> None:
    """Serialize to EMB1. Values are cast to float32 at this boundary."""
    validate(ds)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, ds.dim, ds.num_classes))
        for c in ds.classes:
            raw = c.name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(np.asarray(c.text_embedding, dtype="<f4").tobytes())
        f.write(struct.pack("<Q", ds.num_records))
        rec_dtype = np.dtype([("label", "<u4"), ("emb", "<f4", (ds.dim,))])
        recs = np.empty(ds.num_records, dtype=rec_dtype)
        recs["label"] = ds.labels.astype(np.uint32)
        recs["emb"] = ds.embeddings.astype(np.float32)
        f.write(recs.tobytes())


def split_dataset(ds: EmbeddingDataset, test_per_class: int) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Deterministic per-class split: the last `test_per_class` records of each
    class (in record order) form the test set, the rest train.

    Every class must keep at least one training record.
    """
    if test_per_class < 0:
        raise ValueError("test_per_class must be >= 0")
    train_mask = np.ones(ds.num_records, dtype=bool)
    for k in range(ds.num_classes):
        idx = ds.class_indices(k)
        if len(idx) < test_per_class + 1:
            raise DatasetValidationError(
                f"class {k} has {len(idx)} records, needs > {test_per_class} to split")
        if test_per_class:
            train_mask[idx[-test_per_class:]] = False

    def take(mask):
        return EmbeddingDataset(
            dim=ds.dim, classes=ds.classes,
            embeddings=ds.embeddings[mask], labels=ds.labels[mask])

    return take(train_mask), take(~train_mask)
