"""Local image dataset loaders.

Supported --dataset names:

- ``cifar100``: the extracted CIFAR-100 python archive. --data-root points
  at the directory containing ``cifar-100-python/`` (or at that directory
  itself). Classes are the 100 fine labels in meta order.
- ``folder``: a generic layout ``<root>/<split>/<class_name>/<files>`` with
  image files (via Pillow) or .npy arrays. Classes are the sorted
  subdirectory names.
- ``fake:<classes>x<per_class>``: deterministic synthetic images, one noisy
  variant per instance around a per-class base pattern. Needs no files;
  used for offline runs and tests.

All loaders return uint8 (H, W, 3) images and int labels indexing
``class_names``.
"""

from __future__ import annotations

import pickle
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExportError
from .seeding import rng_for

SPLITS = ("train", "test")


@dataclass
class ImageDataset:
    name: str
    split: str
    class_names: list[str]
    images: list  # uint8 (H, W, 3) arrays, possibly mixed sizes
    labels: np.ndarray  # (n,) int64

    @property
    def num_records(self) -> int:
        return int(self.labels.shape[0])


def _check_split(split: str) -> None:
    if split not in SPLITS:
        raise ExportError(f"split must be one of {SPLITS}, got {split!r}")


def _load_fake(name: str, split: str) -> ImageDataset:
    m = re.fullmatch(r"fake:(\d+)x(\d+)", name)
    if not m:
        raise ExportError(f"fake dataset name must be fake:<classes>x<per_class>, got {name!r}")
    nclass, per = int(m.group(1)), int(m.group(2))
    if nclass < 1 or per < 1:
        raise ExportError("fake dataset needs at least one class and one record per class")
    width = len(str(nclass - 1))
    names = [f"class_{k:0{width}d}" for k in range(nclass)]
    images, labels = [], []
    for k in range(nclass):
        base = rng_for(name, "base", k).integers(0, 256, (16, 16, 3)).astype(np.float64)
        for i in range(per):
            noise = rng_for(name, split, k, i).normal(0.0, 32.0, (16, 16, 3))
            images.append(np.clip(base + noise, 0, 255).astype(np.uint8))
            labels.append(k)
    return ImageDataset(name, split, names, images, np.asarray(labels, dtype=np.int64))


def _unpickle(path: Path) -> dict:
    with open(path, "rb") as f:
        raw = pickle.load(f, encoding="latin1")
    return {k.decode() if isinstance(k, bytes) else k: v for k, v in raw.items()}


def _load_cifar100(root, split: str) -> ImageDataset:
    base = Path(root)
    if (base / "cifar-100-python").is_dir():
        base = base / "cifar-100-python"
    batch, meta = base / split, base / "meta"
    if not batch.is_file() or not meta.is_file():
        raise ExportError(
            f"CIFAR-100 python archive not found under {root}: expected "
            f"cifar-100-python/{{train,test,meta}}; download and extract "
            "cifar-100-python.tar.gz, then pass --data-root")
    names = list(_unpickle(meta)["fine_label_names"])
    d = _unpickle(batch)
    data = np.asarray(d["data"], dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    labels = np.asarray(d["fine_labels"], dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
        raise ExportError(f"corrupt CIFAR-100 batch {batch}: labels out of range")
    return ImageDataset("cifar100", split, names, list(data), labels)


def _load_image_file(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        a = np.load(path)
        if np.issubdtype(a.dtype, np.floating):
            a = a * 255.0 if a.size and float(np.nanmax(a)) <= 1.0 else a
        return np.clip(a, 0, 255).astype(np.uint8)
    from PIL import Image  # only needed for folder datasets with image files
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _load_folder(root, split: str) -> ImageDataset:
    base = Path(root) / split
    if not base.is_dir():
        raise ExportError(
            f"folder dataset expects {Path(root)}/{split}/<class_name>/<images>; "
            f"{base} is not a directory")
    class_dirs = sorted(p for p in base.iterdir() if p.is_dir())
    if not class_dirs:
        raise ExportError(f"no class subdirectories under {base}")
    images, labels = [], []
    exts = {".npy", ".png", ".jpg", ".jpeg", ".bmp"}
    for k, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in exts)
        if not files:
            raise ExportError(f"class directory {cdir} holds no readable images {sorted(exts)}")
        for p in files:
            images.append(_load_image_file(p))
            labels.append(k)
    names = [p.name for p in class_dirs]
    return ImageDataset("folder", split, names, images, np.asarray(labels, dtype=np.int64))


def load_dataset(name: str, split: str, root=".") -> ImageDataset:
    _check_split(split)
    if name.startswith("fake:"):
        return _load_fake(name, split)
    if name == "cifar100":
        return _load_cifar100(root, split)
    if name == "folder":
        return _load_folder(root, split)
    raise ExportError(
        f"unknown dataset {name!r}: expected cifar100, folder, or fake:<classes>x<per_class>")
