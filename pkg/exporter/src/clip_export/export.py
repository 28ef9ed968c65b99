"""Export operations: classification splits and aligned image/caption pairs.

Both write an EMB1 payload plus a ``<out>.manifest.json`` sidecar recording
checkpoint, template, subset rule, split, counts, and the payload's SHA-256.
Embeddings are written exactly as the encoder produced them; nothing here
normalizes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .backends import make_encoder
from .datasets import load_dataset
from .emb1 import write_emb1
from .errors import ExportError
from .manifest import file_sha256, manifest_path_for, write_manifest

PLACEHOLDER = "{}"


@dataclass(frozen=True)
class ExportSpec:
    dataset: str
    checkpoint: str
    template: str
    subset: str  # "all" or a path to a class-list file
    split: str   # "train" | "test"
    out: str
    data_root: str = "."
    batch_size: int = 64


def validate_template(template: str) -> None:
    """The template must contain exactly one `{}` class slot and no other
    braces, e.g. "a photo of a {}."."""
    if template.count(PLACEHOLDER) != 1 or template.count("{") != 1 or template.count("}") != 1:
        raise ExportError(
            f'template must contain exactly one "{{}}" class placeholder, got {template!r}')


def read_subset(path) -> list[str]:
    """Class-list file: one name per line, blank lines and # comments skipped.
    Line order becomes the exported class-id order."""
    p = Path(path)
    if not p.is_file():
        raise ExportError(f"subset file not found: {p}")
    names = []
    for line in p.read_text(encoding="utf-8").splitlines():
        name = line.strip()
        if name and not name.startswith("#"):
            names.append(name)
    if not names:
        raise ExportError(f"subset file {p} lists no classes")
    if len(set(names)) != len(names):
        raise ExportError(f"subset file {p} repeats class names")
    return names


def _base_manifest(kind: str, checkpoint: str, out, dim: int) -> dict:
    return {
        "tool": "clip-export",
        "tool_version": __version__,
        "format": "EMB1",
        "format_version": 1,
        "kind": kind,
        "checkpoint": checkpoint,
        "dim": dim,
        "output": Path(out).name,
    }


def export_classification(spec: ExportSpec, encoder=None, dataset=None) -> dict:
    """One text embedding per (templated) class name, one image embedding per
    record, labels remapped to subset order. Returns the manifest dict."""
    validate_template(spec.template)
    if encoder is None:
        encoder = make_encoder(spec.checkpoint, batch_size=spec.batch_size)
    if dataset is None:
        dataset = load_dataset(spec.dataset, spec.split, spec.data_root)

    if spec.subset == "all":
        names = list(dataset.class_names)
    else:
        names = read_subset(spec.subset)
        unknown = [n for n in names if n not in dataset.class_names]
        if unknown:
            raise ExportError(
                f"subset names not in dataset {spec.dataset!r}: {unknown[:5]}"
                + (" ..." if len(unknown) > 5 else ""))
    old_id = {n: i for i, n in enumerate(dataset.class_names)}
    remap = {old_id[n]: new for new, n in enumerate(names)}
    keep = [i for i, lab in enumerate(dataset.labels) if int(lab) in remap]
    if not keep:
        raise ExportError("no records left after subsetting")
    images = [dataset.images[i] for i in keep]
    labels = np.asarray([remap[int(dataset.labels[i])] for i in keep], dtype=np.int64)

    txt = encoder.encode_texts([spec.template.replace(PLACEHOLDER, n, 1) for n in names])
    img = encoder.encode_images(images)
    write_emb1(spec.out, names, txt, labels, img)

    manifest = _base_manifest("classification", spec.checkpoint, spec.out, int(txt.shape[1]))
    manifest.update({
        "dataset": spec.dataset,
        "split": spec.split,
        "template": spec.template,
        "subset": {"rule": "all" if spec.subset == "all" else "file",
                   "file": None if spec.subset == "all" else Path(spec.subset).name,
                   "classes": names},
        "num_classes": len(names),
        "num_records": int(labels.shape[0]),
        "sha256": file_sha256(spec.out),
    })
    write_manifest(manifest_path_for(spec.out), manifest)
    return manifest


def _read_pairs(source) -> tuple[list[Path], list[str]]:
    """JSONL pair source: each line an object with string fields "image"
    (path, resolved against the source file's directory) and "caption"."""
    src = Path(source)
    if not src.is_file():
        raise ExportError(f"pair source not found: {src}")
    image_paths, captions = [], []
    for ln, line in enumerate(src.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ExportError(f"{src}:{ln}: not valid JSON: {e}") from None
        if (not isinstance(rec, dict) or not isinstance(rec.get("image"), str)
                or not isinstance(rec.get("caption"), str)):
            raise ExportError(
                f'{src}:{ln}: each pair needs string "image" and "caption" fields')
        if not rec["caption"]:
            raise ExportError(f"{src}:{ln}: empty caption")
        image_paths.append(src.parent / rec["image"])
        captions.append(rec["caption"])
    if not image_paths:
        raise ExportError(f"pair source {src} holds no pairs")
    return image_paths, captions


def export_pairs(checkpoint: str, source, out, batch_size: int = 64, encoder=None) -> dict:
    """Aligned probe set: record i is the i-th pair; identical captions share
    one class entry, so the text side of pair i is class `labels[i]`."""
    from .datasets import _load_image_file

    if encoder is None:
        encoder = make_encoder(checkpoint, batch_size=batch_size)
    image_paths, captions = _read_pairs(source)
    unique, labels = [], []
    caption_id: dict[str, int] = {}
    for c in captions:
        if c not in caption_id:
            caption_id[c] = len(unique)
            unique.append(c)
        labels.append(caption_id[c])

    try:
        images = [_load_image_file(p) for p in image_paths]
    except (OSError, ValueError) as e:
        raise ExportError(f"could not read a pair image: {e}") from e
    txt = encoder.encode_texts(unique)
    img = encoder.encode_images(images)
    write_emb1(out, unique, txt, np.asarray(labels, dtype=np.int64), img)

    manifest = _base_manifest("pairs", checkpoint, out, int(txt.shape[1]))
    manifest.update({
        "source": Path(source).name,
        "num_pairs": len(captions),
        "num_unique_captions": len(unique),
        "sha256": file_sha256(out),
    })
    write_manifest(manifest_path_for(out), manifest)
    return manifest
