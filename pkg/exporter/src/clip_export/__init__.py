"""Offline embedding exporter: runs a frozen contrastive vision-language
checkpoint over a local image dataset (or captioned pair set) and writes
EMB1 files plus JSON manifests for downstream incremental-learning runs.
"""

__version__ = "0.1.0"

from .backends import FakeEncoder, HFClipEncoder, make_encoder
from .datasets import ImageDataset, load_dataset
from .emb1 import write_emb1
from .errors import ExportError
from .export import ExportSpec, export_classification, export_pairs, validate_template

__all__ = [
    "ExportError", "ExportSpec", "FakeEncoder", "HFClipEncoder", "ImageDataset",
    "export_classification", "export_pairs", "load_dataset", "make_encoder",
    "validate_template", "write_emb1", "__version__",
]
