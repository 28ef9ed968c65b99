"""Encoder backends.

Two kinds of checkpoint identifier:

- ``fake:<dim>``: a deterministic offline stand-in. Images are mean-pooled
  to an 8x8 color grid and texts to a hashed byte-trigram bag; both feature
  vectors go through fixed random projections seeded from the checkpoint id.
  No weights, no downloads, identical output on every run. Content-similar
  inputs map to similar embeddings, but the two modalities are not aligned,
  so it exercises the full export path without pretending to classify.

- anything else: a contrastive vision-language checkpoint loaded through
  transformers (hub id or local directory). Heavy imports happen lazily so
  the fake path never touches torch.

Both backends return unnormalized float64 embeddings; normalization is the
consumer's job.
"""

from __future__ import annotations

import numpy as np

from .errors import ExportError
from .seeding import rng_for

_FEAT = 193          # 8*8*3 pooled image cells / trigram buckets, plus bias
_BUCKETS = _FEAT - 1
_GRID = 8


def _image_features(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 2:
        a = np.stack([a, a, a], axis=-1)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ExportError(f"image must be (H, W, 3) or (H, W), got shape {a.shape}")
    floaty = np.issubdtype(a.dtype, np.floating)
    a = a.astype(np.float64)
    if not floaty:
        a = a / 255.0
    # tiny inputs: repeat pixels up to the pooling grid so no cell is empty
    if a.shape[0] < _GRID:
        a = np.repeat(a, -(-_GRID // a.shape[0]), axis=0)
    if a.shape[1] < _GRID:
        a = np.repeat(a, -(-_GRID // a.shape[1]), axis=1)
    pooled = np.empty((_GRID, _GRID, 3))
    for i, band in enumerate(np.array_split(a, _GRID, axis=0)):
        for j, cell in enumerate(np.array_split(band, _GRID, axis=1)):
            pooled[i, j] = cell.mean(axis=(0, 1))
    return np.concatenate([pooled.ravel(), [1.0]])


def _text_features(text: str) -> np.ndarray:
    data = b"\x02" + text.encode("utf-8") + b"\x03"
    feats = np.zeros(_FEAT)
    for i in range(len(data) - 2):
        h = (data[i] * 131 * 131 + data[i + 1] * 131 + data[i + 2]) % _BUCKETS
        feats[h] += 1.0
    feats /= max(1, len(data) - 2)
    feats[_BUCKETS] = 1.0
    return feats


class FakeEncoder:
    """Deterministic offline encoder; see module docstring."""

    def __init__(self, checkpoint: str, dim: int):
        if dim < 1:
            raise ExportError(f"fake encoder dim must be positive, got {dim}")
        self.name = checkpoint
        self.dim = dim
        self._wi = rng_for(checkpoint, "image").standard_normal((_FEAT, dim))
        self._wt = rng_for(checkpoint, "text").standard_normal((_FEAT, dim))

    def encode_images(self, images) -> np.ndarray:
        return np.stack([_image_features(im) @ self._wi for im in images])

    def encode_texts(self, texts) -> np.ndarray:
        return np.stack([_text_features(t) @ self._wt for t in texts])


class HFClipEncoder:
    """Contrastive checkpoint via transformers; batched CPU inference."""

    def __init__(self, checkpoint: str, batch_size: int = 64, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise ExportError(
                "real checkpoints need torch, transformers and Pillow; "
                "install with: pip install 'clip-export[real]'") from e
        try:
            self._model = CLIPModel.from_pretrained(checkpoint).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(checkpoint)
        except (OSError, ValueError) as e:
            raise ExportError(
                f"could not load checkpoint {checkpoint!r}: {e}; pass a hub id "
                "or a local directory holding the model files") from e
        self._torch = torch
        self.name = checkpoint
        self.dim = int(self._model.config.projection_dim)
        self.batch_size = batch_size
        self.device = device

    def _pil(self, img):
        from PIL import Image
        a = np.asarray(img)
        if a.ndim == 2:
            a = np.stack([a, a, a], axis=-1)
        return Image.fromarray(np.ascontiguousarray(a.astype(np.uint8)))

    def encode_images(self, images) -> np.ndarray:
        chunks = []
        images = list(images)
        with self._torch.no_grad():
            for i in range(0, len(images), self.batch_size):
                pil = [self._pil(im) for im in images[i:i + self.batch_size]]
                inputs = self._processor(images=pil, return_tensors="pt").to(self.device)
                feats = self._model.get_image_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float64))
        return np.concatenate(chunks) if chunks else np.zeros((0, self.dim))

    def encode_texts(self, texts) -> np.ndarray:
        chunks = []
        texts = list(texts)
        with self._torch.no_grad():
            for i in range(0, len(texts), self.batch_size):
                inputs = self._processor(
                    text=texts[i:i + self.batch_size], padding=True,
                    truncation=True, return_tensors="pt").to(self.device)
                feats = self._model.get_text_features(**inputs)
                chunks.append(feats.cpu().numpy().astype(np.float64))
        return np.concatenate(chunks) if chunks else np.zeros((0, self.dim))


def make_encoder(checkpoint: str, batch_size: int = 64, device: str = "cpu"):
    """Dispatch a checkpoint id to its backend."""
    if checkpoint.startswith("fake:"):
        tail = checkpoint[len("fake:"):]
        try:
            dim = int(tail)
        except ValueError:
            raise ExportError(f"fake checkpoint id must be fake:<dim>, got {checkpoint!r}") from None
        return FakeEncoder(checkpoint, dim)
    return HFClipEncoder(checkpoint, batch_size=batch_size, device=device)
