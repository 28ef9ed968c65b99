"""Export manifests: a JSON sidecar recording exactly what produced a file.

The manifest is deterministic (no timestamps, sorted keys) so re-exporting
the same spec yields byte-identical manifest and payload.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path_for(out) -> str:
    return f"{out}.manifest.json"


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
