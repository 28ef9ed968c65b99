"""Model checkpoint container, format "PFC1" version 1.

Little-endian throughout; every matrix is stored as u32 rows, u32 cols,
rows*cols float64 values. Layout:

    magic    4 bytes  b"PFC1"
    version  u32      1
    dim      u32
    mode     u8       0 = plain, 1 = residual
    fusion   u8       0/1 (projection-only variant stores 0)
    prompt_len u32
    tasks    u32      learned task count
    logit_scale f64
    seed     u64      init seed (expansion streams derive from it)
    per task: img layer mat, txt layer mat, prompt mat, frozen flags u8 x3
    wq, wk, wv mats
    nclass   u32
    per class: id u32, name_len u32, name UTF-8,
               prototype d, anchor d (f64 each)
"""

from __future__ import annotations

import struct

import numpy as np

from .dataio import EmbeddingDataset
from .errors import CorruptFileError, EmbeddingFormatError
from .model import (PLAIN, RESIDUAL, ContextPromptBank, ModelState,
                    ProjectionStack)

MAGIC = b"PFC1"
VERSION = 1


def _mat_bytes(m: np.ndarray) -> bytes:
    m = np.ascontiguousarray(m, dtype="<f8")
    return struct.pack("<II", m.shape[0], m.shape[1]) + m.tobytes()


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"checkpoint ends inside {what}")
    return buf


def _read_mat(f, what: str) -> np.ndarray:
    rows, cols = struct.unpack("<II", _read_exact(f, 8, what + " shape"))
    raw = _read_exact(f, 8 * rows * cols, what)
    return np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()


def save_state(state: ModelState, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIBBII", VERSION, state.dim,
                            0 if state.mode == PLAIN else 1,
                            1 if state.fusion else 0,
                            state.prompt_len, state.tasks_learned))
        f.write(struct.pack("<d", state.logit_scale))
        f.write(struct.pack("<Q", state.seed & ((1 << 64) - 1)))
        for t in range(state.tasks_learned):
            f.write(_mat_bytes(state.img_stack.layers[t]))
            f.write(_mat_bytes(state.txt_stack.layers[t]))
            f.write(_mat_bytes(state.prompts.blocks[t]))
            f.write(struct.pack("<BBB", int(state.img_stack.frozen[t]),
                                int(state.txt_stack.frozen[t]),
                                int(state.prompts.frozen[t])))
        for w in (state.wq, state.wk, state.wv):
            f.write(_mat_bytes(w))
        f.write(struct.pack("<I", state.num_seen))
        for i in range(state.num_seen):
            name = state.seen_names[i].encode("utf-8")
            f.write(struct.pack("<II", state.seen[i], len(name)))
            f.write(name)
            f.write(np.ascontiguousarray(state.prototypes[i], dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(state.text_anchors[i], dtype="<f8").tobytes())


def load_state(path) -> ModelState:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise EmbeddingFormatError("bad checkpoint magic")
        version, dim, mode_b, fusion_b, prompt_len, tasks = struct.unpack(
            "<IIBBII", _read_exact(f, 18, "header"))
        if version != VERSION:
            raise EmbeddingFormatError(f"unsupported checkpoint version {version}")
        (logit_scale,) = struct.unpack("<d", _read_exact(f, 8, "logit scale"))
        (seed,) = struct.unpack("<Q", _read_exact(f, 8, "seed"))
        mode = PLAIN if mode_b == 0 else RESIDUAL
        img = ProjectionStack(dim, mode)
        txt = ProjectionStack(dim, mode)
        prompts = ContextPromptBank(dim, prompt_len)
        for t in range(tasks):
            img.layers.append(_read_mat(f, f"img layer {t}"))
            txt.layers.append(_read_mat(f, f"txt layer {t}"))
            prompts.blocks.append(_read_mat(f, f"prompt block {t}"))
            fi, ft, fp = struct.unpack("<BBB", _read_exact(f, 3, "frozen flags"))
            img.frozen.append(bool(fi))
            txt.frozen.append(bool(ft))
            prompts.frozen.append(bool(fp))
        wq = _read_mat(f, "wq")
        wk = _read_mat(f, "wk")
        wv = _read_mat(f, "wv")
        (nclass,) = struct.unpack("<I", _read_exact(f, 4, "class count"))
        seen, names = [], []
        prototypes = np.zeros((nclass, dim))
        anchors = np.zeros((nclass, dim))
        for i in range(nclass):
            cid, nlen = struct.unpack("<II", _read_exact(f, 8, "class entry"))
            names.append(_read_exact(f, nlen, "class name").decode("utf-8"))
            seen.append(int(cid))
            prototypes[i] = np.frombuffer(_read_exact(f, 8 * dim, "prototype"), dtype="<f8")
            anchors[i] = np.frombuffer(_read_exact(f, 8 * dim, "anchor"), dtype="<f8")
        if f.read(1):
            raise EmbeddingFormatError("trailing bytes after checkpoint payload")
    state = ModelState(
        dim=dim, mode=mode, logit_scale=logit_scale, prompt_len=prompt_len,
        seed=int(seed), fusion=bool(fusion_b), img_stack=img, txt_stack=txt,
        prompts=prompts, wq=wq, wk=wk, wv=wv,
        prototypes=prototypes, text_anchors=anchors,
        seen=seen, seen_names=names)
    state._pos = {c: i for i, c in enumerate(seen)}
    return state


def check_dataset_compat(state: ModelState, ds: EmbeddingDataset) -> None:
    """Reject dimension mismatches before any math runs."""
    if state.dim != ds.dim:
        raise EmbeddingFormatError(
            f"checkpoint dim {state.dim} != dataset dim {ds.dim}")
