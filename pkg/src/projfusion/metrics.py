"""Evaluation: top-1 accuracies, seen/unseen/harmonic-mean protocol, the
upstream probe score, retrieval recall, baselines, and report serialization.

All accuracies are percentages in [0, 100]; reports round to two decimals
with half-up rounding. CSV is the stable machine interface.
"""

from __future__ import annotations

import csv
import io
import json
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import model, ops


def round2(x: float) -> float:
    """Two-decimal half-up rounding (72.125 -> 72.13)."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _restrict(embeddings, labels, label_set):
    labels = np.asarray(labels)
    mask = np.isin(labels, np.asarray(list(label_set)))
    return np.asarray(embeddings, dtype=np.float64)[mask], labels[mask]


def top1(state: model.ModelState, embeddings, labels, label_set, fusion=None) -> float:
    """Top-1 percent over records whose labels lie in label_set, with
    predictions restricted to that set."""
    if not len(label_set):
        raise ValueError("empty label set")
    emb, lbl = _restrict(embeddings, labels, label_set)
    if lbl.size == 0:
        raise ValueError("no test records in the label set")
    pred = model.predict_batch(state, emb, candidates=label_set, fusion=fusion)
    return 100.0 * float(np.mean(pred == lbl))


def _argmax_cosine_ids(queries: np.ndarray, targets: np.ndarray, ids: np.ndarray) -> np.ndarray:
    cos, _ = ops.cross_cosine_fwd(np.asarray(queries, dtype=np.float64),
                                  np.asarray(targets, dtype=np.float64))
    return model.argmax_lowest_id(cos, ids)


def unseen_top1(state: model.ModelState, embeddings, labels, unseen_set,
                text_matrix: np.ndarray) -> float:
    """Accuracy on unseen classes: projected matching against the unseen
    classes' text anchors through the current stacks (candidates restricted
    to the unseen set)."""
    if not len(unseen_set):
        raise ValueError("empty unseen set")
    emb, lbl = _restrict(embeddings, labels, unseen_set)
    if lbl.size == 0:
        raise ValueError("no test records in the unseen set")
    ids = np.asarray(sorted(int(c) for c in unseen_set), dtype=np.int64)
    zq = emb @ state.img_stack.effective().T
    tq = text_matrix[ids] @ state.txt_stack.effective().T
    pred = _argmax_cosine_ids(zq, tq, ids)
    return 100.0 * float(np.mean(pred == lbl))


def harmonic_mean(a_s: float, a_u: float) -> float:
    if a_s <= 0 or a_u <= 0:
        return 0.0
    return 2.0 * a_s * a_u / (a_s + a_u)


def zero_shot_eval(state: model.ModelState, embeddings, labels, seen_set, unseen_set,
                   text_matrix: np.ndarray):
    """(A_S, A_U, A_HM). With no unseen classes left, A_U and A_HM are None."""
    a_s = top1(state, embeddings, labels, seen_set)
    if not len(unseen_set):
        return a_s, None, None
    a_u = unseen_top1(state, embeddings, labels, unseen_set, text_matrix)
    return a_s, a_u, harmonic_mean(a_s, a_u)


def probe_score(state: model.ModelState, img_rows: np.ndarray, txt_rows: np.ndarray) -> float:
    """Mean cosine of projected (image, text) pairs; measures retained
    cross-modal alignment on an upstream probe set."""
    img_rows = np.asarray(img_rows, dtype=np.float64)
    txt_rows = np.asarray(txt_rows, dtype=np.float64)
    if img_rows.ndim != 2 or img_rows.shape != txt_rows.shape:
        raise ValueError("probe pairs must share shape (n, d)")
    if img_rows.shape[0] == 0:
        raise ValueError("empty probe set")
    zi = img_rows @ state.img_stack.effective().T
    wt = txt_rows @ state.txt_stack.effective().T
    num = np.einsum("nd,nd->n", zi, wt)
    den = np.linalg.norm(zi, axis=1) * np.linalg.norm(wt, axis=1)
    if np.any(den < ops.NORM_EPS):
        raise ValueError("degenerate projected probe vector")
    return float(np.mean(num / den))


def recall_at_k(sim: np.ndarray, k: int) -> float:
    """Percent of rows whose diagonal entry ranks in the row's top k.
    Ties resolve toward lower column indices."""
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    if sim.ndim != 2 or sim.shape[1] != n:
        raise ValueError("similarity matrix must be square")
    if not (1 <= k <= n):
        raise ValueError(f"k={k} out of range 1..{n}")
    diag = np.diag(sim)
    better = (sim > diag[:, None]).sum(axis=1)
    cols = np.arange(n)
    tie_ahead = ((sim == diag[:, None]) & (cols[None, :] < cols[:, None])).sum(axis=1)
    rank = better + tie_ahead  # 0-based rank of the true match in its row
    return 100.0 * float(np.mean(rank < k))


def baseline_zs(embeddings, labels, text_matrix: np.ndarray, label_set) -> float:
    """Zero-shot nearest-text accuracy over the candidate set."""
    ids = np.asarray(sorted(int(c) for c in label_set), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty label set")
    emb, lbl = _restrict(embeddings, labels, ids)
    if lbl.size == 0:
        raise ValueError("no records in the label set")
    pred = _argmax_cosine_ids(emb, np.asarray(text_matrix, dtype=np.float64)[ids], ids)
    return 100.0 * float(np.mean(pred == lbl))


def baseline_zs_predict(embeddings, text_matrix: np.ndarray, label_set) -> np.ndarray:
    """Zero-shot predicted ids for raw queries, candidates = label_set."""
    ids = np.asarray(sorted(int(c) for c in label_set), dtype=np.int64)
    return _argmax_cosine_ids(np.asarray(embeddings, dtype=np.float64),
                              np.asarray(text_matrix, dtype=np.float64)[ids], ids)


def baseline_simplecil(prototypes: np.ndarray, proto_ids, embeddings, labels, label_set) -> float:
    """Prototype cosine classifier: argmax_j cosine(z, p_j) over the set."""
    proto_ids = np.asarray([int(c) for c in proto_ids], dtype=np.int64)
    keep = np.isin(proto_ids, np.asarray(list(label_set)))
    if not keep.any():
        raise ValueError("no prototypes in the label set")
    emb, lbl = _restrict(embeddings, labels, label_set)
    if lbl.size == 0:
        raise ValueError("no records in the label set")
    pred = _argmax_cosine_ids(emb, np.asarray(prototypes, dtype=np.float64)[keep], proto_ids[keep])
    return 100.0 * float(np.mean(pred == lbl))


CSV_COLUMNS = ["stage", "num_seen", "a_b", "a_s", "a_u", "a_hm", "probe",
               "i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10"]


class RunReport:
    """Per-stage metric rows plus the aggregates A_B (last) and A-bar (mean).

    Aggregates are computed from unrounded stage values; all serialized
    numbers are rounded half-up to two decimals.
    """

    def __init__(self, stages: list):
        self.stages = stages  # trainer.StageResult list

    @property
    def a_last(self) -> float:
        if not self.stages:
            raise ValueError("empty report")
        return self.stages[-1].a_b

    @property
    def a_mean(self) -> float:
        if not self.stages:
            raise ValueError("empty report")
        return float(np.mean([s.a_b for s in self.stages]))

    def rows(self) -> list:
        out = []
        for s in self.stages:
            row = {"stage": s.stage, "num_seen": len(s.seen), "a_b": round2(s.a_b)}
            for key in ("a_s", "a_u", "a_hm", "probe"):
                v = getattr(s, key)
                row[key] = "" if v is None else round2(v)
            rec = s.recalls or {}
            for d in ("i2t", "t2i"):
                for k in (1, 5, 10):
                    v = rec.get(d, {}).get(k)
                    row[f"{d}_r{k}"] = "" if v is None else round2(v)
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"stages": self.rows(),
               "a_last": round2(self.a_last),
               "a_mean": round2(self.a_mean)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
