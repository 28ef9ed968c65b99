"""Training: prototype extraction, herding exemplar selection, per-task SGD
with cosine-annealed learning rate, the incremental loop, and the
retrieval-mode contrastive variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model, ops
from .dataio import EmbeddingDataset
from .errors import DegenerateVectorError
from .rng import SplitMix64, derive
from .stream import TaskStream, task_view


@dataclass(frozen=True)
class MemoryPolicy:
    """fixed: total budget of `size` entries, rebalanced to floor(size/seen)
    per class; perclass: `size` per new class, old classes untouched."""
    kind: str  # "fixed" | "perclass"
    size: int

    def __post_init__(self):
        if self.kind not in ("fixed", "perclass"):
            raise ValueError("policy kind must be fixed or perclass")
        if self.size < 1:
            raise ValueError("policy size must be positive")

    @classmethod
    def parse(cls, text: str) -> "MemoryPolicy":
        """Parse 'fixed:K' or 'perclass:k'."""
        kind, _, num = text.partition(":")
        try:
            return cls(kind.strip(), int(num))
        except ValueError:
            raise ValueError(f"bad policy {text!r}, want fixed:K or perclass:k") from None

    def __str__(self):
        return f"{self.kind}:{self.size}"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr0: float = 0.001
    momentum: float = 0.9
    seed: int = 1993
    prompt_len: int = 3
    logit_scale: float = 100.0
    mode: str = model.PLAIN
    policy: MemoryPolicy = field(default_factory=lambda: MemoryPolicy("perclass", 20))
    fusion: bool = True  # False = projection-only variant (matching head alone)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr0 <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1, lr0 > 0")
        if not (0 <= self.momentum < 1):
            raise ValueError("momentum must be in [0, 1)")
        if self.prompt_len < 0 or self.logit_scale <= 0:
            raise ValueError("prompt_len must be >= 0, logit_scale > 0")
        if self.mode not in model.MODES:
            raise ValueError(f"mode must be one of {model.MODES}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


def compute_prototypes(embeddings: np.ndarray) -> np.ndarray:
    """Mean of one class's raw image embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("need at least one record")
    return embeddings.mean(axis=0)


def herding_select(embeddings: np.ndarray, m: int) -> list:
    """Greedy herding over one class's records.

    With mu the mean of the L2-normalized embeddings, step k picks the index
    maximizing cosine(mu, running mean of selected + candidate); ties go to
    the lowest index. Returns indices in selection order (a nested sequence:
    prefixes solve smaller m).
    """
    x = ops.l2norm_rows(np.asarray(embeddings, dtype=np.float64))
    n = x.shape[0]
    if not (0 <= m <= n):
        raise ValueError(f"m={m} out of range for class of {n}")
    mu = x.mean(axis=0)
    picked: list = []
    chosen = np.zeros(n, dtype=bool)
    acc = np.zeros(x.shape[1])
    for _ in range(m):
        cand = acc[None, :] + x  # running sum; mean's 1/k drops out of cosine
        norms = np.linalg.norm(cand, axis=1)
        norms[norms < ops.NORM_EPS] = np.inf  # degenerate candidate never wins
        scores = (cand @ mu) / norms
        scores[chosen] = -np.inf
        best = int(np.argmax(scores))  # argmax takes the lowest index on ties
        picked.append(best)
        chosen[best] = True
        acc += x[best]
    return picked


@dataclass
class ExemplarStore:
    """Replay memory; per-class embeddings kept in herding order."""
    policy: MemoryPolicy
    per_class: dict = field(default_factory=dict)  # class id -> (k_i, d) array

    def entries(self) -> tuple:
        """All stored (embeddings, labels), classes in insertion order."""
        if not self.per_class:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        embs = np.concatenate(list(self.per_class.values()), axis=0)
        labels = np.concatenate([
            np.full(v.shape[0], c, dtype=np.int64) for c, v in self.per_class.items()])
        return embs, labels

    def total(self) -> int:
        return sum(v.shape[0] for v in self.per_class.values())

    def counts(self) -> dict:
        return {c: v.shape[0] for c, v in self.per_class.items()}


def update_exemplars(store: ExemplarStore, embeddings: np.ndarray, labels: np.ndarray,
                     new_class_ids, seen_count: int) -> ExemplarStore:
    """Select exemplars for the new classes and rebalance under the policy.

    fixed: quota = floor(size / seen_count) per class; existing herding-ordered
    lists are truncated to the quota (prefix = herding solution for smaller m).
    perclass: size per new class, old classes untouched.
    """
    if store.policy.kind == "fixed":
        quota = store.policy.size // seen_count
        for c in list(store.per_class):
            store.per_class[c] = store.per_class[c][:quota]
    else:
        quota = store.policy.size
    for c in new_class_ids:
        rows = np.asarray(embeddings)[np.asarray(labels) == c]
        take = min(quota, rows.shape[0])
        order = herding_select(rows, take)
        store.per_class[int(c)] = rows[order].astype(np.float64)
    return store


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """lr at step t of T total: lr0 * 0.5 * (1 + cos(pi * t / T))."""
    if total <= 0:
        raise ValueError("total steps must be positive")
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total))


class SGD:
    """Momentum SGD over a list of parameter arrays, updated in place:
    v <- momentum * v + g; p <- p - lr * v."""

    def __init__(self, params: list, momentum: float):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list, lr: float) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= lr * v


def train_task(state: model.ModelState, embeddings: np.ndarray, labels: np.ndarray,
               config: TrainConfig) -> model.ModelState:
    """Minibatch SGD over the shuffled union of task records and exemplars.

    expand_task must already have been applied; only the current task's
    parameters (and fusion weights/prompts) receive updates. Epoch shuffles
    come from derive(seed, task_index, epoch); a fresh optimizer per task.
    """
    n = np.asarray(labels).shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if config.epochs == 0:
        return state
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    params = model.trainable_params(state)
    opt = SGD(params, config.momentum)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    t = 0
    task_index = state.tasks_learned
    for epoch in range(config.epochs):
        perm = SplitMix64(derive(config.seed, task_index, epoch)).permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            _, grads = model.loss_and_grads(state, embeddings[idx], labels[idx])
            opt.step(model.grads_list(grads), cosine_lr(t, total_steps, config.lr0))
            t += 1
    return state


@dataclass
class StageResult:
    stage: int
    seen: tuple
    a_b: float  # top-1 percent on the stage's evaluation records
    a_s: float | None = None
    a_u: float | None = None
    a_hm: float | None = None
    probe: float | None = None
    recalls: dict | None = None  # direction -> {k: percent}


def run_incremental(train_ds: EmbeddingDataset, stream: TaskStream, config: TrainConfig,
                    test_ds: EmbeddingDataset | None = None, eval_zeroshot: bool = False,
                    probe: tuple | None = None, stage_hook=None):
    """The full incremental protocol.

    Per stage: prototypes of the new classes -> expand_task -> train on the
    union of task records and exemplars -> update exemplars -> evaluate on
    the test split restricted to seen classes. Returns (list of per-stage
    model snapshots, list of StageResult). `probe` is an optional
    (image rows, text rows) pair scored per stage; `stage_hook(stage, event,
    state, store)` fires at pre_train / post_train / post_exemplars for
    instrumentation.
    """
    from . import metrics  # local import to avoid a module cycle

    eval_ds = test_ds if test_ds is not None else train_ds
    state = model.new_state(train_ds.dim, mode=config.mode, logit_scale=config.logit_scale,
                            prompt_len=config.prompt_len, seed=config.seed,
                            fusion=config.fusion)
    store = ExemplarStore(policy=config.policy)
    snapshots: list = []
    results: list = []
    text = train_ds.text_matrix()
    names = [c.name for c in train_ds.classes]
    for b in range(1, stream.num_tasks + 1):
        view = task_view(stream, train_ds, b)
        ids = stream.tasks[b - 1]
        protos = np.stack([compute_prototypes(view.embeddings[view.labels == c]) for c in ids])
        model.expand_task(state, ids, protos, text[list(ids)], [names[c] for c in ids])
        ex_emb, ex_labels = store.entries()
        if ex_labels.size:
            union_emb = np.concatenate([view.embeddings, ex_emb], axis=0)
            union_labels = np.concatenate([view.labels, ex_labels])
        else:
            union_emb, union_labels = view.embeddings, view.labels
        if stage_hook:
            stage_hook(b, "pre_train", state, store)
        train_task(state, union_emb, union_labels, config)
        if stage_hook:
            stage_hook(b, "post_train", state, store)
        update_exemplars(store, view.embeddings, view.labels, ids, len(view.seen))
        if stage_hook:
            stage_hook(b, "post_exemplars", state, store)

        res = StageResult(stage=b, seen=view.seen,
                          a_b=metrics.top1(state, eval_ds.embeddings, eval_ds.labels, view.seen))
        if eval_zeroshot:
            res.a_s, res.a_u, res.a_hm = metrics.zero_shot_eval(
                state, eval_ds.embeddings, eval_ds.labels, view.seen, view.unseen, text)
        if probe is not None:
            res.probe = metrics.probe_score(state, probe[0], probe[1])
        results.append(res)
        snapshots.append(model.clone(state))
    return snapshots, results


def _contrastive_loss_and_grads(state: model.ModelState, z: np.ndarray, w: np.ndarray):
    """Symmetric InfoNCE over in-batch cosine logits between projected image
    rows and projected text rows; grads for the two current layers."""
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrastive batch needs at least 2 pairs")
    s = state.logit_scale
    a_img = state.img_stack.effective()
    a_txt = state.txt_stack.effective()
    zi = z @ a_img.T
    wt = w @ a_txt.T
    cos, cache = ops.cross_cosine_fwd(zi, wt)
    diag = np.arange(n)
    li, dli = ops.softmax_ce(s * cos, diag)          # image -> text, rows
    lt, dlt = ops.softmax_ce(s * cos.T, diag)        # text -> image, columns
    loss = 0.5 * (li.mean() + lt.mean())
    dcos = (0.5 * s / n) * (dli + dlt.T)
    dzi, dwt = ops.cross_cosine_bwd(cache, dcos)
    return float(loss), dzi.T @ z, dwt.T @ w


def train_retrieval(pairs_img: np.ndarray, pairs_txt: np.ndarray, stream: TaskStream,
                    config: TrainConfig):
    """Retrieval mode: projection expansion only, no fusion, no prompts,
    no replay. Stream tasks index pairs. Returns (snapshots, list of
    per-stage recall dicts over all pairs seen so far).
    """
    from . import metrics

    pairs_img = np.asarray(pairs_img, dtype=np.float64)
    pairs_txt = np.asarray(pairs_txt, dtype=np.float64)
    if pairs_img.shape != pairs_txt.shape or pairs_img.ndim != 2:
        raise ValueError("paired image/text rows must share shape (n, d)")
    state = model.new_state(pairs_img.shape[1], mode=config.mode,
                            logit_scale=config.logit_scale, prompt_len=0,
                            seed=config.seed, fusion=False)
    snapshots: list = []
    reports: list = []
    for b in range(1, stream.num_tasks + 1):
        ids = np.asarray(stream.tasks[b - 1], dtype=np.int64)
        # prototypes/anchors are the pairs themselves; registry tracks pair ids
        model.expand_task(state, ids, pairs_img[ids], pairs_txt[ids])
        z, w = pairs_img[ids], pairs_txt[ids]
        n = z.shape[0]
        if n < 2 and config.epochs > 0:
            raise ValueError("contrastive training needs at least 2 pairs per task")
        params = model.trainable_params(state)
        opt = SGD(params, config.momentum)
        steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
        total_steps = steps_per_epoch * config.epochs
        t = 0
        for epoch in range(config.epochs):
            perm = SplitMix64(derive(config.seed, state.tasks_learned, epoch)).permutation(n)
            for lo in range(0, n, config.batch_size):
                idx = perm[lo:lo + config.batch_size]
                if idx.size < 2:
                    continue  # a stray single-pair tail cannot form negatives
                _, gi, gt = _contrastive_loss_and_grads(state, z[idx], w[idx])
                opt.step([gi, gt], cosine_lr(t, total_steps, config.lr0))
                t += 1
        seen = np.asarray(state.seen, dtype=np.int64)
        si = pairs_img[seen] @ state.img_stack.effective().T
        st = pairs_txt[seen] @ state.txt_stack.effective().T
        sim, _ = ops.cross_cosine_fwd(si, st)
        reports.append({
            "i2t": {k: metrics.recall_at_k(sim, k) for k in (1, 5, 10) if k <= len(seen)},
            "t2i": {k: metrics.recall_at_k(sim.T, k) for k in (1, 5, 10) if k <= len(seen)},
        })
        snapshots.append(model.clone(state))
    return snapshots, reports
