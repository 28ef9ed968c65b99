"""Model state and math: expandable projections, prompt bank, attention fusion,
and the three cosine matching heads (projected text matching, prototype
matching, fused text matching).

Projections aggregate additively: plain mode sums task layers, residual mode
sums (layer + identity) per task, so zero-initialized residual layers start
at exact zero-shot behavior. One task = one new image layer, one new text
layer, one new prompt block; earlier ones freeze.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import kernels, ops
from .rng import SplitMix64, derive

PLAIN = "plain"
RESIDUAL = "residual"
MODES = (PLAIN, RESIDUAL)

_FUSION_TAG = 0xF051
_EXPAND_TAG = 0xE4BA


@dataclass
class ProjectionStack:
    dim: int
    mode: str
    layers: list = field(default_factory=list)   # (d,d) float64 per task
    frozen: list = field(default_factory=list)   # parallel bools

    @property
    def depth(self) -> int:
        return len(self.layers)

    def effective(self) -> np.ndarray:
        """The aggregate as a single matrix: sum of layers, plus depth * I in
        residual mode. Applying it equals summing per-layer outputs."""
        a = np.zeros((self.dim, self.dim))
        for w in self.layers:
            a += w
        if self.mode == RESIDUAL:
            a += self.depth * np.eye(self.dim)
        return a


@dataclass
class ContextPromptBank:
    dim: int
    prompt_len: int
    blocks: list = field(default_factory=list)   # (c,d) float64 per task
    frozen: list = field(default_factory=list)

    def rows(self) -> np.ndarray:
        """All blocks stacked in task order, shape (tasks * c, d)."""
        if not self.blocks or self.prompt_len == 0:
            return np.zeros((0, self.dim))
        return np.concatenate(self.blocks, axis=0)


@dataclass
class Grads:
    img: np.ndarray
    txt: np.ndarray
    wq: np.ndarray | None = None
    wk: np.ndarray | None = None
    wv: np.ndarray | None = None
    prompt: np.ndarray | None = None


@dataclass
class ModelState:
    dim: int
    mode: str
    logit_scale: float
    prompt_len: int
    seed: int
    fusion: bool
    img_stack: ProjectionStack
    txt_stack: ProjectionStack
    prompts: ContextPromptBank
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    prototypes: np.ndarray              # (K,d) raw class means, frozen at their task
    text_anchors: np.ndarray            # (K,d) raw class text embeddings
    seen: list = field(default_factory=list)        # class ids, arrival order
    seen_names: list = field(default_factory=list)
    _pos: dict = field(default_factory=dict, repr=False)

    @property
    def num_seen(self) -> int:
        return len(self.seen)

    @property
    def tasks_learned(self) -> int:
        return self.img_stack.depth

    def positions(self, labels) -> np.ndarray:
        """Map dataset class ids to registry positions; unseen ids raise."""
        try:
            return np.asarray([self._pos[int(c)] for c in np.atleast_1d(labels)], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"label {e.args[0]} not in the seen-class registry") from None


def new_state(dim: int, mode: str = PLAIN, logit_scale: float = 100.0,
              prompt_len: int = 3, seed: int = 1993, fusion: bool = True) -> ModelState:
    """Empty model: fusion weights initialized, no tasks yet."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if dim < 1 or prompt_len < 0 or logit_scale <= 0:
        raise ValueError("bad dimensions or scale")
    bound = 1.0 / np.sqrt(dim)
    rng = SplitMix64(derive(seed, _FUSION_TAG))
    wq = rng.uniform(-bound, bound, (dim, dim))
    wk = rng.uniform(-bound, bound, (dim, dim))
    wv = rng.uniform(-bound, bound, (dim, dim))
    return ModelState(
        dim=dim, mode=mode, logit_scale=float(logit_scale), prompt_len=prompt_len,
        seed=seed, fusion=fusion,
        img_stack=ProjectionStack(dim, mode), txt_stack=ProjectionStack(dim, mode),
        prompts=ContextPromptBank(dim, prompt_len),
        wq=wq, wk=wk, wv=wv,
        prototypes=np.zeros((0, dim)), text_anchors=np.zeros((0, dim)))


def clone(state: ModelState) -> ModelState:
    return copy.deepcopy(state)


def expand_task(state: ModelState, class_ids, prototypes: np.ndarray,
                anchors: np.ndarray, names=None) -> ModelState:
    """Freeze existing layers/prompts, append a trainable layer pair and prompt
    block, and register the new classes. Mutates and returns state."""
    class_ids = [int(c) for c in class_ids]
    prototypes = np.asarray(prototypes, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if prototypes.shape != (len(class_ids), state.dim) or anchors.shape != prototypes.shape:
        raise ValueError("prototypes/anchors must be (num_new_classes, dim)")
    dup = set(class_ids) & set(state.seen)
    if dup or len(set(class_ids)) != len(class_ids):
        raise ValueError(f"classes already registered or repeated: {sorted(dup)}")
    if names is None:
        names = [f"class_{c}" for c in class_ids]

    for stack in (state.img_stack, state.txt_stack):
        stack.frozen = [True] * stack.depth
    state.prompts.frozen = [True] * len(state.prompts.blocks)

    t = state.img_stack.depth + 1
    bound = 1.0 / np.sqrt(state.dim)
    rng = SplitMix64(derive(state.seed, _EXPAND_TAG, t))
    for stack in (state.img_stack, state.txt_stack):  # draw order: img then txt
        if state.mode == RESIDUAL:
            layer = np.zeros((state.dim, state.dim))
            rng.uniform(-bound, bound, (state.dim, state.dim))  # keep streams aligned across modes
        else:
            layer = rng.uniform(-bound, bound, (state.dim, state.dim))
        stack.layers.append(layer)
        stack.frozen.append(False)
    state.prompts.blocks.append(rng.uniform(-bound, bound, (state.prompt_len, state.dim)))
    state.prompts.frozen.append(False)

    state.prototypes = np.concatenate([state.prototypes, prototypes], axis=0)
    state.text_anchors = np.concatenate([state.text_anchors, anchors], axis=0)
    for c, nm in zip(class_ids, names):
        state._pos[c] = len(state.seen)
        state.seen.append(c)
        state.seen_names.append(str(nm))
    return state


def trainable_params(state: ModelState) -> list:
    """Current-task parameter arrays, in a pinned order."""
    params = [state.img_stack.layers[-1], state.txt_stack.layers[-1]]
    if state.fusion:
        params += [state.wq, state.wk, state.wv]
        if state.prompt_len > 0:
            params.append(state.prompts.blocks[-1])
    return params


def grads_list(g: Grads) -> list:
    """Grads in the same order as trainable_params."""
    out = [g.img, g.txt]
    for a in (g.wq, g.wk, g.wv, g.prompt):
        if a is not None:
            out.append(a)
    return out


def aggregate(stack: ProjectionStack, x: np.ndarray) -> np.ndarray:
    """Apply the stack to a vector (d,) or rows (N,d): plain mode sums W_m x,
    residual mode sums (W_m x + x)."""
    if stack.depth == 0:
        raise ValueError("empty projection stack")
    return x @ stack.effective().T


def pm_logits(state: ModelState, z: np.ndarray) -> np.ndarray:
    """Projected-matching logits for one query, shape (K,)."""
    if state.tasks_learned == 0:
        raise ValueError("no task expanded yet")
    return pm_logits_batch(state, z[None, :])[0]


def pm_logits_batch(state: ModelState, z: np.ndarray) -> np.ndarray:
    """Projected-matching logits: scale * cosine of projected queries vs
    projected text anchors, shape (B, K)."""
    zq = z @ state.img_stack.effective().T
    t = state.text_anchors @ state.txt_stack.effective().T
    cos, _ = ops.cross_cosine_fwd(zq, t)
    return state.logit_scale * cos


def build_context(state: ModelState) -> np.ndarray:
    """Fusion context rows: projected prototypes, projected anchors, prompts."""
    p = state.prototypes @ state.img_stack.effective().T
    w = state.text_anchors @ state.txt_stack.effective().T
    return np.concatenate([p, w, state.prompts.rows()], axis=0)


def fuse_batch(state: ModelState, z: np.ndarray):
    """Attention over [projected query; context] per instance.

    Returns (query_out (B,d), proto_out (B,K,d), anchor_out (B,K,d)).
    """
    k = state.num_seen
    zq = z @ state.img_stack.effective().T
    ctx = build_context(state)
    b = z.shape[0]
    sets = np.empty((b, 1 + ctx.shape[0], state.dim))
    sets[:, 0, :] = zq
    sets[:, 1:, :] = ctx[None, :, :]
    outs, *_ = kernels.active().attention_batch_fwd(sets, state.wq, state.wk, state.wv)
    return outs[:, 0, :], outs[:, 1:1 + k, :], outs[:, 1 + k:1 + 2 * k, :]


def fuse(state: ModelState, z: np.ndarray):
    """Single-query fusion: (adapted query (d,), adapted P (K,d), adapted W (K,d)).
    Adapted prompt rows are dropped (they are never matching targets)."""
    o0, op, ow = fuse_batch(state, z[None, :])
    return o0[0], op[0], ow[0]


def vm_tm_logits(state: ModelState, z: np.ndarray):
    """Prototype-matching and fused text-matching logits for one query, one
    fusion pass; each shape (K,)."""
    o0, op, ow = fuse_batch(state, z[None, :])
    vm, _ = ops.pair_cosine_fwd(o0, op)
    tm, _ = ops.pair_cosine_fwd(o0, ow)
    return state.logit_scale * vm[0], state.logit_scale * tm[0]


def total_logits_batch(state: ModelState, z: np.ndarray, fusion=None) -> np.ndarray:
    """Sum of head logits per candidate, shape (B, K). fusion=None follows the
    state; fusion=False is the projection-only pathway (projected matching)."""
    use_fusion = state.fusion if fusion is None else fusion
    logits = pm_logits_batch(state, z)
    if use_fusion and state.num_seen:
        o0, op, ow = fuse_batch(state, z)
        vm, _ = ops.pair_cosine_fwd(o0, op)
        tm, _ = ops.pair_cosine_fwd(o0, ow)
        logits = logits + state.logit_scale * (vm + tm)
    return logits


def forward(state: ModelState, z: np.ndarray):
    """Single-instance head logits: (pm, vm, tm), each shape (K,)."""
    zb = z[None, :]
    pm = pm_logits_batch(state, zb)[0]
    if state.num_seen == 0:
        empty = np.zeros(0)
        return pm, empty.copy(), empty.copy()
    o0, op, ow = fuse_batch(state, zb)
    vm, _ = ops.pair_cosine_fwd(o0, op)
    tm, _ = ops.pair_cosine_fwd(o0, ow)
    return pm, state.logit_scale * vm[0], state.logit_scale * tm[0]


def argmax_lowest_id(logits: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Row-wise argmax over logits (B,K); exact ties go to the lowest class id."""
    best = logits.max(axis=1, keepdims=True)
    masked = np.where(logits == best, ids[None, :], np.iinfo(np.int64).max)
    return masked.min(axis=1)


def predict_batch(state: ModelState, z: np.ndarray, candidates=None, fusion=None) -> np.ndarray:
    """Predicted class ids, restricted to `candidates` (default: all seen)."""
    if state.num_seen == 0:
        raise ValueError("no classes registered")
    logits = total_logits_batch(state, z, fusion=fusion)
    if candidates is None:
        cols = np.arange(state.num_seen)
    else:
        cols = state.positions(list(candidates))
    ids = np.asarray(state.seen, dtype=np.int64)[cols]
    return argmax_lowest_id(logits[:, cols], ids)


def predict(state: ModelState, z: np.ndarray, candidates=None, fusion=None) -> int:
    return int(predict_batch(state, z[None, :], candidates, fusion)[0])


def loss_and_grads(state: ModelState, z: np.ndarray, labels) -> tuple:
    """Mean summed cross-entropy of the three heads over the batch, and grads
    for the current task's parameters (plus fusion weights).

    With fusion disabled the loss is the projected-matching term alone.
    Labels must be registered class ids.
    """
    if state.tasks_learned == 0:
        raise ValueError("no task expanded yet")
    z = np.asarray(z, dtype=np.float64)
    b = z.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    pos = state.positions(labels)
    s = state.logit_scale
    k = state.num_seen

    a_img = state.img_stack.effective()
    a_txt = state.txt_stack.effective()
    zq = z @ a_img.T
    t_rows = state.text_anchors @ a_txt.T

    pm_cos, pm_cache = ops.cross_cosine_fwd(zq, t_rows)
    pm_losses, dpm = ops.softmax_ce(s * pm_cos, pos)
    dzq, dt_rows = ops.cross_cosine_bwd(pm_cache, dpm * (s / b))
    loss = pm_losses.sum() / b

    grads = Grads(img=np.zeros_like(a_img), txt=np.zeros_like(a_txt))
    dp_rows = None
    if state.fusion:
        p_rows = state.prototypes @ a_img.T
        c_rows = state.prompts.rows()
        mc = c_rows.shape[0]
        n = 1 + 2 * k + mc
        sets = np.empty((b, n, state.dim))
        sets[:, 0, :] = zq
        sets[:, 1:1 + k, :] = p_rows[None]
        sets[:, 1 + k:1 + 2 * k, :] = t_rows[None]
        sets[:, 1 + 2 * k:, :] = c_rows[None]
        kb = kernels.active()
        outs, alphas, qr, kr, vr = kb.attention_batch_fwd(sets, state.wq, state.wk, state.wv)
        o0 = outs[:, 0, :]
        op = outs[:, 1:1 + k, :]
        ow = outs[:, 1 + k:1 + 2 * k, :]

        vm_cos, vm_cache = ops.pair_cosine_fwd(o0, op)
        tm_cos, tm_cache = ops.pair_cosine_fwd(o0, ow)
        vm_losses, dvm = ops.softmax_ce(s * vm_cos, pos)
        tm_losses, dtm = ops.softmax_ce(s * tm_cos, pos)
        loss += (vm_losses.sum() + tm_losses.sum()) / b

        do0_v, dop = ops.pair_cosine_bwd(vm_cache, dvm * (s / b))
        do0_t, dow = ops.pair_cosine_bwd(tm_cache, dtm * (s / b))
        douts = np.zeros_like(outs)
        douts[:, 0, :] = do0_v + do0_t
        douts[:, 1:1 + k, :] = dop
        douts[:, 1 + k:1 + 2 * k, :] = dow
        dwq, dwk, dwv, dsets = kb.attention_batch_bwd(
            sets, state.wq, state.wk, state.wv, alphas, qr, kr, vr, douts)
        dzq = dzq + dsets[:, 0, :]
        dp_rows = dsets[:, 1:1 + k, :].sum(axis=0)
        dt_rows = dt_rows + dsets[:, 1 + k:1 + 2 * k, :].sum(axis=0)
        grads.wq, grads.wk, grads.wv = dwq, dwk, dwv
        if state.prompt_len > 0:
            dc = dsets[:, 1 + 2 * k:, :].sum(axis=0)
            grads.prompt = dc[-state.prompt_len:]

    # aggregate is linear: d(effective) flows straight to the current layer
    grads.img = dzq.T @ z
    if dp_rows is not None:
        grads.img += dp_rows.T @ state.prototypes
    grads.txt = dt_rows.T @ state.text_anchors
    return float(loss), grads
