"""Differentiable numpy primitives with hand-written backward passes.

Conventions: float64 throughout, weight matrices act on row vectors as
x @ W.T, batch reductions are plain means taken by the caller. Backward
functions return grads in the argument order of the forward.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DegenerateVectorError

NORM_EPS = 1e-12


def _norms(m: np.ndarray, axis: int) -> np.ndarray:
    n = np.linalg.norm(m, axis=axis)
    if np.any(n < NORM_EPS):
        raise DegenerateVectorError("cosine against a (near-)zero vector")
    return n


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Scalar cosine similarity; raises on degenerate inputs."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        raise DegenerateVectorError("cosine against a (near-)zero vector")
    return float(np.dot(u, v) / (nu * nv))


def l2norm_rows(m: np.ndarray) -> np.ndarray:
    return m / _norms(m, axis=1)[:, None]


def linear_fwd(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """w (m,n) applied to a vector (n,) or a batch of rows (B,n)."""
    return x @ w.T


def linear_bwd(w: np.ndarray, x: np.ndarray, upstream: np.ndarray):
    """Returns (dw, dx) for y = x @ w.T."""
    if x.ndim == 1:
        return np.outer(upstream, x), upstream @ w
    return upstream.T @ x, upstream @ w


def softmax_ce(logits: np.ndarray, targets):
    """Cross-entropy with integrated softmax.

    logits (K,) with int target, or (B,K) with (B,) targets. Returns
    (loss, dlogits): loss is the per-item value (or (B,) vector), dlogits
    is softmax(logits) minus the one-hot target, unscaled.
    """
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    tg = np.asarray([targets] if single else targets, dtype=np.int64)
    m = lg.max(axis=1, keepdims=True)
    e = np.exp(lg - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    rows = np.arange(lg.shape[0])
    losses = lse - lg[rows, tg]
    dlogits = e / z
    dlogits[rows, tg] -= 1.0
    if single:
        return float(losses[0]), dlogits[0]
    return losses, dlogits


def cross_cosine_fwd(q: np.ndarray, m: np.ndarray):
    """Cosine of every q row (B,d) against every m row (K,d) -> (B,K) plus cache."""
    qn = _norms(q, axis=1)
    mn = _norms(m, axis=1)
    cos = (q @ m.T) / (qn[:, None] * mn[None, :])
    return cos, (q, m, qn, mn, cos)


def cross_cosine_bwd(cache, dcos: np.ndarray):
    """Returns (dq, dm); dm is summed over the batch (m rows are shared)."""
    q, m, qn, mn, cos = cache
    a = dcos / (qn[:, None] * mn[None, :])
    dq = a @ m - ((dcos * cos).sum(axis=1) / qn**2)[:, None] * q
    dm = a.T @ q - ((dcos * cos).sum(axis=0) / mn**2)[:, None] * m
    return dq, dm


def pair_cosine_fwd(q: np.ndarray, m: np.ndarray):
    """Per-instance cosine: q (B,d) against m (B,K,d) -> (B,K) plus cache."""
    qn = _norms(q, axis=1)
    mn = _norms(m, axis=2)
    dot = np.einsum("bd,bjd->bj", q, m)
    cos = dot / (qn[:, None] * mn)
    return cos, (q, m, qn, mn, cos)


def pair_cosine_bwd(cache, dcos: np.ndarray):
    """Returns (dq, dm) matching pair_cosine_fwd shapes."""
    q, m, qn, mn, cos = cache
    a = dcos / (qn[:, None] * mn)
    dq = np.einsum("bj,bjd->bd", a, m) - ((dcos * cos).sum(axis=1) / qn**2)[:, None] * q
    dm = a[:, :, None] * q[:, None, :] - ((dcos * cos) / mn**2)[:, :, None] * m
    return dq, dm


def attention_fwd(set_: np.ndarray, wq, wk, wv) -> np.ndarray:
    """Single-set self-attention with residual add; set_ (n,d) -> (n,d)."""
    outs, *_ = kernels.active().attention_batch_fwd(set_[None], wq, wk, wv)
    return outs[0]


def attention_bwd(set_: np.ndarray, wq, wk, wv, upstream: np.ndarray):
    """Recomputes the forward internally; returns (dwq, dwk, dwv, dset)."""
    k = kernels.active()
    sets = set_[None]
    _, alphas, q, kk, v = k.attention_batch_fwd(sets, wq, wk, wv)
    dwq, dwk, dwv, dsets = k.attention_batch_bwd(
        sets, wq, wk, wv, alphas, q, kk, v, upstream[None])
    return dwq, dwk, dwv, dsets[0]


def grad_check(fn, params: list, step: float = 1e-5) -> float:
    """Max relative error between fn's analytic grads and central differences.

    fn() -> (loss, grads) where grads[i] matches params[i] in shape; fn must
    read the current contents of params (they are perturbed in place).
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
    """
    _, grads = fn()
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi, _ = fn()
            flat[i] = keep - step
            lo, _ = fn()
            flat[i] = keep
            num = (hi - lo) / (2.0 * step)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
