"""Pure-numpy batched attention kernels (reference backend).

One attention "set" per query instance: row 0 is the projected query, the
remaining rows are the shared context. Single head, no output projection,
no dropout; residual add on every row. Softmax over the last axis with
max-subtraction for stability. All arrays float64.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def attention_batch_fwd(sets, wq, wk, wv):
    """sets (B,n,d), weights (d,d) applied as rows @ W.T.

    Returns (outs, alphas, q, k, v) with outs = sets + alphas @ v.
    """
    d = sets.shape[2]
    q = sets @ wq.T
    k = sets @ wk.T
    v = sets @ wv.T
    scores = (q @ k.transpose(0, 2, 1)) / np.sqrt(d)
    scores -= scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    alphas = e / e.sum(axis=2, keepdims=True)
    outs = sets + alphas @ v
    return outs, alphas, q, k, v


def attention_batch_bwd(sets, wq, wk, wv, alphas, q, k, v, douts):
    """Gradients of a scalar loss through attention_batch_fwd.

    Returns (dwq, dwk, dwv, dsets); weight grads are summed over the batch.
    """
    d = sets.shape[2]
    inv = 1.0 / np.sqrt(d)
    dsets = douts.copy()
    dalpha = douts @ v.transpose(0, 2, 1)
    dv = alphas.transpose(0, 2, 1) @ douts
    # softmax backward per row: (dalpha - sum(dalpha * alpha)) * alpha
    dscores = (dalpha - (dalpha * alphas).sum(axis=2, keepdims=True)) * alphas * inv
    dq = dscores @ k
    dk = dscores.transpose(0, 2, 1) @ q
    dwq = np.einsum("bij,bik->jk", dq, sets)
    dwk = np.einsum("bij,bik->jk", dk, sets)
    dwv = np.einsum("bij,bik->jk", dv, sets)
    dsets += dq @ wq + dk @ wk + dv @ wv
    return dwq, dwk, dwv, dsets
