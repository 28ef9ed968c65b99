"""Backend benchmark: numba-jitted attention kernels vs the numpy reference.

Times the batched attention forward+backward (the training hot path) and a
full loss_and_grads step on identical inputs, printing per-backend medians
and the speedup. Run via `projfusion bench`.
"""

from __future__ import annotations

import time

import numpy as np

from . import model
from .kernels import _resolve, reference
from .rng import SplitMix64, derive


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _build_state(dim: int, classes: int, prompt_rows: int, backend_unused=None):
    rng = SplitMix64(derive(7, 0xBE9C))
    per_task = max(1, classes // 2)
    st = model.new_state(dim, prompt_len=prompt_rows, seed=123)
    next_id = 0
    while next_id < classes:
        ids = list(range(next_id, min(next_id + per_task, classes)))
        model.expand_task(st, ids, rng.normal((len(ids), dim)), rng.normal((len(ids), dim)))
        next_id += len(ids)
    return st, rng


def run(dim: int = 64, classes: int = 40, prompt_rows: int = 15,
        batch: int = 64, repeats: int = 5) -> dict:
    st, rng = _build_state(dim, classes, prompt_rows)
    z = rng.normal((batch, dim))
    labels = np.arange(batch) % classes
    n_ctx = 1 + 2 * classes + len(st.prompts.blocks) * prompt_rows
    sets = rng.normal((batch, n_ctx, dim))
    douts = rng.normal((batch, n_ctx, dim))

    backends = [("numpy", reference)]
    try:
        backends.append(("numba", _resolve("numba")))
    except RuntimeError:
        print("numba not importable; benchmarking numpy only")

    print(f"batch={batch} context_rows={n_ctx} dim={dim} "
          f"(classes={classes}, prompt_rows={prompt_rows}), median of {repeats}")
    results: dict = {}
    for name, mod in backends:
        fwd_out = mod.attention_batch_fwd(sets, st.wq, st.wk, st.wv)  # warm the JIT

        def attn_step(mod=mod, fwd_out=fwd_out):
            outs, alphas, q, k, v = mod.attention_batch_fwd(sets, st.wq, st.wk, st.wv)
            mod.attention_batch_bwd(sets, st.wq, st.wk, st.wv, alphas, q, k, v, douts)

        from . import kernels
        kernels.use_backend(name)
        model.loss_and_grads(st, z, labels)  # warm

        def full_step():
            model.loss_and_grads(st, z, labels)

        t_attn = _median_time(attn_step, repeats)
        t_full = _median_time(full_step, repeats)
        results[name] = (t_attn, t_full)
        print(f"  {name:6s}  attention fwd+bwd {t_attn * 1e3:8.2f} ms   "
              f"loss_and_grads {t_full * 1e3:8.2f} ms")
    if len(results) == 2:
        a = results["numpy"][0] / results["numba"][0]
        f = results["numpy"][1] / results["numba"][1]
        print(f"  speedup numba vs numpy: attention x{a:.2f}, full step x{f:.2f}")
    from . import kernels
    kernels.use_backend("auto")
    return results
