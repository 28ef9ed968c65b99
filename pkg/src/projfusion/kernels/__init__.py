"""Kernel backend selection.

PROJFUSION_BACKEND env var picks the implementation of the batched attention
kernels: "numba", "numpy", or "auto" (default; numba when importable).
Tests and the benchmark can switch at runtime with use_backend().
"""

from __future__ import annotations

import os

from . import reference

ENV_VAR = "PROJFUSION_BACKEND"

_active = None


def _resolve(choice: str):
    choice = choice.lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be auto, numba, or numpy (got {choice!r})")
    if choice == "numpy":
        return reference
    try:
        from . import jit
        return jit
    except ImportError:
        if choice == "numba":
            raise RuntimeError("numba backend requested but numba is not importable")
        return reference


def use_backend(choice: str):
    """Switch the active backend; returns the backend module."""
    global _active
    _active = _resolve(choice)
    return _active


def active():
    """The currently selected backend module."""
    global _active
    if _active is None:
        _active = _resolve(os.environ.get(ENV_VAR, "auto"))
    return _active


def backend_name() -> str:
    return active().NAME
