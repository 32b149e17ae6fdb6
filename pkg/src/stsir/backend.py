"""Selects the sweep kernel: compiled Cython extension if built, else pure numpy.

Set ``STSIR_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _sweep_py

_compiled = None
if os.environ.get("STSIR_BACKEND", "").lower() != "python":
    try:
        from . import _sweep as _compiled  # type: ignore[attr-defined,no-redef]
    except ImportError:  # extension not built
        _compiled = None

KERNELS = {"python": _sweep_py.run_sweeps}
if _compiled is not None:
    KERNELS["cython"] = _compiled.run_sweeps

NAME = "cython" if "cython" in KERNELS else "python"


def get(name: str | None = None):
    """Kernel function by name (default: the preferred available one)."""
    name = name or NAME
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(KERNELS)}") from None
