"""Kernel backend selection.

The surrogate's inner loops (batched perceptron forward/backward passes) are
implemented twice: a compiled Cython extension (``lhpo.backend._core``) and a
pure-NumPy fallback (``lhpo.backend.numpy_ops``). The compiled core is chosen
at import when present; set ``LHPO_BACKEND=numpy`` or ``LHPO_BACKEND=cython``
to force one (``cython`` raises if the extension was not built).

``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

from lhpo.backend import numpy_ops

try:
    from lhpo.backend import _core  # type: ignore[attr-defined]
except ImportError:
    _core = None


def _select():
    requested = os.environ.get("LHPO_BACKEND", "auto").lower()
    if requested in ("auto", ""):
        return _core if _core is not None else numpy_ops
    if requested == "numpy":
        return numpy_ops
    if requested == "cython":
        if _core is None:
            raise ImportError(
                "LHPO_BACKEND=cython but the compiled extension is not available; "
                "reinstall with a C compiler or use LHPO_BACKEND=numpy"
            )
        return _core
    raise ValueError(f"unknown LHPO_BACKEND value {requested!r} (expected auto, cython, or numpy)")


_active = _select()

mlp_forward = _active.mlp_forward
mlp_forward_cache = _active.mlp_forward_cache
mlp_backward = _active.mlp_backward


def backend_name() -> str:
    """Name of the kernel implementation selected at import."""
    return _active.NAME


def available_backends() -> list[str]:
    names = ["numpy"]
    if _core is not None:
        names.insert(0, "cython")
    return names
