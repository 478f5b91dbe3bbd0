"""Attention kernel selection, fixed at import time.

Two interchangeable backends exist: a BLAS-backed numpy implementation
and a compiled Cython kernel. On batched training shapes the BLAS path
wins (stacked GEMMs dominate), while the fused compiled kernel wins on
small single-sequence shapes where Python/temporary overhead dominates;
benchmarks/bench_attention.py measures the crossover. The default is
the numpy backend; MCMOTION_KERNEL=cython opts into the compiled kernel
(raising if it is not built), MCMOTION_KERNEL=python forces the
fallback explicitly.
"""

import os

from . import _attn_np

_forced = os.environ.get("MCMOTION_KERNEL", "").strip().lower()

if _forced in ("cython", "compiled"):
    try:
        from . import _attn_cy as _impl
    except ImportError as exc:
        raise ImportError("MCMOTION_KERNEL=cython but the compiled kernel is not built") from exc
elif _forced in ("", "python", "numpy", "auto"):
    _impl = _attn_np
else:
    raise ValueError(f"unknown MCMOTION_KERNEL value: {_forced!r}")

BACKEND = _impl.BACKEND
NEEDS_CONTIGUOUS = getattr(_impl, "NEEDS_CONTIGUOUS", False)
attn_forward = _impl.attn_forward
attn_backward = _impl.attn_backward


def implementations():
    """All available (name, module) kernel backends, numpy first."""
    impls = [("numpy", _attn_np)]
    try:
        from . import _attn_cy

        impls.append(("cython", _attn_cy))
    except ImportError:
        pass
    return impls
