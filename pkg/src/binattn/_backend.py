"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment sets ``BINATTN_BACKEND=python``, the numpy fallback is used.
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_requested = os.environ.get("BINATTN_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"BINATTN_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")
BACKEND = _requested or ("compiled" if _compiled is not None else "python")
kernels = BACKENDS[BACKEND]

_threads = 1


def get_kernels(name=None):
    if name is None:
        return kernels
    return BACKENDS[name]


def set_threads(n: int) -> None:
    """Cap internal parallelism; ``n <= 0`` means all available cores."""
    global _threads
    _threads = n if n > 0 else (os.cpu_count() or 1)


def get_threads() -> int:
    return _threads
