"""Pick the kernel implementation at import time.

The compiled ``_ckernels`` module is used when it was built; otherwise the
numpy fallback. Set ``UVCL_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("UVCL_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(
        f"UVCL_BACKEND={_requested!r} is not available; choose from {sorted(BACKENDS)}"
    )
NAME = _requested or ("cython" if "cython" in BACKENDS else "python")
kernels = BACKENDS[NAME]


def use(name):
    """Switch the active backend for this process. Returns the previous name."""
    global NAME, kernels
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}")
    prev, NAME, kernels = NAME, name, BACKENDS[name]
    return prev
