"""Hot loops, dispatched to the compiled extension when it is importable.

Set ``MULTITUNE_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("MULTITUNE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def lcs_length(a, b) -> int:
    if BACKEND == "cython":
        return _impl.lcs_length(np.ascontiguousarray(a, dtype=np.int64),
                                np.ascontiguousarray(b, dtype=np.int64))
    return _impl.lcs_length(a, b)


def merge_pair(seq, left: int, right: int, new: int) -> np.ndarray:
    if BACKEND == "cython":
        return _impl.merge_pair(np.ascontiguousarray(seq, dtype=np.int32), left, right, new)
    return _impl.merge_pair(seq, left, right, new)


__all__ = ["BACKEND", "lcs_length", "merge_pair"]
