"""Matching kernel selection: compiled extension if built, NumPy otherwise.

Set REGIONVPR_NO_EXT=1 to force the pure-NumPy path (used by the kernel
benchmark and as an escape hatch on platforms where the extension fails).
"""
import os
import threading

import numpy as np

from . import fallback

BACKEND = "python"
_compiled = None

if os.environ.get("REGIONVPR_NO_EXT") != "1":
    try:
        from . import _matchcore as _compiled
        BACKEND = "compiled"
    except ImportError:
        _compiled = None


class _CompiledMatcher:
    """Wraps the blocked GEMM+argmax core, reusing scratch buffers.

    One instance per query (or per thread): the workspace is sized to the
    first query seen and grown as needed. Not safe to share across threads.
    """

    def __init__(self, block=2048):
        self.block = block
        self._kq = -1
        self._work = None
        self._row_max = None
        self._row_arg = None

    def __call__(self, q, c):
        q = np.ascontiguousarray(q, dtype=np.float32)
        c = np.ascontiguousarray(c, dtype=np.float32)
        kq, kc = q.shape[0], c.shape[0]
        if kq == 0 or kc == 0:
            return np.empty(kq, dtype=np.int64), np.empty(kc, dtype=np.int64)
        if kq != self._kq:
            self._kq = kq
            self._work = np.empty((kq, self.block), dtype=np.float32, order="F")
            self._row_max = np.empty(kq, dtype=np.float32)
            self._row_arg = np.empty(kq, dtype=np.int32)
        col_arg = np.empty(kc, dtype=np.int32)
        _compiled.blocked_argmax(q, c, self._work, self._row_max,
                                 self._row_arg, col_arg)
        return self._row_arg.astype(np.int64), col_arg.astype(np.int64)


_tls = threading.local()


def make_matcher(block=2048):
    """Callable computing (row_argmax, col_argmax) of q @ c.T.

    The instance (and its scratch workspace) is cached per thread, so
    repeated queries on one thread reuse the same buffers.
    """
    if _compiled is None:
        return fallback.Matcher(block=block)
    cached = getattr(_tls, "matcher", None)
    if cached is None or cached.block != block:
        cached = _CompiledMatcher(block=block)
        _tls.matcher = cached
    return cached
