"""Pure-NumPy matching core, used when the compiled extension is unavailable."""
import numpy as np


class Matcher:
    """Row/col argmax of the cosine similarity matrix q @ c.T.

    Reference implementation; the compiled core must agree with it exactly
    (same first-occurrence tie rule as np.argmax).
    """

    def __init__(self, block=2048):
        self.block = block  # unused; kept for interface parity

    def __call__(self, q, c):
        q = np.ascontiguousarray(q, dtype=np.float32)
        c = np.ascontiguousarray(c, dtype=np.float32)
        if q.shape[0] == 0 or c.shape[0] == 0:
            return (np.empty(q.shape[0], dtype=np.int64),
                    np.empty(c.shape[0], dtype=np.int64))
        s = q @ c.T
        # argmax along the strided axis is slow in numpy; transpose-copy instead
        row_arg = s.argmax(axis=1)
        col_arg = np.ascontiguousarray(s.T).argmax(axis=1)
        return row_arg.astype(np.int64), col_arg.astype(np.int64)
