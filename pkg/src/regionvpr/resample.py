"""Grid resampling helpers shared by mask fusion and local-feature selection."""
import numpy as np


def resample_bilinear(grid, out_h, out_w):
    """Bilinear resampling with corner-aligned sampling.

    Endpoints map to endpoints (a size-1 output axis samples coordinate 0).
    The result is a convex combination of inputs, so it stays within the
    input's value range; a final clip guards the last-ulp rounding.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError("input map must be non-empty 2-D")
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    in_h, in_w = grid.shape

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys = coords(in_h, out_h)
    xs = coords(in_w, out_w)
    y0 = np.minimum(ys.astype(np.int64), in_h - 1)
    x0 = np.minimum(xs.astype(np.int64), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(out, grid.min(), grid.max())


def block_upsample(mask, out_h, out_w):
    """Nearest-neighbor block replication; keeps binary masks binary.

    Target dims must be integer multiples of the input dims.
    """
    mask = np.asarray(mask)
    in_h, in_w = mask.shape
    if out_h % in_h or out_w % in_w:
        raise ValueError("target dims must be integer multiples of mask dims")
    return np.repeat(np.repeat(mask, out_h // in_h, axis=0), out_w // in_w, axis=1)
