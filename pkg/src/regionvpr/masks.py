"""Discriminative-mask algebra: fusion, percentile smoothing, binarization,
and mask-gated local feature selection."""
import math

import numpy as np

from .resample import block_upsample, resample_bilinear
from .types import DiscriminativeMask, LocalFeatureSet, ValidationError

DEFAULT_LOCAL_CAP = 3500  # stored local-feature budget per image


def fuse_mask(reliability, mask_a):
    """Elementwise product of the resampled reliability map and the salience mask."""
    mask_a = np.asarray(mask_a, dtype=np.float64)
    if mask_a.size == 0 or reliability.values.size == 0:
        raise ValueError("empty input")
    r = resample_bilinear(reliability.values, mask_a.shape[0], mask_a.shape[1])
    values = np.clip(r * mask_a, 0.0, 1.0)
    return DiscriminativeMask(values=values)


def percentile_clip(grid, q, scope="row"):
    """Clip each entry at the q-quantile of its row (or of the whole map).

    The quantile is the order statistic at floor(q * (n - 1)): an actual data
    value, which makes min-clipping idempotent (an interpolated threshold
    would keep shrinking on repeated application).
    """
    if not (0.0 < q < 1.0):
        raise ValueError("q must be in (0, 1)")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] < 1:
        raise ValueError("need a 2-D map with non-empty rows")
    if scope == "row":
        thresh = np.quantile(grid, q, axis=1, keepdims=True, method="lower")
    elif scope == "global":
        thresh = np.quantile(grid, q, method="lower")
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return np.minimum(grid, thresh)


def binarize_values(values, top_fraction):
    """Boolean mask selecting the ceil(top_fraction * n) largest entries.

    Ties resolve by ascending row-major index (stable sort on the negated
    values), so the count is exact even for all-equal inputs.
    """
    if not (0.0 < top_fraction <= 1.0):
        raise ValueError("top_fraction must be in (0, 1]")
    flat = np.asarray(values, dtype=np.float64).ravel()
    keep = math.ceil(top_fraction * flat.size)
    order = np.argsort(-flat, kind="stable")
    out = np.zeros(flat.size, dtype=bool)
    out[order[:keep]] = True
    return out.reshape(np.asarray(values).shape)


def binarize_mask(mask, top_fraction):
    """Return the mask with its binarized top-k form attached."""
    return DiscriminativeMask(values=mask.values,
                              bin=binarize_values(mask.values, top_fraction),
                              top_fraction=top_fraction)


def select_local(dense, bin_mask, reliability, cap=DEFAULT_LOCAL_CAP,
                 mask_values=None):
    """Gather dense local features where the upsampled binary mask is set.

    The patch-level mask is replicated to the dense grid (block nearest
    neighbor, so membership stays binary), selected descriptors are
    L2-normalized, and reliabilities are sampled from the bilinearly
    resampled reliability map. Above `cap`, positions with the highest
    fused-mask values are kept (row-major tie-break); `mask_values` supplies
    those values at patch resolution, defaulting to pure row-major order.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 3:
        raise ValueError("dense features must be (H_l, W_l, d)")
    h_l, w_l, d = dense.shape
    up = block_upsample(np.asarray(bin_mask, dtype=bool), h_l, w_l)

    flat_idx = np.flatnonzero(up.ravel())
    if cap is not None and flat_idx.size > cap:
        if mask_values is not None:
            prio = block_upsample(np.asarray(mask_values, dtype=np.float64),
                                  h_l, w_l).ravel()[flat_idx]
        else:
            prio = np.zeros(flat_idx.size)
        keep = np.argsort(-prio, kind="stable")[:cap]
        flat_idx = np.sort(flat_idx[keep])  # retain row-major output order

    rows, cols = np.unravel_index(flat_idx, (h_l, w_l))
    positions = np.stack([rows, cols], axis=1).astype(np.int64) \
        if flat_idx.size else np.empty((0, 2), dtype=np.int64)
    descriptors = dense.reshape(-1, d)[flat_idx]
    if flat_idx.size:
        norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ValidationError("local.descriptors", "zero-norm dense feature")
        descriptors = descriptors / norms
    rel_up = resample_bilinear(reliability.values, h_l, w_l)
    rel = rel_up.ravel()[flat_idx]
    return LocalFeatureSet(positions=positions,
                           descriptors=descriptors.astype(np.float32),
                           reliability=rel.astype(np.float32),
                           grid_h=h_l, grid_w=w_l)
