"""Loss kernels and their analytic input gradients.

These are forward values plus gradients with respect to the tensors the
training recipe actually optimizes (masks and local descriptors); backbone
features are treated as constants throughout. Every gradient is checked
against central finite differences in the test suite.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .masks import percentile_clip
from .types import DegenerateRegionError

_FLOOR = 1e-8  # probability floor applied before logs


@dataclass
class MsParams:
    alpha: float = 1.0
    beta: float = 50.0
    lam: float = 0.5
    mining_margin: float = 0.1


@dataclass
class LossWeights:
    alpha_sa: float = 1.0
    beta_pc: float = 1.0
    ms_params: MsParams = field(default_factory=MsParams)
    gamma_margin: float = 1.0  # fixed triplet margin


def _normalize_clip(grid, q, scope):
    """Clip (optional), normalize to unit mass, floor. Returns intermediates."""
    grid = np.asarray(grid, dtype=np.float64)
    if q is not None:
        clipped = percentile_clip(grid, q, scope=scope)
        # entries strictly above the threshold were truncated: zero gradient
        gate = (grid <= clipped).astype(np.float64)
    else:
        clipped = grid
        gate = np.ones_like(grid)
    total = clipped.sum()
    if total <= 0:
        raise ValueError("map has non-positive mass")
    p = clipped / total
    pf = np.maximum(p, _FLOOR)
    return p, pf, gate, total


def loss_sa(m_a, r, q=0.9, scope="row"):
    """Symmetric KL alignment between the salience mask and reliability map.

    Both maps are percentile-clipped (q=None disables smoothing), normalized
    to distributions and floored before the logs. Gradients are taken with
    respect to the pre-smoothing inputs; clipped entries pass zero gradient
    (hard gate) and the clip threshold is treated as constant.
    """
    m_a = np.asarray(m_a, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if m_a.shape != r.shape:
        raise ValueError("shape mismatch")
    if not (np.all(np.isfinite(m_a)) and np.all(np.isfinite(r))):
        raise ValueError("non-finite input")
    p, pf, gate_p, sum_p = _normalize_clip(m_a, q, scope)
    qq, qf, gate_q, sum_q = _normalize_clip(r, q, scope)

    log_ratio = np.log(pf) - np.log(qf)
    value = float(np.sum(pf * log_ratio) + np.sum(qf * (-log_ratio)))

    # d value / d pf and d value / d qf, gated by the floor
    gp = (log_ratio + 1.0 - qf / pf) * (p > _FLOOR)
    gq = (-log_ratio + 1.0 - pf / qf) * (qq > _FLOOR)
    # through the normalization x -> x / sum(x)
    grad_m_a = (gp - np.sum(gp * p)) / sum_p * gate_p
    grad_r = (gq - np.sum(gq * qq)) / sum_q * gate_q
    return value, grad_m_a, grad_r


def region_descriptors(features, mask):
    """Mask-weighted pooled descriptors for the salient and irrelevant regions."""
    features = np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    h, w, d = features.shape
    flat = features.reshape(-1, d)
    weights = mask.ravel()
    u = flat.T @ weights
    v = flat.T @ (1.0 - weights)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateRegionError("degenerate region")
    return u / nu, v / nv


def loss_sce(f_sal, f_sal_pos, f_irr):
    """Triplet hinge contrasting salient vs irrelevant region descriptors.

    value = max(0, 1 - (f_sal . f_sal_pos - f_sal . f_irr)), in [0, 3].
    Returns the value and partials w.r.t. the three unit vectors (zero when
    the hinge is inactive).
    """
    f_sal = np.asarray(f_sal, dtype=np.float64)
    f_sal_pos = np.asarray(f_sal_pos, dtype=np.float64)
    f_irr = np.asarray(f_irr, dtype=np.float64)
    raw = 1.0 - (f_sal @ f_sal_pos - f_sal @ f_irr)
    if raw <= 0.0:
        zeros = np.zeros_like(f_sal)
        return 0.0, zeros, zeros.copy(), zeros.copy()
    return float(raw), -(f_sal_pos - f_irr), -f_sal.copy(), f_sal.copy()


def loss_sce_masked(features, mask, pos_features, pos_mask):
    """Composition of region pooling and the hinge, differentiated w.r.t. masks.

    Feature gradients are truncated (the recipe only shapes the mask), so the
    returned gradients flow through the pooling weights alone.
    """
    f_sal, f_irr = region_descriptors(features, mask)
    f_sal_pos, _ = region_descriptors(pos_features, pos_mask)
    value, g_sal, g_pos, g_irr = loss_sce(f_sal, f_sal_pos, f_irr)

    def _pool_grad(feats, msk, invert):
        feats = np.asarray(feats, dtype=np.float64).reshape(-1, feats.shape[-1])
        w = np.asarray(msk, dtype=np.float64).ravel()
        u = feats.T @ (1.0 - w if invert else w)
        n = np.linalg.norm(u)
        f = u / n
        # d(normalize(u))/du = (I - f f^T) / n; chain to mask weight i via F_i
        def apply(g_vec):
            back = (g_vec - f * (f @ g_vec)) / n
            per_cell = feats @ back
            return -per_cell if invert else per_cell
        return apply

    grad_mask = (_pool_grad(features, mask, invert=False)(g_sal)
                 + _pool_grad(features, mask, invert=True)(g_irr))
    grad_pos_mask = _pool_grad(pos_features, pos_mask, invert=False)(g_pos)
    shape = np.asarray(mask).shape
    return value, grad_mask.reshape(shape), grad_pos_mask.reshape(np.asarray(pos_mask).shape)


def loss_pc(anchor_feats, pos_feats, backbone_sims):
    """Confidence-weighted pseudo-correspondence loss.

    value = sum_i exp(s_i) (1 - a_i . b_i) / sum_i exp(s_i), where s_i is the
    backbone token similarity of mined pair i (treated as a constant
    confidence). Returns gradients w.r.t. both descriptor sets.
    """
    anchor_feats = np.asarray(anchor_feats, dtype=np.float64)
    pos_feats = np.asarray(pos_feats, dtype=np.float64)
    backbone_sims = np.asarray(backbone_sims, dtype=np.float64)
    n = anchor_feats.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(anchor_feats), np.zeros_like(pos_feats)
    shifted = backbone_sims - backbone_sims.max()
    w = np.exp(shifted)
    w = w / w.sum()
    sims = np.sum(anchor_feats * pos_feats, axis=1)
    value = float(np.sum(w * (1.0 - sims)))
    grad_anchor = -w[:, None] * pos_feats
    grad_pos = -w[:, None] * anchor_feats
    return value, grad_anchor, grad_pos


def loss_ms(descriptors, labels, params=None):
    """Multi-similarity loss with online hard pair mining.

    Positives survive mining only when some negative is within the margin of
    them (and vice versa); anchors with no surviving pairs contribute 0, so a
    perfectly separated batch scores ~0.
    """
    params = params or MsParams()
    x = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    b = x.shape[0]
    if b < 2:
        raise ValueError("batch must contain at least 2 descriptors")
    sims = x @ x.T
    total = 0.0
    for i in range(b):
        same = labels == labels[i]
        pos = np.flatnonzero(same & (np.arange(b) != i))
        neg = np.flatnonzero(~same)
        if pos.size == 0 or neg.size == 0:
            continue
        sp, sn = sims[i, pos], sims[i, neg]
        keep_n = sn > sp.min() - params.mining_margin
        keep_p = sp < sn.max() + params.mining_margin
        term = 0.0
        if np.any(keep_p):
            term += math.log1p(np.sum(np.exp(-params.alpha * (sp[keep_p] - params.lam)))) / params.alpha
        if np.any(keep_n):
            term += math.log1p(np.sum(np.exp(params.beta * (sn[keep_n] - params.lam)))) / params.beta
        total += term
    return total / b


def loss_mnn(q_locals, pos_locals, neg_locals):
    """Hinge on the gap between mean mutual-NN similarity to the positive
    and to the negative local feature sets."""
    from .rerank import match_mutual_nn  # local import avoids a cycle at init

    def mean_sim(a, b):
        matches = match_mutual_nn(a, b)
        if not matches:
            return 0.0
        us = np.fromiter((u for u, _ in matches), dtype=np.int64)
        vs = np.fromiter((v for _, v in matches), dtype=np.int64)
        sims = np.sum(a.descriptors[us].astype(np.float64)
                      * b.descriptors[vs].astype(np.float64), axis=1)
        return float(sims.mean())

    gap = mean_sim(q_locals, pos_locals) - mean_sim(q_locals, neg_locals)
    return max(0.0, 1.0 - gap)


@dataclass
class LossComponents:
    ms: float = 0.0
    mnn: float = 0.0
    sce: float = 0.0
    sa: float = 0.0
    pc: float = 0.0


def loss_total(components, weights):
    """Weighted sum: L_MS + L_MNN + L_SCE + alpha*L_SA + beta*L_PC."""
    return (components.ms + components.mnn + components.sce
            + weights.alpha_sa * components.sa + weights.beta_pc * components.pc)
