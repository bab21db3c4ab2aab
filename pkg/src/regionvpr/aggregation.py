"""Token-to-cluster optimal assignment and global descriptor construction.

Scores follow s_ij = exp(w_j . t_i + b_j) with an extra dustbin column; the
assignment is a Sinkhorn transport plan toward uniform marginals, finished
with a row normalization so every token carries a probability distribution
over the M clusters plus dustbin. All heavy math runs in log space.
"""
import numpy as np
from scipy.special import logsumexp

from .types import AssignmentResult, GlobalDescriptor

# float64 exp overflows just above 709; uniform rescaling below this bound
# leaves the Sinkhorn plan unchanged (row/column normalization cancels it).
_MAX_LOGIT = 700.0


def score_logits(grid, params):
    """Log-domain score matrix (n, M+1): w_j . t_i + b_j plus dustbin column."""
    tokens = grid.flat().astype(np.float64)
    if tokens.shape[1] != params.weights.shape[1]:
        raise ValueError("token dim does not match cluster weight width")
    logits = tokens @ params.weights.T.astype(np.float64) + params.biases
    dustbin = np.full((tokens.shape[0], 1), float(params.dustbin_score))
    return np.hstack([logits, dustbin])


def score_matrix(grid, params):
    """Positive score matrix exp(logits), guarded against overflow.

    When any logit exceeds the float64 exp range the whole matrix is rescaled
    by a common factor, which is invisible to the Sinkhorn normalization.
    """
    logits = score_logits(grid, params)
    top = logits.max()
    if top > _MAX_LOGIT:
        logits = logits - (top - _MAX_LOGIT)
    return np.exp(logits)


def sinkhorn_assign(scores, iters, grid_shape):
    """Sinkhorn normalization of a positive score matrix.

    Alternates row/column normalization in log space for `iters` rounds
    (row marginals uniform, column marginals uniform over M+1 columns
    including the slack-absorbing dustbin), then finishes with one row
    normalization so each row sums to 1. Returns the assignment plus the
    derived salience vector and spatial mask.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be 2-D")
    if np.any(scores <= 0.0) or not np.all(np.isfinite(scores)):
        raise ValueError("scores must be strictly positive and finite")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n, cols = scores.shape
    h_p, w_p = grid_shape
    if h_p * w_p != n:
        raise ValueError("grid shape does not match token count")

    log_k = np.log(scores)
    log_r = -np.log(n)          # uniform row target
    log_c = -np.log(cols)       # uniform column target, dustbin included
    u = np.zeros(n)
    v = np.zeros(cols)
    for _ in range(iters):
        u = log_r - logsumexp(log_k + v[None, :], axis=1)
        v = log_c - logsumexp(log_k + u[:, None], axis=0)
    log_p = log_k + u[:, None] + v[None, :]
    log_p -= logsumexp(log_p, axis=1, keepdims=True)  # final row normalization
    probs = np.exp(log_p)

    salience = probs[:, :-1].sum(axis=1)
    mask_a = np.clip(salience, 0.0, 1.0).reshape(h_p, w_p)
    return AssignmentResult(probs=probs, salience=salience, mask_a=mask_a)


def aggregate_global(grid, cls, assignment, params):
    """Assignment-weighted cluster pooling into one unit-norm descriptor.

    Each salient cluster pools projected tokens weighted by its assignment
    column and is L2-normalized; blocks are concatenated with a projected
    class token (identity truncation when no projection is configured) and
    the whole vector is normalized. Output length is M*l + g.
    """
    tokens = grid.flat().astype(np.float64)
    if tokens.shape[0] != assignment.probs.shape[0]:
        raise ValueError("assignment rows do not match token count")
    projected = tokens @ params.projection.astype(np.float64)        # (n, l)
    blocks = assignment.probs[:, :-1].T @ projected                  # (M, l)
    norms = np.linalg.norm(blocks, axis=1, keepdims=True)
    blocks = blocks / np.maximum(norms, 1e-12)

    g = params.class_dim
    cls_values = cls.values.astype(np.float64)
    if params.class_projection is not None:
        cls_part = cls_values @ params.class_projection.astype(np.float64)
    else:
        cls_part = np.zeros(g)
        take = min(g, cls_values.size)
        cls_part[:take] = cls_values[:take]

    values = np.concatenate([blocks.ravel(), cls_part])
    norm = np.linalg.norm(values)
    if norm < 1e-12:
        raise ValueError("degenerate descriptor: zero norm")
    return GlobalDescriptor(values=(values / norm).astype(np.float32))


def global_similarity(q, c):
    """Inner product of two unit-norm global descriptors, in [-1, 1]."""
    if q.values.shape != c.values.shape:
        raise ValueError("descriptor length mismatch")
    return float(np.dot(q.values.astype(np.float64), c.values.astype(np.float64)))
