"""Pseudo-correspondence mining between an anchor and a positive image.

Anchor patches are visited in descending fused-mask order; each is matched
against positive-image patches sharing its hard cluster, then filtered by an
absolute similarity threshold and Lowe-style ratio test. Mining stops at N
accepted pairs or patch exhaustion, and is fully deterministic (ties resolve
by ascending row-major index).
"""
from dataclasses import dataclass

import numpy as np


@dataclass
class MiningParams:
    thr1: float = 0.8
    thr2: float = 0.5
    n_pairs: int = 12

    def validate(self):
        if not (0.0 < self.thr1 < 1.0):
            raise ValueError("thr1 must be in (0, 1)")
        if not (0.0 < self.thr2 < 1.0):
            raise ValueError("thr2 must be in (0, 1)")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")


@dataclass
class PseudoPair:
    anchor_index: int     # flat token index in the anchor image
    positive_index: int   # flat token index in the positive image
    similarity: float     # sim(f_p, best candidate)
    ratio: float          # second-best / best similarity


def _unit_rows(tokens):
    tokens = tokens.astype(np.float64)
    norms = np.linalg.norm(tokens, axis=1, keepdims=True)
    return tokens / np.maximum(norms, 1e-12)


def _hard_clusters(assignment):
    """argmax over salient clusters; -1 where the dustbin dominates the row."""
    probs = assignment.probs
    salient = probs[:, :-1]
    best = salient.argmax(axis=1)
    dustbin_wins = probs[:, -1] > salient[np.arange(len(best)), best]
    return np.where(dustbin_wins, -1, best)


def mine_pairs(anchor, positive, params=None):
    """Run the pseudo-correspondence construction over two records."""
    params = params or MiningParams()
    params.validate()
    for record, name in ((anchor, "anchor"), (positive, "positive")):
        if record.assignment is None:
            raise ValueError(f"{name} record is missing its assignment section")
        if record.patch_grid is None:
            raise ValueError(f"{name} record is missing patch tokens")
    if anchor.mask is None:
        raise ValueError("anchor record is missing the fused mask")

    a_tokens = _unit_rows(anchor.patch_grid.flat())
    p_tokens = _unit_rows(positive.patch_grid.flat())
    a_cluster = _hard_clusters(anchor.assignment)
    p_cluster = _hard_clusters(positive.assignment)

    # descending mask activation; stable sort keeps row-major order on ties
    order = np.argsort(-anchor.mask.values.ravel(), kind="stable")

    pairs = []
    for p in order:
        if len(pairs) >= params.n_pairs:
            break
        cluster = a_cluster[p]
        if cluster < 0:
            continue  # dustbin-dominated patches are non-salient by construction
        candidates = np.flatnonzero(p_cluster == cluster)
        if candidates.size == 0:
            continue
        sims = p_tokens[candidates] @ a_tokens[p]
        ranked = np.argsort(-sims, kind="stable")
        best = float(sims[ranked[0]])
        if candidates.size == 1:
            second = 0.0
            ratio = 0.0  # a unique candidate passes the uniqueness check
        else:
            second = float(sims[ranked[1]])
            ratio = second / best
        if best > params.thr1 and ratio < params.thr2:
            pairs.append(PseudoPair(anchor_index=int(p),
                                    positive_index=int(candidates[ranked[0]]),
                                    similarity=best, ratio=float(ratio)))
    return pairs


def pair_similarity_inputs(anchor, positive, pairs):
    """Sample dense local descriptors at mined pair locations.

    Patch (r, c) maps to the dense cell at the block center
    (r*s + s//2, c*s + s//2) for integer scale s. Returns the two descriptor
    stacks plus the backbone token similarities used as confidences.
    """
    if not pairs:
        empty = np.empty((0, 0))
        return empty, empty, np.empty(0)
    for record, name in ((anchor, "anchor"), (positive, "positive")):
        if record.local_features is None or record.patch_grid is None:
            raise ValueError(f"{name} record lacks dense local features or tokens")

    def sampler(record):
        loc = record.local_features
        grid = record.patch_grid
        s_r = loc.grid_h // grid.height_p
        s_c = loc.grid_w // grid.width_p
        if s_r * grid.height_p != loc.grid_h or s_c * grid.width_p != loc.grid_w:
            raise ValueError("dense grid is not an integer multiple of the patch grid")
        lookup = {(int(r), int(c)): i for i, (r, c) in enumerate(loc.positions)}

        def sample(flat_patch):
            r, c = divmod(int(flat_patch), grid.width_p)
            if not (0 <= r < grid.height_p):
                raise IndexError(f"patch index {flat_patch} out of range")
            key = (r * s_r + s_r // 2, c * s_c + s_c // 2)
            if key not in lookup:
                raise IndexError(f"dense feature missing at {key}")
            return loc.descriptors[lookup[key]]
        return sample

    sample_a = sampler(anchor)
    sample_p = sampler(positive)
    a_unit = _unit_rows(anchor.patch_grid.flat())
    p_unit = _unit_rows(positive.patch_grid.flat())

    anchor_rows, pos_rows, sims = [], [], []
    for pair in pairs:
        anchor_rows.append(sample_a(pair.anchor_index))
        pos_rows.append(sample_p(pair.positive_index))
        sims.append(float(a_unit[pair.anchor_index] @ p_unit[pair.positive_index]))
    return np.stack(anchor_rows), np.stack(pos_rows), np.asarray(sims)
