"""Adaptive two-stage decision engine.

Stage one retrieves a candidate pool by exact global-descriptor inner
product (brute force; desk-scale indexes don't justify ANN). Stage two
sizes the pool dynamically from the score distribution, verifies candidates
with reliability-weighted mutual nearest-neighbor matching, and fuses both
scores. Toggles reproduce the fixed-k / no-RALM / no-SC ablations.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .aggregation import global_similarity

log = logging.getLogger("regionvpr.rerank")


@dataclass
class SchedulerParams:
    alpha_sched: float = 1.0
    k_min: int = 30
    k_max: int = 100
    k_prime: int = 60

    def validate(self):
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError("need 1 <= k_min <= k_max")
        if not (1 <= self.k_prime <= self.k_max):
            raise ValueError("need 1 <= k_prime <= k_max")


@dataclass
class RerankToggles:
    dcs: bool = True
    ralm: bool = True
    sc: bool = True
    fixed_k: Optional[int] = None  # used when dcs is off


@dataclass
class CandidateScore:
    image_id: str
    s_g: float
    s_l: float
    s_final: float
    reranked: bool


@dataclass
class RankedResult:
    candidates: list
    k_used: int
    s_q: float
    percentile: float

    def to_dict(self):
        return {
            "k_used": self.k_used,
            "s_q": self.s_q,
            "percentile": self.percentile,
            "candidates": [
                {"image_id": c.image_id, "s_g": c.s_g, "s_l": c.s_l,
                 "s_final": c.s_final, "reranked": c.reranked}
                for c in self.candidates
            ],
        }


def dcs_pool_size(scores, params):
    """Dynamic candidate pool size from the global score distribution.

    scores: exactly k_max entries sorted descending. S_q is the mean of the
    top k', P(S_q) the fraction of pool scores <= S_q, and
    k = min(floor(alpha * P * (k_max - k_min) + k_min), k_max), clamped to
    k_min defensively. The <= comparison carries a 1e-9 relative tolerance so
    mean-accumulation rounding cannot drop scores that equal S_q exactly
    (all-equal pools must yield P = 1).
    """
    params.validate()
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size != params.k_max:
        raise ValueError(f"expected exactly {params.k_max} scores")
    if np.any(np.diff(scores) > 0):
        raise ValueError("scores must be sorted descending")
    s_q = float(scores[:params.k_prime].mean())
    tol = 1e-9 * max(1.0, abs(s_q))
    percentile = float(np.count_nonzero(scores <= s_q + tol)) / params.k_max
    k = math.floor(params.alpha_sched * percentile * (params.k_max - params.k_min)
                   + params.k_min)
    k = min(k, params.k_max)
    k = max(k, params.k_min)
    return k, s_q, percentile


def _match_arrays(q_locals, c_locals, matcher):
    """Mutual-NN endpoints as index arrays (us, vs), ordered by ascending u."""
    kq, kc = q_locals.count, c_locals.count
    if kq == 0 or kc == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    row_arg, col_arg = matcher(q_locals.descriptors, c_locals.descriptors)
    us = np.flatnonzero(col_arg[row_arg] == np.arange(kq))
    return us, row_arg[us]


def match_mutual_nn(q_locals, c_locals, matcher=None):
    """Mutual nearest-neighbor match set between two local feature sets.

    (u, v) is kept iff u is the argmax of column v and v the argmax of row u
    of the cosine similarity matrix; argmax ties resolve to the smallest
    index. Output is ordered by ascending u and is a partial matching.
    """
    matcher = matcher or _kernels.make_matcher()
    us, vs = _match_arrays(q_locals, c_locals, matcher)
    return [(int(u), int(v)) for u, v in zip(us, vs)]


def ralm_score(matches, r_q, r_c):
    """Reliability-aware local similarity: sum of sqrt(R_q(u) * R_c(v))."""
    if not matches:
        return 0.0
    us = np.asarray([u for u, _ in matches])
    vs = np.asarray([v for _, v in matches])
    r_q = np.asarray(r_q, dtype=np.float64)
    r_c = np.asarray(r_c, dtype=np.float64)
    if us.max() >= r_q.size or vs.max() >= r_c.size:
        raise IndexError("match index outside the reliability vectors")
    return float(np.sum(np.sqrt(r_q[us] * r_c[vs])))


def fuse_scores(s_g, s_l, gamma):
    """Late fusion of global and local evidence: gamma * S_g + S_l."""
    return gamma * s_g + s_l


class SearchIndex:
    """Immutable brute-force retrieval index over image records."""

    def __init__(self, records):
        if not records:
            raise ValueError("empty index")
        self.records = list(records)
        self.ids = np.asarray([r.image_id for r in self.records])
        self.matrix = np.stack([r.global_descriptor.values.astype(np.float32)
                                for r in self.records])

    def __len__(self):
        return len(self.records)

    def global_scores(self, descriptor):
        return self.matrix @ descriptor.values.astype(np.float32)


def rerank(query, index, params=None, gamma=1000.0, toggles=None,
           exclude_ids=None, matcher=None):
    """Retrieve, adaptively schedule, locally verify and fuse.

    Candidates beyond the re-ranked pool keep S_final = gamma * S_g and sort
    after re-ranked ones, so their relative order never changes. With sc off,
    re-ranked candidates order purely by S_l (S_g breaks ties); with ralm off,
    S_l degrades to plain match counting.
    """
    params = params or SchedulerParams()
    params.validate()
    toggles = toggles or RerankToggles()

    scores = index.global_scores(query.global_descriptor).astype(np.float64)
    ids = index.ids
    mask = np.ones(len(index), dtype=bool)
    if exclude_ids:
        mask = ~np.isin(ids, list(exclude_ids))
    avail = np.flatnonzero(mask)
    # deterministic order: score descending, then image id ascending
    order = avail[np.lexsort((ids[avail], -scores[avail]))]

    pool_n = min(params.k_max, order.size)
    if pool_n < params.k_max:
        log.warning("index smaller than k_max: lowering pool to %d", pool_n)
    eff = SchedulerParams(alpha_sched=params.alpha_sched,
                          k_min=min(params.k_min, pool_n),
                          k_max=pool_n,
                          k_prime=min(params.k_prime, pool_n))
    pool = order[:pool_n]
    pool_scores = scores[pool]

    k_used, s_q, percentile = dcs_pool_size(pool_scores, eff)
    if not toggles.dcs:
        fixed = toggles.fixed_k if toggles.fixed_k is not None else eff.k_max
        k_used = min(fixed, pool_n)

    matcher = matcher or _kernels.make_matcher()
    q_locals = query.local_features
    reranked, rest = [], []
    for rank, idx in enumerate(pool):
        rec = index.records[idx]
        s_g = float(pool_scores[rank])
        if rank < k_used:
            # absent local sections behave like empty sets: S_l = 0
            if q_locals is None or rec.local_features is None:
                us = vs = np.empty(0, dtype=np.int64)
            else:
                us, vs = _match_arrays(q_locals, rec.local_features, matcher)
            if toggles.ralm and us.size:
                s_l = float(np.sum(np.sqrt(
                    q_locals.reliability[us].astype(np.float64)
                    * rec.local_features.reliability[vs].astype(np.float64))))
            else:
                s_l = float(us.size)
            s_final = fuse_scores(s_g, s_l, gamma) if toggles.sc else s_l
            reranked.append(CandidateScore(rec.image_id, s_g, s_l, s_final, True))
        else:
            rest.append(CandidateScore(rec.image_id, s_g, 0.0,
                                       fuse_scores(s_g, 0.0, gamma), False))

    reranked.sort(key=lambda c: (-c.s_final, -c.s_g, c.image_id))
    # rest is already ordered by (-s_g, id); gamma*s_g is monotone in s_g
    return RankedResult(candidates=reranked + rest, k_used=k_used,
                        s_q=s_q, percentile=percentile)
