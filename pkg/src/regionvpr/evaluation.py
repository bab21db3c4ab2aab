"""Recall@N harness with geographic and frame-index correctness criteria."""
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .rerank import RerankToggles, SchedulerParams, SearchIndex, rerank

log = logging.getLogger("regionvpr.evaluation")

EARTH_RADIUS_M = 6371000.0
GEO_THRESHOLD_M = 25.0
FRAME_TOLERANCE = 10
RECALL_NS = (1, 5, 10)


@dataclass
class DatasetIndex:
    mode: str                 # "geographic" | "sequential"
    entries: list             # ImageRecord list

    def validate(self):
        if self.mode not in ("geographic", "sequential"):
            raise ValueError(f"unknown mode {self.mode!r}")
        ids = [r.image_id for r in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids")
        for record in self.entries:
            has_geo = record.geotag is not None
            if has_geo != (self.mode == "geographic"):
                raise ValueError(f"record {record.image_id} inconsistent with mode")


@dataclass
class RecallReport:
    recall_at: dict
    num_queries: int
    per_query_hits: dict      # N -> list[bool]
    latencies_s: list = field(default_factory=list)
    k_used: list = field(default_factory=list)

    def to_dict(self, deterministic=False):
        out = {
            "recall_at": {str(n): v for n, v in self.recall_at.items()},
            "num_queries": self.num_queries,
            "per_query_hits": {str(n): [bool(b) for b in bits]
                               for n, bits in self.per_query_hits.items()},
        }
        if not deterministic:
            out["latency_median_s"] = float(np.median(self.latencies_s)) \
                if self.latencies_s else None
            out["latency_mean_s"] = float(np.mean(self.latencies_s)) \
                if self.latencies_s else None
        return out


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters on a spherical earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def is_correct(query, candidate, mode, geo_threshold_m=GEO_THRESHOLD_M,
               frame_tolerance=FRAME_TOLERANCE):
    """Whether a retrieved candidate counts as a correct place match."""
    if mode == "geographic":
        if query.geotag is None or candidate.geotag is None:
            raise ValueError("mode mismatch: geographic entries need geotags")
        dist = haversine_m(query.geotag[0], query.geotag[1],
                           candidate.geotag[0], candidate.geotag[1])
        return dist <= geo_threshold_m
    if mode == "sequential":
        if query.frame_index is None or candidate.frame_index is None:
            raise ValueError("mode mismatch: sequential entries need frame indices")
        return abs(query.frame_index - candidate.frame_index) <= frame_tolerance
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class EngineConfig:
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    toggles: RerankToggles = field(default_factory=RerankToggles)
    gamma: float = 1000.0
    exclude_self: bool = False


def evaluate(queries, database, config=None, index=None, threads=1):
    """Recall@N of the full two-stage engine over a query set.

    Queries evaluate independently (optionally across a thread pool; the
    matching workspace is thread-local) and reduce order-independently, so
    results do not depend on the worker count. Per-query latencies are
    meaningful for threads=1 only.
    """
    config = config or EngineConfig()
    queries.validate()
    database.validate()
    if queries.mode != database.mode:
        raise ValueError("query/database mode mismatch")
    if not database.entries:
        raise ValueError("empty database")
    if not queries.entries:
        raise ValueError("empty query set")
    index = index or SearchIndex(database.entries)
    by_id = {r.image_id: r for r in database.entries}

    def run_one(q):
        exclude = {q.image_id} if config.exclude_self else None
        t0 = time.perf_counter()
        result = rerank(q, index, params=config.scheduler, gamma=config.gamma,
                        toggles=config.toggles, exclude_ids=exclude)
        elapsed = time.perf_counter() - t0
        correct = [is_correct(q, by_id[c.image_id], queries.mode)
                   for c in result.candidates[:max(RECALL_NS)]]
        return elapsed, result.k_used, {n: any(correct[:n]) for n in RECALL_NS}

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_one, queries.entries))
    else:
        outcomes = [run_one(q) for q in queries.entries]

    hits = {n: [out[2][n] for out in outcomes] for n in RECALL_NS}
    latencies = [out[0] for out in outcomes]
    ks = [out[1] for out in outcomes]
    nq = len(queries.entries)
    recall = {n: sum(bits) / nq for n, bits in hits.items()}
    return RecallReport(recall_at=recall, num_queries=nq, per_query_hits=hits,
                        latencies_s=latencies, k_used=ks)


def estimate_pool_memory_mb(k, records):
    """Rough peak bytes held by one query's candidate pool, in MiB."""
    if not records:
        return 0.0
    per = []
    for r in records[:k]:
        loc = r.local_features
        if loc is None or loc.count == 0:
            per.append(0)
        else:
            per.append(loc.descriptors.nbytes + loc.reliability.nbytes
                       + loc.positions.nbytes)
    kq = max((r.local_features.count for r in records[:k]
              if r.local_features is not None), default=0)
    sim_buffer = kq * 1024 * 4  # blocked kernel scratch
    return (sum(per) + sim_buffer) / (1024.0 * 1024.0)


def ablation_sweep(configs, queries, database, out_path=None):
    """Run a grid of engine configurations; one CSV row per configuration.

    Each config dict may set: name, fixed_k (int or None for DCS), ralm, sc,
    gamma, alpha, k_min, k_max, k_prime, top_fraction. When top_fraction
    differs from the stored masks and records carry dense local grids plus
    fused masks, local sets are re-derived in memory.
    """
    from .masks import binarize_values, select_local

    index_cache = {}
    rows = []
    for cfg in configs:
        name = cfg.get("name") or _config_name(cfg)
        tf = cfg.get("top_fraction")
        db, qs = database, queries
        if tf is not None:
            key = round(float(tf), 6)
            if key not in index_cache:
                index_cache[key] = (_reselect(database, tf), _reselect(queries, tf))
            db, qs = index_cache[key]
        scheduler = SchedulerParams(
            alpha_sched=cfg.get("alpha", 1.0),
            k_min=cfg.get("k_min", 30), k_max=cfg.get("k_max", 100),
            k_prime=cfg.get("k_prime", 60))
        fixed_k = cfg.get("fixed_k")
        toggles = RerankToggles(dcs=fixed_k is None,
                                ralm=cfg.get("ralm", True),
                                sc=cfg.get("sc", True),
                                fixed_k=fixed_k)
        config = EngineConfig(scheduler=scheduler, toggles=toggles,
                              gamma=cfg.get("gamma", 1000.0),
                              exclude_self=cfg.get("exclude_self", False))
        report = evaluate(qs, db, config)
        k_top = max(report.k_used) if report.k_used else 0
        rows.append({
            "name": name,
            "recall_at_1": report.recall_at[1],
            "recall_at_5": report.recall_at[5],
            "recall_at_10": report.recall_at[10],
            "latency_median_s": float(np.median(report.latencies_s)),
            "latency_mean_s": float(np.mean(report.latencies_s)),
            "peak_pool_mem_mb": estimate_pool_memory_mb(k_top, db.entries),
        })
        log.info("ablation %s: R@1=%.3f median=%.4fs", name,
                 rows[-1]["recall_at_1"], rows[-1]["latency_median_s"])
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows


def _config_name(cfg):
    parts = []
    if cfg.get("fixed_k") is not None:
        parts.append(f"fixed_k={cfg['fixed_k']}")
    else:
        parts.append("dcs")
    if not cfg.get("ralm", True):
        parts.append("no-ralm")
    if not cfg.get("sc", True):
        parts.append("no-sc")
    if cfg.get("top_fraction") is not None:
        parts.append(f"tf={cfg['top_fraction']}")
    return "+".join(parts)


def _reselect(dataset, top_fraction):
    """Re-derive masked local sets at a different top fraction, if possible."""
    import copy

    from .masks import binarize_values, select_local

    out = []
    for record in dataset.entries:
        rec = copy.copy(record)
        loc, mask = record.local_features, record.mask
        dense_available = (loc is not None and mask is not None
                           and record.reliability is not None
                           and loc.count == loc.grid_h * loc.grid_w)
        if dense_available:
            dense = loc.descriptors.reshape(loc.grid_h, loc.grid_w, -1)
            bins = binarize_values(mask.values, top_fraction)
            rec.local_features = select_local(dense, bins, record.reliability,
                                              mask_values=mask.values)
        out.append(rec)
    return DatasetIndex(mode=dataset.mode, entries=out)
