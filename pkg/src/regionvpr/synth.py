"""Deterministic synthetic data: everything the oracle tests and the
acceptance suite need without real imagery or trained weights.

All generators are pure functions of (seed, params) via PCG64, so outputs
are bit-identical across runs and platforms.
"""
import math

import numpy as np

from .evaluation import DatasetIndex
from .masks import binarize_values
from .types import (AssignmentResult, ClassToken, DiscriminativeMask,
                    GlobalDescriptor, ImageRecord, LocalFeatureSet, PatchGrid,
                    ReliabilityMap)

LOCAL_DIM = 128


def _unit(v):
    return v / np.linalg.norm(v)


def _soft_assignment(labels, n_clusters, main=0.9, dustbin=0.02):
    """Hard labels softened into valid row-stochastic assignment rows."""
    n = labels.size
    probs = np.zeros((n, n_clusters + 1))
    spread = (1.0 - main - dustbin) / max(n_clusters - 1, 1)
    if n_clusters == 1:
        probs[:, 0] = 1.0 - dustbin
    else:
        probs[:, :n_clusters] = spread
        probs[np.arange(n), labels] = main
    probs[:, -1] = dustbin
    salience = probs[:, :-1].sum(axis=1)
    return probs, salience


def _local_grid_from_tokens(tokens, scale, rng, noise=0.0):
    """Dense local feature grid: per-cell 128-d unit descriptors derived from
    the cell's token, replicated to `scale` x the patch grid."""
    h, w, d = tokens.shape
    take = min(d, LOCAL_DIM)
    dense = np.zeros((h * scale, w * scale, LOCAL_DIM))
    for r in range(h):
        for c in range(w):
            base = np.zeros(LOCAL_DIM)
            base[:take] = tokens[r, c, :take]
            for dr in range(scale):
                for dc in range(scale):
                    vec = base.copy()
                    # offset channel keeps sub-cell descriptors distinct
                    vec[-1 - (dr * scale + dc) % 8] += 0.05 * (dr * scale + dc + 1)
                    if noise > 0:
                        vec = vec + rng.normal(0.0, noise, LOCAL_DIM)
                    dense[r * scale + dr, c * scale + dc] = _unit(vec)
    return dense


def _dense_local_set(dense, reliability):
    h_l, w_l, d = dense.shape
    rows, cols = np.divmod(np.arange(h_l * w_l), w_l)
    from .resample import resample_bilinear
    rel = resample_bilinear(reliability.values, h_l, w_l).ravel()
    return LocalFeatureSet(positions=np.stack([rows, cols], axis=1),
                           descriptors=dense.reshape(-1, d).astype(np.float32),
                           reliability=rel.astype(np.float32),
                           grid_h=h_l, grid_w=w_l)


def gen_cluster_scene(seed, n_clusters=4, grid=(6, 6), noise_sigma=0.0,
                      dim=None, scale=2):
    """Anchor/positive records sharing cluster structure, plus planted pairs.

    Every anchor cell p has a partner pi(p) in the positive image drawn from
    the same cluster; matched tokens share an (orthonormal) instance vector
    perturbed by Gaussian noise of the given sigma. At sigma=0 every planted
    pair passes Algorithm-1 style thresholds (best sim 1.0, distinct
    instances are orthogonal so the ratio is ~0).
    """
    h, w = grid
    n = h * w
    if h < 1 or w < 1:
        raise ValueError("degenerate grid")
    if n_clusters > n:
        raise ValueError("more clusters than cells")
    dim = dim or max(64, n)
    if dim < n:
        raise ValueError("dim must be >= cell count for orthogonal instances")
    rng = np.random.default_rng(seed)

    basis, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    instances = basis.T  # n orthonormal instance vectors

    labels = (np.arange(n) * n_clusters) // n
    perm = np.arange(n)
    for cluster in range(n_clusters):
        members = np.flatnonzero(labels == cluster)
        perm[members] = rng.permutation(members)
    planted = [(int(p), int(perm[p])) for p in range(n)]

    def noisy(vec):
        if noise_sigma <= 0:
            return vec
        return _unit(vec + rng.normal(0.0, noise_sigma, dim))

    anchor_tokens = np.zeros((n, dim))
    positive_tokens = np.zeros((n, dim))
    for p in range(n):
        anchor_tokens[p] = noisy(instances[p])
        positive_tokens[perm[p]] = noisy(instances[p])

    def build(tokens_flat, cluster_labels, mask_values):
        tokens = tokens_flat.reshape(h, w, dim).astype(np.float32)
        probs, salience = _soft_assignment(cluster_labels, n_clusters)
        assignment = AssignmentResult(probs=probs, salience=salience,
                                      mask_a=salience.reshape(h, w))
        reliability = ReliabilityMap(np.full((h, w), 0.9))
        mask = DiscriminativeMask(values=mask_values.reshape(h, w),
                                  bin=binarize_values(mask_values.reshape(h, w), 1.0),
                                  top_fraction=1.0)
        dense = _local_grid_from_tokens(tokens, scale, rng)
        local = _dense_local_set(dense, reliability)
        return PatchGrid(h, w, dim, tokens), assignment, reliability, mask, local

    anchor_mask = 0.5 + 0.5 * rng.permutation(n) / max(n - 1, 1)
    positive_mask = 0.5 + 0.5 * rng.permutation(n) / max(n - 1, 1)

    records = []
    for name, tokens_flat, cluster_labels, mask_values in (
            ("anchor", anchor_tokens, labels, anchor_mask),
            ("positive", positive_tokens, labels[np.argsort(perm)], positive_mask)):
        grid_t, assignment, reliability, mask, local = build(
            tokens_flat, cluster_labels, mask_values)
        descriptor = GlobalDescriptor(
            _unit(tokens_flat.mean(axis=0)).astype(np.float32))
        records.append(ImageRecord(
            image_id=f"scene{seed}_{name}",
            geotag=(45.0, 7.0),
            global_descriptor=descriptor,
            local_features=local,
            mask=mask,
            assignment=assignment,
            patch_grid=grid_t,
            class_token=ClassToken(tokens_flat[0].astype(np.float32)),
            reliability=reliability,
        ))
    return records[0], records[1], planted


METERS_PER_DEG_LAT = 6371000.0 * math.pi / 180.0


def _offset_geotag(lat0, lon0, north_m, east_m):
    lat = lat0 + north_m / METERS_PER_DEG_LAT
    lon = lon0 + east_m / (METERS_PER_DEG_LAT * math.cos(math.radians(lat0)))
    return (lat, lon)


def gen_geo_index(seed, size, cluster_spread_m=5.0, n_queries=0,
                  place_spacing_m=120.0, dim=256, locals_per_image=24,
                  descriptor_noise=0.02, local_noise=0.05):
    """Geotagged dataset whose descriptor similarity decays with distance.

    Images cluster around well-separated places (>= place_spacing_m apart);
    same-place images share a descriptor prototype and a local-feature basis,
    so both retrieval stages favor geographically correct candidates.
    Returns (database, queries) DatasetIndex pair; queries are extra images
    of the same places.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng(seed)
    n_places = max(1, size // 5)
    side = math.ceil(math.sqrt(n_places))
    lat0, lon0 = 45.0, 7.0

    protos = rng.standard_normal((n_places, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    local_protos = rng.standard_normal((n_places, locals_per_image, LOCAL_DIM))
    local_protos /= np.linalg.norm(local_protos, axis=2, keepdims=True)
    grid_side = math.ceil(math.sqrt(locals_per_image))

    def make_record(image_id, place):
        off_n, off_e = rng.uniform(-cluster_spread_m, cluster_spread_m, 2)
        cell_r, cell_c = divmod(place, side)
        geotag = _offset_geotag(lat0, lon0,
                                cell_r * place_spacing_m + off_n,
                                cell_c * place_spacing_m + off_e)
        desc = _unit(protos[place] + descriptor_noise * rng.standard_normal(dim))
        locs = local_protos[place] + local_noise * rng.standard_normal(
            (locals_per_image, LOCAL_DIM))
        locs /= np.linalg.norm(locs, axis=1, keepdims=True)
        rows, cols = np.divmod(np.arange(locals_per_image), grid_side)
        local = LocalFeatureSet(
            positions=np.stack([rows, cols], axis=1),
            descriptors=locs.astype(np.float32),
            reliability=rng.uniform(0.6, 1.0, locals_per_image).astype(np.float32),
            grid_h=grid_side, grid_w=grid_side)
        return ImageRecord(image_id=image_id, geotag=geotag,
                           global_descriptor=GlobalDescriptor(desc.astype(np.float32)),
                           local_features=local)

    db = [make_record(f"db_{i:05d}", i % n_places) for i in range(size)]
    queries = [make_record(f"q_{i:05d}", i % n_places) for i in range(n_queries)]
    return (DatasetIndex(mode="geographic", entries=db),
            DatasetIndex(mode="geographic", entries=queries))


def gen_planted_rerank(seed, size=200, dim=256, locals_per_image=64):
    """Index with one true match planted at global rank 3.

    The true match shares the query's local features (strong mutual-NN
    agreement) while two distractors get slightly higher global similarity
    but unrelated locals. Returns (query, database DatasetIndex, true_id).
    """
    rng = np.random.default_rng(seed)
    grid_side = math.ceil(math.sqrt(locals_per_image))

    def local_set(descs, reliability):
        rows, cols = np.divmod(np.arange(descs.shape[0]), grid_side)
        return LocalFeatureSet(positions=np.stack([rows, cols], axis=1),
                               descriptors=descs.astype(np.float32),
                               reliability=reliability.astype(np.float32),
                               grid_h=grid_side, grid_w=grid_side)

    q_desc = _unit(rng.standard_normal(dim))
    q_locals = rng.standard_normal((locals_per_image, LOCAL_DIM))
    q_locals /= np.linalg.norm(q_locals, axis=1, keepdims=True)
    query = ImageRecord(
        image_id="query", geotag=(45.0, 7.0),
        global_descriptor=GlobalDescriptor(q_desc.astype(np.float32)),
        local_features=local_set(q_locals, np.full(locals_per_image, 0.95)))

    entries = []
    # two globally-stronger distractors with unrelated locals, far away
    for rank, sim in enumerate((0.97, 0.96)):
        desc = _unit(sim * q_desc + math.sqrt(1 - sim * sim)
                     * _ortho(rng, q_desc))
        locs = rng.standard_normal((locals_per_image, LOCAL_DIM))
        locs /= np.linalg.norm(locs, axis=1, keepdims=True)
        entries.append(ImageRecord(
            image_id=f"distractor_{rank}",
            geotag=_offset_geotag(45.0, 7.0, 500.0 + 100.0 * rank, 0.0),
            global_descriptor=GlobalDescriptor(desc.astype(np.float32)),
            local_features=local_set(locs, rng.uniform(0.6, 1.0, locals_per_image))))
    # the true match: globally third, locally near-identical, 10 m away
    desc = _unit(0.95 * q_desc + math.sqrt(1 - 0.95 ** 2) * _ortho(rng, q_desc))
    true_locals = q_locals + 0.01 * rng.standard_normal((locals_per_image, LOCAL_DIM))
    true_locals /= np.linalg.norm(true_locals, axis=1, keepdims=True)
    entries.append(ImageRecord(
        image_id="true_match", geotag=_offset_geotag(45.0, 7.0, 10.0, 0.0),
        global_descriptor=GlobalDescriptor(desc.astype(np.float32)),
        local_features=local_set(true_locals, np.full(locals_per_image, 0.95))))
    # background noise images, far away and globally weak
    for i in range(size - 3):
        desc = _unit(rng.standard_normal(dim))
        while abs(float(desc @ q_desc)) > 0.9:
            desc = _unit(rng.standard_normal(dim))
        locs = rng.standard_normal((locals_per_image, LOCAL_DIM))
        locs /= np.linalg.norm(locs, axis=1, keepdims=True)
        entries.append(ImageRecord(
            image_id=f"noise_{i:04d}",
            geotag=_offset_geotag(45.0, 7.0, 1000.0 + i, 1000.0),
            global_descriptor=GlobalDescriptor(desc.astype(np.float32)),
            local_features=local_set(locs, rng.uniform(0.4, 1.0, locals_per_image))))
    return query, DatasetIndex(mode="geographic", entries=entries), "true_match"


def _ortho(rng, v):
    """Random unit vector orthogonal to v."""
    w = rng.standard_normal(v.size)
    w -= (w @ v) * v
    return _unit(w)
