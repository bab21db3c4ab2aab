"""Command-line entry point.

Subcommands: build-index, query, evaluate, ablate, mine-pairs, losses,
synth, dump-mask. Configuration precedence is flags > config file >
defaults; exit codes are 0 (success), 1 (usage error), 2 (data error).
"""
import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import container, evaluation, losses, mining, rerank, synth
from .types import ContainerError, ValidationError

log = logging.getLogger("regionvpr")

DEFAULTS = {
    "m": 64, "sinkhorn_iters": 3, "mask_top_fraction": 0.40,
    "thr1": 0.8, "thr2": 0.5, "n_pairs": 12,
    "k_min": 30, "k_max": 100, "k_prime": 60,
    "alpha": 1.0, "gamma": 1000.0, "alpha_sa": 1.0, "beta_pc": 1.0,
}
CONFIG_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("version") != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {data.get('version')!r}")
    unknown = set(data.get("params", {})) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return data.get("params", {})


def _effective(args, *names):
    """Merge flag > config file > default for the requested keys."""
    config = _load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in config:
            out[name] = config[name]
        else:
            out[name] = DEFAULTS[name]
    return out


def _engine_args(sub):
    sub.add_argument("--config", help="JSON config file (versioned schema)")
    sub.add_argument("--k-min", dest="k_min", type=int)
    sub.add_argument("--k-max", dest="k_max", type=int)
    sub.add_argument("--k-prime", dest="k_prime", type=int)
    sub.add_argument("--alpha", type=float, help="DCS scaling factor")
    sub.add_argument("--gamma", type=float, help="late-fusion weight on S_g")
    sub.add_argument("--fixed-k", dest="fixed_k",
                     help="integer pool size, or 'off' for DCS (default)")
    sub.add_argument("--no-ralm", action="store_true")
    sub.add_argument("--no-sc", action="store_true")
    sub.add_argument("--mask-top-fraction", dest="mask_top_fraction", type=float)
    sub.add_argument("--exclude-self", action="store_true")


def _engine_config(args):
    vals = _effective(args, "k_min", "k_max", "k_prime", "alpha", "gamma")
    fixed_k = None
    dcs = True
    raw = getattr(args, "fixed_k", None)
    if raw is not None and raw != "off":
        fixed_k = int(raw)
        dcs = False
    scheduler = rerank.SchedulerParams(alpha_sched=vals["alpha"],
                                       k_min=vals["k_min"], k_max=vals["k_max"],
                                       k_prime=vals["k_prime"])
    toggles = rerank.RerankToggles(dcs=dcs, ralm=not args.no_ralm,
                                   sc=not args.no_sc, fixed_k=fixed_k)
    return evaluation.EngineConfig(scheduler=scheduler, toggles=toggles,
                                   gamma=vals["gamma"],
                                   exclude_self=getattr(args, "exclude_self", False)), vals


def _load_dataset(manifest_path):
    mode, entries = container.read_manifest(manifest_path)
    records = []
    base = os.path.dirname(os.path.abspath(manifest_path))
    for entry in entries:
        path = entry[-1]
        if not os.path.isabs(path):
            path = os.path.join(base, path)
        records.append(container.read_record_file(path))
    ds = evaluation.DatasetIndex(mode=mode, entries=records)
    ds.validate()
    return ds


def _emit(payload, out_path, deterministic):
    text = json.dumps(payload, indent=2, sort_keys=deterministic) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_build_index(args):
    ds = _load_dataset(args.manifest)
    matrix = np.stack([r.global_descriptor.values for r in ds.entries])
    meta = {"mode": ds.mode, "ids": [r.image_id for r in ds.entries]}
    np.savez(args.out, matrix=matrix, meta=json.dumps(meta, sort_keys=True))
    log.info("indexed %d records -> %s", len(ds.entries), args.out)
    return 0


def cmd_query(args):
    query = container.read_record_file(args.query)
    database = _load_dataset(args.database)
    config, vals = _engine_config(args)
    exclude = {query.image_id} if config.exclude_self else None
    result = rerank.rerank(query, rerank.SearchIndex(database.entries),
                           params=config.scheduler, gamma=config.gamma,
                           toggles=config.toggles, exclude_ids=exclude)
    payload = {"config": {**vals, "ralm": config.toggles.ralm,
                          "sc": config.toggles.sc, "dcs": config.toggles.dcs,
                          "fixed_k": config.toggles.fixed_k},
               "result": result.to_dict()}
    _emit(payload, args.out, args.deterministic)
    return 0


def cmd_evaluate(args):
    queries = _load_dataset(args.queries)
    database = _load_dataset(args.database)
    config, _ = _engine_config(args)
    report = evaluation.evaluate(queries, database, config,
                                 threads=max(1, args.threads or 1))
    _emit(report.to_dict(deterministic=args.deterministic), args.out,
          args.deterministic)
    return 0


def cmd_ablate(args):
    with open(args.grid, encoding="utf-8") as fh:
        grid = json.load(fh)
    queries = _load_dataset(args.queries)
    database = _load_dataset(args.database)
    rows = evaluation.ablation_sweep(grid["configs"], queries, database,
                                     out_path=args.out)
    log.info("wrote %d sweep rows -> %s", len(rows), args.out)
    return 0


def cmd_mine_pairs(args):
    anchor = container.read_record_file(args.anchor)
    positive = container.read_record_file(args.positive)
    vals = _effective(args, "thr1", "thr2", "n_pairs")
    params = mining.MiningParams(thr1=vals["thr1"], thr2=vals["thr2"],
                                 n_pairs=vals["n_pairs"])
    pairs = mining.mine_pairs(anchor, positive, params)
    lines = "".join(json.dumps({"p": p.anchor_index, "p2": p.positive_index,
                                "sim": p.similarity, "ratio": p.ratio}) + "\n"
                    for p in pairs)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)
    return 0


def cmd_losses(args):
    anchor = container.read_record_file(args.anchor)
    positive = container.read_record_file(args.positive)
    vals = _effective(args, "alpha_sa", "beta_pc")
    weights = losses.LossWeights(alpha_sa=vals["alpha_sa"], beta_pc=vals["beta_pc"])
    comp = losses.LossComponents()

    from .resample import resample_bilinear
    mask_a = anchor.assignment.mask_a
    rel = resample_bilinear(anchor.reliability.values, *mask_a.shape)
    comp.sa, _, _ = losses.loss_sa(mask_a, rel)

    feats = anchor.patch_grid.tokens
    pos_feats = positive.patch_grid.tokens
    comp.sce, _, _ = losses.loss_sce_masked(feats, anchor.mask.values,
                                            pos_feats, positive.mask.values)

    with open(args.pairs, encoding="utf-8") as fh:
        pairs = [mining.PseudoPair(anchor_index=rec["p"], positive_index=rec["p2"],
                                   similarity=rec["sim"], ratio=rec["ratio"])
                 for rec in map(json.loads, filter(str.strip, fh))]
    a_feats, p_feats, sims = mining.pair_similarity_inputs(anchor, positive, pairs)
    comp.pc, _, _ = losses.loss_pc(a_feats, p_feats, sims)

    batch = np.stack([anchor.global_descriptor.values,
                      positive.global_descriptor.values])
    comp.ms = losses.loss_ms(batch, np.asarray([0, 0]), weights.ms_params)

    note = None
    if args.negative:
        negative = container.read_record_file(args.negative)
        comp.mnn = losses.loss_mnn(anchor.local_features, positive.local_features,
                                   negative.local_features)
    else:
        note = "mnn requires --negative; reported as 0"
    payload = {"components": dataclasses.asdict(comp),
               "total": losses.loss_total(comp, weights),
               "weights": {"alpha_sa": weights.alpha_sa, "beta_pc": weights.beta_pc}}
    if note:
        payload["note"] = note
    _emit(payload, args.out, args.deterministic)
    return 0


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    db, queries = synth.gen_geo_index(args.seed, args.size,
                                      n_queries=args.queries)
    rows = []
    for record in db.entries:
        path = os.path.join(args.out, f"{record.image_id}.vprf")
        container.write_record_file(record, path)
        rows.append((record.image_id, record.geotag[0], record.geotag[1],
                     f"{record.image_id}.vprf"))
    container.write_manifest(rows, os.path.join(args.out, "database.tsv"))
    rows = []
    for record in queries.entries:
        path = os.path.join(args.out, f"{record.image_id}.vprf")
        container.write_record_file(record, path)
        rows.append((record.image_id, record.geotag[0], record.geotag[1],
                     f"{record.image_id}.vprf"))
    container.write_manifest(rows, os.path.join(args.out, "queries.tsv"))
    log.info("wrote %d database + %d query records under %s",
             len(db.entries), len(queries.entries), args.out)
    return 0


def write_pgm(path, grid):
    """8-bit binary PGM, linearly rescaled to [0, 255]."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = grid.min(), grid.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = ((grid - lo) * scale).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_dump_mask(args):
    from .masks import binarize_mask, fuse_mask
    record = container.read_record_file(args.record)
    if record.assignment is None or record.reliability is None:
        raise ValidationError("record", "needs assignment and reliability sections")
    vals = _effective(args, "mask_top_fraction")
    os.makedirs(args.out, exist_ok=True)
    mask_a = record.assignment.mask_a
    fused = record.mask or fuse_mask(record.reliability, mask_a)
    binned = binarize_mask(fused, vals["mask_top_fraction"])
    write_pgm(os.path.join(args.out, "mask_a.pgm"), mask_a)
    write_pgm(os.path.join(args.out, "reliability.pgm"), record.reliability.values)
    write_pgm(os.path.join(args.out, "mask_fused.pgm"), fused.values)
    write_pgm(os.path.join(args.out, "mask_bin.pgm"), binned.bin.astype(np.float64))
    return 0


def build_parser():
    parser = _Parser(prog="regionvpr",
                     description="Two-stage place recognition engine")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker/BLAS thread cap")
    parser.add_argument("--deterministic", action="store_true",
                        help="byte-stable outputs (no timestamps/timings)")
    subs = parser.add_subparsers(dest="command")

    sub = subs.add_parser("build-index", parents=[], help="precompute a descriptor index")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_build_index)

    sub = subs.add_parser("query", help="rank one query against a database")
    sub.add_argument("--query", required=True)
    sub.add_argument("--database", required=True, help="database manifest")
    sub.add_argument("--out")
    _engine_args(sub)
    sub.set_defaults(func=cmd_query)

    sub = subs.add_parser("evaluate", help="Recall@N over a query manifest")
    sub.add_argument("--queries", required=True)
    sub.add_argument("--database", required=True)
    sub.add_argument("--out")
    _engine_args(sub)
    sub.set_defaults(func=cmd_evaluate)

    sub = subs.add_parser("ablate", help="run a configuration sweep")
    sub.add_argument("--grid", required=True, help="JSON grid of configs")
    sub.add_argument("--queries", required=True)
    sub.add_argument("--database", required=True)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_ablate)

    sub = subs.add_parser("mine-pairs", help="mine pseudo-correspondences")
    sub.add_argument("anchor")
    sub.add_argument("positive")
    sub.add_argument("--out")
    sub.add_argument("--config")
    sub.add_argument("--thr1", type=float)
    sub.add_argument("--thr2", type=float)
    sub.add_argument("--n-pairs", dest="n_pairs", type=int)
    sub.set_defaults(func=cmd_mine_pairs)

    sub = subs.add_parser("losses", help="loss components for a record pair")
    sub.add_argument("--anchor", required=True)
    sub.add_argument("--positive", required=True)
    sub.add_argument("--pairs", required=True, help="mined pair JSONL")
    sub.add_argument("--negative")
    sub.add_argument("--out")
    sub.add_argument("--config")
    sub.add_argument("--alpha-sa", dest="alpha_sa", type=float)
    sub.add_argument("--beta-pc", dest="beta_pc", type=float)
    sub.set_defaults(func=cmd_losses)

    sub = subs.add_parser("synth", help="generate synthetic records + manifests")
    sub.add_argument("--seed", type=int, default=7)
    sub.add_argument("--size", type=int, default=60)
    sub.add_argument("--queries", type=int, default=12)
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=cmd_synth)

    sub = subs.add_parser("dump-mask", help="write mask diagnostics as PGM")
    sub.add_argument("record")
    sub.add_argument("--out", required=True)
    sub.add_argument("--config")
    sub.add_argument("--mask-top-fraction", dest="mask_top_fraction", type=float)
    sub.set_defaults(func=cmd_dump_mask)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("VPR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    if args.threads is not None:
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            pass
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ContainerError, ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
