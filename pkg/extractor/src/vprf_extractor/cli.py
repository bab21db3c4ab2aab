"""vprf-export command line."""
import argparse
import logging
import sys

import numpy as np

from .export import Exporter, read_input_manifest


def main(argv=None):
    logging.basicConfig(level="INFO", format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="vprf-export")
    parser.add_argument("--images", help="image directory (paths in the manifest "
                                         "are resolved against it)")
    parser.add_argument("--manifest", required=True,
                        help="input TSV: id, lat lon | frame, image path")
    parser.add_argument("--resolution", type=int, default=322)
    parser.add_argument("--backbone", choices=("tiny", "vitb", "vitl"),
                        default="vitb")
    parser.add_argument("--blocks", type=int, default=0,
                        help="override transformer depth (0 = full)")
    parser.add_argument("--weights", help="backbone checkpoint (.pt)")
    parser.add_argument("--reb-checkpoint", help="reliability head checkpoint")
    parser.add_argument("--cluster-weights",
                        help=".npz with weights/biases/dustbin for assignments")
    parser.add_argument("--sinkhorn-iters", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, bit-stable export")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    entries = read_input_manifest(args.manifest)
    if args.images:
        import os
        for entry in entries:
            if not os.path.isabs(entry["path"]):
                entry["path"] = os.path.join(args.images, entry["path"])

    cluster = None
    if args.cluster_weights:
        data = np.load(args.cluster_weights)
        cluster = (data["weights"], data["biases"], float(data["dustbin"]))

    exporter = Exporter(backbone=args.backbone, resolution=args.resolution,
                        checkpoint=args.weights,
                        reb_checkpoint=args.reb_checkpoint,
                        depth_override=args.blocks, seed=args.seed,
                        cluster_weights=cluster,
                        sinkhorn_iters=args.sinkhorn_iters,
                        deterministic=args.deterministic)
    rows, failures = exporter.export(entries, args.out)
    print(f"exported {len(rows)} records -> {args.out}")
    if failures:
        for path, reason in failures:
            print(f"FAILED {path}: {reason}", file=sys.stderr)
        return 1
    return 0


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
