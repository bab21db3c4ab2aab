"""Batch feature export: images in, VPRF containers + manifest out."""
import logging
import os

import numpy as np
import torch
from PIL import Image

from . import container
from .backbone import (PATCH, BackboneConfig, build_backbone,
                       build_reliability_head, pick_taps)
from .sinkhorn import assignment_probs

log = logging.getLogger("vprf_extractor")

# standard backbone normalization constants, recorded in the meta section
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)


def preprocess(path, resolution):
    """Resize shorter side, center-crop, pad up to a multiple of 14.

    Returns a float tensor (3, H, W) with H = W = target resolution padded
    to the next patch multiple, so patchification never drops pixels.
    """
    image = Image.open(path).convert("RGB")
    w, h = image.size
    scale = resolution / min(w, h)
    image = image.resize((max(1, round(w * scale)), max(1, round(h * scale))),
                         Image.BILINEAR)
    w, h = image.size
    left, top = (w - resolution) // 2, (h - resolution) // 2
    image = image.crop((left, top, left + resolution, top + resolution))
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - MEAN) / STD
    tensor = torch.from_numpy(arr.astype(np.float32)).permute(2, 0, 1)
    pad = (-resolution) % PATCH
    if pad:
        tensor = torch.nn.functional.pad(tensor, (0, pad, 0, pad))
    return tensor


def read_input_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 4:
                entries.append({"id": parts[0], "geotag": (float(parts[1]),
                                                           float(parts[2])),
                                "path": parts[3]})
            elif len(parts) == 3:
                entries.append({"id": parts[0], "frame": int(parts[1]),
                                "path": parts[2]})
            else:
                raise ValueError(f"manifest line {lineno}: expected 3 or 4 fields")
    return entries


class Exporter:
    def __init__(self, backbone="vitb", resolution=322, checkpoint=None,
                 reb_checkpoint=None, depth_override=0, seed=0,
                 cluster_weights=None, sinkhorn_iters=3, deterministic=False):
        if deterministic:
            torch.set_num_threads(1)
        self.resolution = resolution
        self.config = BackboneConfig(name=backbone,
                                     depth_override=depth_override, seed=seed)
        self.model = build_backbone(self.config, checkpoint)
        self.weights_fallback = checkpoint is None
        self.reb = None
        if reb_checkpoint:
            self.reb = build_reliability_head(self.config.dim, reb_checkpoint)
        self.cluster_weights = cluster_weights  # (weights, biases, dustbin)
        self.sinkhorn_iters = sinkhorn_iters

    @torch.no_grad()
    def export_one(self, entry, out_dir):
        tensor = preprocess(entry["path"], self.resolution)
        h, w = tensor.shape[1:]
        cls_out, grid, taps = self.model(tensor[None])
        cls_np = cls_out[0].numpy()
        grid_np = grid[0].permute(1, 2, 0).contiguous().numpy()  # (H_p, W_p, D)
        h_p, w_p, dim = grid_np.shape

        flags = []
        if self.weights_fallback:
            flags.append("backbone:random-init")
        r_h, r_w = h // 8, w // 8
        if self.reb is not None:
            tap_idx = pick_taps(len(taps))
            rel = self.reb([taps[i] for i in tap_idx], r_h, r_w)[0].numpy()
        else:
            rel = np.ones((r_h, r_w), dtype=np.float32)
            flags.append("reliability:fallback")

        meta = {"image_id": entry["id"], "h_p": h_p, "w_p": w_p, "d": dim,
                "r_h": r_h, "r_w": r_w, "resolution": self.resolution,
                "preprocess": {"mean": list(MEAN), "std": list(STD),
                               "crop": "shorter-side-resize+center-crop"}}
        if "geotag" in entry:
            meta["geotag"] = [entry["geotag"][0], entry["geotag"][1]]
        else:
            meta["frame"] = entry["frame"]
        if flags:
            meta["flags"] = sorted(flags)

        sections = [
            (container.TAG_TOKENS, container.tensor_bytes(grid_np)),
            (container.TAG_CLASS_TOKEN, container.tensor_bytes(cls_np)),
            (container.TAG_RELIABILITY, container.tensor_bytes(rel)),
        ]
        if self.cluster_weights is not None:
            weights, biases, dustbin = self.cluster_weights
            meta["m"] = int(np.asarray(weights).shape[0])
            probs = assignment_probs(grid_np.reshape(-1, dim), weights, biases,
                                     dustbin, iters=self.sinkhorn_iters)
            salience = probs[:, :-1].sum(axis=1).reshape(h_p, w_p)
            sections.append((container.TAG_ASSIGN_PROBS,
                             container.tensor_bytes(probs)))
            sections.append((container.TAG_SALIENCE,
                             container.tensor_bytes(salience)))
        sections.insert(0, (container.TAG_META, container.meta_bytes(meta)))

        out_path = os.path.join(out_dir, f"{entry['id']}.vprf")
        tmp_path = out_path + ".tmp"
        with open(tmp_path, "wb") as fh:
            container.write_sections(fh, sections)
        os.replace(tmp_path, out_path)
        return out_path

    def export(self, entries, out_dir):
        """Export all entries; returns (manifest rows, failures)."""
        os.makedirs(out_dir, exist_ok=True)
        rows, failures = [], []
        for entry in entries:
            try:
                path = self.export_one(entry, out_dir)
            except (OSError, ValueError) as exc:
                log.error("failed to export %s: %s", entry["path"], exc)
                failures.append((entry["path"], str(exc)))
                continue
            rel_path = os.path.basename(path)
            if "geotag" in entry:
                rows.append((entry["id"], entry["geotag"][0],
                             entry["geotag"][1], rel_path))
            else:
                rows.append((entry["id"], entry["frame"], rel_path))
        manifest_path = os.path.join(out_dir, "manifest.tsv")
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write("\t".join(str(part) for part in row) + "\n")
        return rows, failures
