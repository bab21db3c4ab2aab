"""VPRF binary container and manifest I/O.

Layout: magic ``VPRF`` (4 bytes), u16 version=1, u16 section count, then
sections of (u32 tag, u64 byte length, payload). All tensors are row-major
float32 little-endian. Tag 0x01 is a UTF-8 JSON meta blob carrying ids,
geotags and the dimensions needed to reshape the raw tensors. Identical
records serialize to identical bytes (meta keys are sorted).
"""
import json
import struct

import numpy as np

from .types import (AssignmentResult, ClassToken, ClusterParams, ContainerError,
                    DiscriminativeMask, GlobalDescriptor, ImageRecord,
                    LocalFeatureSet, PatchGrid, ReliabilityMap, ValidationError)

MAGIC = b"VPRF"
VERSION = 1

TAG_META = 0x01
TAG_TOKENS = 0x02
TAG_CLASS_TOKEN = 0x03
TAG_ASSIGN_PROBS = 0x04
TAG_SALIENCE = 0x05
TAG_RELIABILITY = 0x06
TAG_GLOBAL_DESC = 0x07
TAG_LOCAL_POS = 0x08
TAG_LOCAL_DESC = 0x09
TAG_LOCAL_REL = 0x0A
TAG_FUSED_MASK = 0x0B
# weights files reuse the container with their own tags
TAG_W_CLUSTER = 0x10
TAG_W_BIAS = 0x11
TAG_W_PROJ = 0x12
TAG_W_CLASS_PROJ = 0x13
TAG_W_DUSTBIN = 0x14

_HEADER = struct.Struct("<4sHH")
_SECTION = struct.Struct("<IQ")


def _f32(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("tensor", "non-finite values rejected at serialization")
    return arr.tobytes()


def _write_sections(sink, sections):
    sections = sorted(sections, key=lambda kv: kv[0])
    total = sink.write(_HEADER.pack(MAGIC, VERSION, len(sections)))
    for tag, payload in sections:
        total += sink.write(_SECTION.pack(tag, len(payload)))
        total += sink.write(payload)
    return total


def _read_sections(source):
    head = source.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ContainerError("truncated header")
    magic, version, count = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ContainerError("bad magic")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    sections = {}
    for _ in range(count):
        sh = source.read(_SECTION.size)
        if len(sh) < _SECTION.size:
            raise ContainerError("truncated section header")
        tag, length = _SECTION.unpack(sh)
        payload = source.read(length)
        if len(payload) < length:
            raise ContainerError(f"truncated section 0x{tag:02x}")
        sections[tag] = payload
    return sections


def _tensor(payload, shape, tag):
    arr = np.frombuffer(payload, dtype="<f4")
    want = int(np.prod(shape))
    if arr.size != want:
        raise ContainerError(f"section 0x{tag:02x}: {arr.size} floats, expected {want}")
    return arr.reshape(shape).copy()


def write_record(record, sink):
    """Serialize an ImageRecord; returns the byte count written."""
    record.validate()
    meta = {"image_id": record.image_id}
    if record.geotag is not None:
        meta["geotag"] = [float(record.geotag[0]), float(record.geotag[1])]
    else:
        meta["frame"] = int(record.frame_index)
    if record.patch_grid is not None:
        meta["h_p"] = record.patch_grid.height_p
        meta["w_p"] = record.patch_grid.width_p
        meta["d"] = record.patch_grid.dim
    elif record.mask is not None:
        meta["h_p"], meta["w_p"] = record.mask.values.shape
    elif record.assignment is not None:
        meta["h_p"], meta["w_p"] = record.assignment.mask_a.shape
    if record.assignment is not None:
        meta["m"] = record.assignment.probs.shape[1] - 1
    if record.reliability is not None:
        meta["r_h"] = record.reliability.height
        meta["r_w"] = record.reliability.width
    if record.local_features is not None:
        meta["l_h"] = record.local_features.grid_h
        meta["l_w"] = record.local_features.grid_w
        meta["l_dim"] = int(record.local_features.descriptors.shape[1]) \
            if record.local_features.count else 128
    if record.mask is not None:
        meta["top_fraction"] = float(record.mask.top_fraction)
    if record.flags:
        meta["flags"] = sorted(record.flags)

    sections = [(TAG_META, json.dumps(meta, sort_keys=True,
                                      separators=(",", ":")).encode("utf-8"))]
    if record.patch_grid is not None:
        sections.append((TAG_TOKENS, _f32(record.patch_grid.tokens)))
    if record.class_token is not None:
        sections.append((TAG_CLASS_TOKEN, _f32(record.class_token.values)))
    if record.assignment is not None:
        sections.append((TAG_ASSIGN_PROBS, _f32(record.assignment.probs)))
        sections.append((TAG_SALIENCE, _f32(record.assignment.mask_a)))
    if record.reliability is not None:
        sections.append((TAG_RELIABILITY, _f32(record.reliability.values)))
    if record.global_descriptor is not None:
        sections.append((TAG_GLOBAL_DESC, _f32(record.global_descriptor.values)))
    if record.local_features is not None:
        loc = record.local_features
        pos = np.ascontiguousarray(loc.positions, dtype="<u2")
        sections.append((TAG_LOCAL_POS, pos.tobytes()))
        sections.append((TAG_LOCAL_DESC, _f32(loc.descriptors)))
        sections.append((TAG_LOCAL_REL, _f32(loc.reliability)))
    if record.mask is not None:
        sections.append((TAG_FUSED_MASK, _f32(record.mask.values)))
    return _write_sections(sink, sections)


def read_record(source):
    """Parse an ImageRecord, validating all type invariants on load."""
    sections = _read_sections(source)
    if TAG_META not in sections:
        raise ContainerError("missing meta section")
    try:
        meta = json.loads(sections[TAG_META].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"bad meta JSON: {exc}") from exc

    record = ImageRecord(image_id=meta.get("image_id", ""))
    if "geotag" in meta:
        record.geotag = (float(meta["geotag"][0]), float(meta["geotag"][1]))
    if "frame" in meta:
        record.frame_index = int(meta["frame"])
    record.flags = list(meta.get("flags", []))

    h_p, w_p = meta.get("h_p"), meta.get("w_p")
    if TAG_TOKENS in sections:
        d = meta["d"]
        record.patch_grid = PatchGrid(h_p, w_p, d,
                                      _tensor(sections[TAG_TOKENS], (h_p, w_p, d),
                                              TAG_TOKENS))
    if TAG_CLASS_TOKEN in sections:
        record.class_token = ClassToken(
            np.frombuffer(sections[TAG_CLASS_TOKEN], dtype="<f4").copy())
    if TAG_ASSIGN_PROBS in sections:
        m = meta["m"]
        n = h_p * w_p
        probs = _tensor(sections[TAG_ASSIGN_PROBS], (n, m + 1), TAG_ASSIGN_PROBS)
        mask_a = _tensor(sections[TAG_SALIENCE], (h_p, w_p), TAG_SALIENCE) \
            if TAG_SALIENCE in sections else (1.0 - probs[:, -1]).reshape(h_p, w_p)
        record.assignment = AssignmentResult(probs=probs,
                                             salience=probs[:, :-1].sum(axis=1),
                                             mask_a=mask_a)
    if TAG_RELIABILITY in sections:
        record.reliability = ReliabilityMap(
            _tensor(sections[TAG_RELIABILITY], (meta["r_h"], meta["r_w"]),
                    TAG_RELIABILITY))
    if TAG_GLOBAL_DESC in sections:
        record.global_descriptor = GlobalDescriptor(
            np.frombuffer(sections[TAG_GLOBAL_DESC], dtype="<f4").copy())
    if TAG_LOCAL_DESC in sections:
        pos = np.frombuffer(sections[TAG_LOCAL_POS], dtype="<u2")
        pos = pos.reshape(-1, 2).astype(np.int64)
        l_dim = meta.get("l_dim", 128)
        desc = np.frombuffer(sections[TAG_LOCAL_DESC], dtype="<f4")
        desc = desc.reshape(pos.shape[0], l_dim).copy() if pos.shape[0] else \
            desc.reshape(0, l_dim).copy()
        rel = np.frombuffer(sections[TAG_LOCAL_REL], dtype="<f4").copy()
        record.local_features = LocalFeatureSet(positions=pos, descriptors=desc,
                                                reliability=rel,
                                                grid_h=meta["l_h"],
                                                grid_w=meta["l_w"])
    if TAG_FUSED_MASK in sections:
        record.mask = DiscriminativeMask(
            values=_tensor(sections[TAG_FUSED_MASK], (h_p, w_p), TAG_FUSED_MASK),
            top_fraction=meta.get("top_fraction", 1.0))
    record.validate()
    return record


def write_record_file(record, path):
    with open(path, "wb") as fh:
        return write_record(record, fh)


def read_record_file(path):
    with open(path, "rb") as fh:
        return read_record(fh)


def save_cluster_params(params, path):
    """Weights file: same container, tags 0x10-0x14 plus a meta section."""
    params.validate()
    meta = {"m": params.n_clusters, "d": params.weights.shape[1],
            "l": params.reduced_dim, "g": params.class_dim}
    sections = [
        (TAG_META, json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()),
        (TAG_W_CLUSTER, _f32(params.weights)),
        (TAG_W_BIAS, _f32(params.biases)),
        (TAG_W_PROJ, _f32(params.projection)),
        (TAG_W_DUSTBIN, _f32(np.asarray([params.dustbin_score]))),
    ]
    if params.class_projection is not None:
        sections.append((TAG_W_CLASS_PROJ, _f32(params.class_projection)))
    meta["sinkhorn_iters"] = params.sinkhorn_iters
    sections[0] = (TAG_META, json.dumps(meta, sort_keys=True,
                                        separators=(",", ":")).encode())
    with open(path, "wb") as fh:
        return _write_sections(fh, sections)


def load_cluster_params(path):
    with open(path, "rb") as fh:
        sections = _read_sections(fh)
    meta = json.loads(sections[TAG_META].decode("utf-8"))
    m, d, l, g = meta["m"], meta["d"], meta["l"], meta["g"]
    params = ClusterParams(
        weights=_tensor(sections[TAG_W_CLUSTER], (m, d), TAG_W_CLUSTER),
        biases=_tensor(sections[TAG_W_BIAS], (m,), TAG_W_BIAS),
        dustbin_score=float(_tensor(sections[TAG_W_DUSTBIN], (1,), TAG_W_DUSTBIN)[0]),
        sinkhorn_iters=int(meta.get("sinkhorn_iters", 3)),
        projection=_tensor(sections[TAG_W_PROJ], (d, l), TAG_W_PROJ),
        class_projection=_tensor(sections[TAG_W_CLASS_PROJ], (d, g),
                                 TAG_W_CLASS_PROJ)
        if TAG_W_CLASS_PROJ in sections else None,
        class_dim=g,
    )
    params.validate()
    return params


def write_manifest(entries, path):
    """Index manifest: one ``id<TAB>lat<TAB>lon<TAB>path`` or ``id<TAB>frame<TAB>path`` line per record."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write("\t".join(str(part) for part in entry) + "\n")


def read_manifest(path):
    """Returns (mode, entries); geographic entries are (id, lat, lon, path)."""
    entries = []
    mode = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 4:
                this_mode = "geographic"
                entry = (parts[0], float(parts[1]), float(parts[2]), parts[3])
            elif len(parts) == 3:
                this_mode = "sequential"
                entry = (parts[0], int(parts[1]), parts[2])
            else:
                raise ContainerError(f"manifest line {lineno}: expected 3 or 4 fields")
            if mode is None:
                mode = this_mode
            elif mode != this_mode:
                raise ContainerError(f"manifest line {lineno}: mixed modes")
            entries.append(entry)
    if mode is None:
        raise ContainerError("empty manifest")
    return mode, entries
