"""VPRF container writer (exporter side).

Independent implementation of the shared binary format: magic ``VPRF``,
u16 version=1, u16 section count, then (u32 tag, u64 length, payload)
sections; tensors row-major float32 little-endian; tag 0x01 is sorted-key
JSON meta. Byte-for-byte compatible with the engine's reader.
"""
import json
import struct

import numpy as np

MAGIC = b"VPRF"
VERSION = 1

TAG_META = 0x01
TAG_TOKENS = 0x02
TAG_CLASS_TOKEN = 0x03
TAG_ASSIGN_PROBS = 0x04
TAG_SALIENCE = 0x05
TAG_RELIABILITY = 0x06

_HEADER = struct.Struct("<4sHH")
_SECTION = struct.Struct("<IQ")


def tensor_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to serialize non-finite tensor")
    return arr.tobytes()


def write_sections(sink, sections):
    sections = sorted(sections, key=lambda kv: kv[0])
    total = sink.write(_HEADER.pack(MAGIC, VERSION, len(sections)))
    for tag, payload in sections:
        total += sink.write(_SECTION.pack(tag, len(payload)))
        total += sink.write(payload)
    return total


def meta_bytes(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
