import json
import os
import struct

import numpy as np
import pytest
import torch

from vprf_extractor.backbone import (BackboneConfig, ReliabilityHead, ViT,
                                     build_backbone, pick_taps)
from vprf_extractor.export import Exporter, preprocess, read_input_manifest


def read_sections(path):
    with open(path, "rb") as fh:
        magic, version, count = struct.unpack("<4sHH", fh.read(8))
        assert magic == b"VPRF" and version == 1
        sections = {}
        for _ in range(count):
            tag, length = struct.unpack("<IQ", fh.read(12))
            sections[tag] = fh.read(length)
    return sections


def test_preprocess_dims(image_dir):
    tensor = preprocess(str(image_dir / "img0.png"), 322)
    assert tensor.shape == (3, 322, 322)  # 322 is already a patch multiple
    tensor = preprocess(str(image_dir / "img0.png"), 100)
    assert tensor.shape == (3, 112, 112)  # padded up to 8 * 14


def test_tiny_export_sections(manifest, image_dir, tmp_path):
    exporter = Exporter(backbone="tiny", resolution=112, deterministic=True)
    entries = read_input_manifest(manifest)
    rows, failures = exporter.export(entries, str(tmp_path / "out"))
    assert not failures
    assert len(rows) == 3
    sections = read_sections(tmp_path / "out" / "img0.vprf")
    meta = json.loads(sections[0x01])
    assert meta["h_p"] == meta["w_p"] == 8  # 112 / 14
    assert meta["r_h"] == meta["r_w"] == 14  # 112 / 8
    assert "reliability:fallback" in meta["flags"]
    tokens = np.frombuffer(sections[0x02], dtype="<f4")
    assert tokens.size == 8 * 8 * 32
    rel = np.frombuffer(sections[0x06], dtype="<f4")
    assert rel.size == 14 * 14 and np.all(rel == 1.0)


def test_export_deterministic(manifest, tmp_path):
    entries = read_input_manifest(manifest)[:1]
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    Exporter(backbone="tiny", resolution=112, seed=3,
             deterministic=True).export(entries, out_a)
    Exporter(backbone="tiny", resolution=112, seed=3,
             deterministic=True).export(entries, out_b)
    a = open(os.path.join(out_a, "img0.vprf"), "rb").read()
    b = open(os.path.join(out_b, "img0.vprf"), "rb").read()
    assert a == b


def test_unreadable_image_reported(tmp_path):
    bad = tmp_path / "input.tsv"
    bad.write_text("ghost\t45.0\t7.0\t/nonexistent/ghost.png\n")
    exporter = Exporter(backbone="tiny", resolution=112)
    rows, failures = exporter.export(read_input_manifest(bad),
                                     str(tmp_path / "out"))
    assert rows == []
    assert len(failures) == 1
    assert "ghost" in failures[0][0]


def test_backbone_checkpoint_roundtrip(manifest, tmp_path):
    config = BackboneConfig(name="tiny", seed=9)
    model = build_backbone(config)
    ckpt = tmp_path / "backbone.pt"
    torch.save(model.state_dict(), ckpt)
    entries = read_input_manifest(manifest)[:1]
    out_a = Exporter(backbone="tiny", resolution=112, seed=9,
                     deterministic=True)
    out_b = Exporter(backbone="tiny", resolution=112, checkpoint=str(ckpt),
                     seed=123, deterministic=True)  # seed ignored with weights
    out_a.export(entries, str(tmp_path / "a"))
    out_b.export(entries, str(tmp_path / "b"))
    ta = read_sections(tmp_path / "a" / "img0.vprf")[0x02]
    tb = read_sections(tmp_path / "b" / "img0.vprf")[0x02]
    assert ta == tb
    # a checkpointed backbone drops the random-init flag
    meta = json.loads(read_sections(tmp_path / "b" / "img0.vprf")[0x01])
    assert "backbone:random-init" not in meta.get("flags", [])


def test_reb_checkpoint_produces_probabilities(manifest, tmp_path):
    torch.manual_seed(5)
    head = ReliabilityHead(32)
    ckpt = tmp_path / "reb.pt"
    torch.save(head.state_dict(), ckpt)
    exporter = Exporter(backbone="tiny", resolution=112,
                        reb_checkpoint=str(ckpt), deterministic=True)
    entries = read_input_manifest(manifest)[:1]
    exporter.export(entries, str(tmp_path / "out"))
    sections = read_sections(tmp_path / "out" / "img0.vprf")
    meta = json.loads(sections[0x01])
    assert "reliability:fallback" not in meta.get("flags", [])
    rel = np.frombuffer(sections[0x06], dtype="<f4").reshape(14, 14)
    assert np.all(rel >= 0.0) and np.all(rel <= 1.0)
    assert rel.std() > 0  # an actual regression, not the uniform fallback


def test_pick_taps():
    assert pick_taps(12) == [3, 7, 11]
    assert pick_taps(2) == [0, 1, 1]
    assert pick_taps(24) == [7, 15, 23]


def test_cli_end_to_end(manifest, tmp_path, capsys):
    from vprf_extractor.cli import main
    out = str(tmp_path / "feats")
    code = main(["--manifest", str(manifest), "--backbone", "tiny",
                 "--resolution", "112", "--deterministic", "--out", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "manifest.tsv"))
    assert "exported 3 records" in capsys.readouterr().out


def test_cli_reports_failures(tmp_path, capsys):
    from vprf_extractor.cli import main
    bad = tmp_path / "bad.tsv"
    bad.write_text("ok\t45.0\t7.0\tmissing.png\n")
    code = main(["--manifest", str(bad), "--backbone", "tiny",
                 "--resolution", "112", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "FAILED" in capsys.readouterr().err
