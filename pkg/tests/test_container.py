import io

import numpy as np
import pytest

from regionvpr import container
from regionvpr.synth import gen_cluster_scene, gen_geo_index
from regionvpr.types import (ClusterParams, ContainerError, GlobalDescriptor,
                             ImageRecord, PatchGrid, ReliabilityMap,
                             ValidationError)


def roundtrip(record):
    buf = io.BytesIO()
    n = container.write_record(record, buf)
    assert n == len(buf.getvalue())
    buf.seek(0)
    return container.read_record(buf)


def assert_records_equal(a, b):
    assert a.image_id == b.image_id
    assert a.geotag == b.geotag
    assert a.frame_index == b.frame_index
    pairs = [
        (a.patch_grid, b.patch_grid, lambda r: r.tokens),
        (a.class_token, b.class_token, lambda r: r.values),
        (a.assignment, b.assignment, lambda r: r.probs),
        (a.reliability, b.reliability, lambda r: r.values),
        (a.global_descriptor, b.global_descriptor, lambda r: r.values),
        (a.mask, b.mask, lambda r: r.values),
    ]
    for left, right, getter in pairs:
        assert (left is None) == (right is None)
        if left is not None:
            # container stores f32; bit-exact after one write/read cycle
            assert np.array_equal(np.asarray(getter(left), dtype=np.float32),
                                  np.asarray(getter(right), dtype=np.float32))
    assert (a.local_features is None) == (b.local_features is None)
    if a.local_features is not None:
        assert np.array_equal(a.local_features.positions, b.local_features.positions)
        assert np.array_equal(a.local_features.descriptors, b.local_features.descriptors)
        assert np.array_equal(a.local_features.reliability, b.local_features.reliability)


def minimal_record():
    tokens = np.asarray([[[0.1, -0.2, 0.3, 4.0]]], dtype=np.float32)
    vec = np.zeros(4, dtype=np.float32)
    vec[0] = 1.0
    return ImageRecord(image_id="one", frame_index=3,
                       patch_grid=PatchGrid(1, 1, 4, tokens),
                       global_descriptor=GlobalDescriptor(vec))


def test_smallest_grid_roundtrip():
    rec = minimal_record()
    buf = io.BytesIO()
    container.write_record(rec, buf)
    raw = buf.getvalue()
    assert raw[:4] == b"VPRF"
    # 1x1x4 token section payload is exactly 16 bytes
    buf.seek(0)
    sections = container._read_sections(buf)
    assert len(sections[container.TAG_TOKENS]) == 16
    buf.seek(0)
    back = container.read_record(buf)
    assert_records_equal(rec, back)


def test_roundtrip_full_record(scene):
    anchor, positive, _ = scene
    for rec in (anchor, positive):
        assert_records_equal(rec, roundtrip(rec))


def test_write_is_deterministic(scene):
    anchor, _, _ = scene
    a, b = io.BytesIO(), io.BytesIO()
    container.write_record(anchor, a)
    container.write_record(anchor, b)
    assert a.getvalue() == b.getvalue()


def test_global_descriptor_section_length():
    # 23x23 grid, D=768, l=128, M=64, g=256 -> descriptor of 64*128+256 floats
    m, l, g = 64, 128, 256
    rng = np.random.default_rng(0)
    vec = rng.standard_normal(m * l + g).astype(np.float32)
    vec /= np.linalg.norm(vec)
    rec = ImageRecord(image_id="dims", frame_index=0,
                      global_descriptor=GlobalDescriptor(vec))
    buf = io.BytesIO()
    container.write_record(rec, buf)
    buf.seek(0)
    sections = container._read_sections(buf)
    assert len(sections[container.TAG_GLOBAL_DESC]) == 4 * (64 * 128 + 256)


def test_bad_magic():
    rec = minimal_record()
    buf = io.BytesIO()
    container.write_record(rec, buf)
    raw = bytearray(buf.getvalue())
    raw[:4] = b"NOPE"
    with pytest.raises(ContainerError, match="bad magic"):
        container.read_record(io.BytesIO(bytes(raw)))


def test_bad_version():
    rec = minimal_record()
    buf = io.BytesIO()
    container.write_record(rec, buf)
    raw = bytearray(buf.getvalue())
    raw[4] = 99
    with pytest.raises(ContainerError, match="version"):
        container.read_record(io.BytesIO(bytes(raw)))


def test_truncated_section():
    rec = minimal_record()
    buf = io.BytesIO()
    container.write_record(rec, buf)
    raw = buf.getvalue()[:-4]
    with pytest.raises(ContainerError, match="truncated"):
        container.read_record(io.BytesIO(raw))


def test_out_of_range_reliability_rejected_on_read(scene):
    anchor, _, _ = scene
    buf = io.BytesIO()
    container.write_record(anchor, buf)
    raw = bytearray(buf.getvalue())
    # locate the reliability payload and poison one float with 1.5
    buf.seek(0)
    sections = container._read_sections(io.BytesIO(bytes(raw)))
    payload = sections[container.TAG_RELIABILITY]
    idx = raw.find(payload)
    raw[idx:idx + 4] = np.asarray([1.5], dtype="<f4").tobytes()
    with pytest.raises(ValidationError, match="reliability"):
        container.read_record(io.BytesIO(bytes(raw)))


def test_nonfinite_rejected_on_write():
    rec = minimal_record()
    rec.patch_grid.tokens[0, 0, 0] = np.nan
    with pytest.raises(ValidationError):
        container.write_record(rec, io.BytesIO())


def test_roundtrip_randomized_records():
    # property: read(write(r)) == r bit-exactly for varied synthetic records
    for seed in range(8):
        anchor, positive, _ = gen_cluster_scene(seed=seed, n_clusters=3,
                                                grid=(3, 4), noise_sigma=0.02)
        assert_records_equal(anchor, roundtrip(anchor))
        assert_records_equal(positive, roundtrip(positive))
    db, _ = gen_geo_index(seed=3, size=6)
    for rec in db.entries:
        assert_records_equal(rec, roundtrip(rec))


def test_weights_file_roundtrip(rng):
    m, d, l, g = 5, 16, 8, 6
    params = ClusterParams(
        weights=rng.standard_normal((m, d)).astype(np.float32),
        biases=rng.standard_normal(m).astype(np.float32),
        dustbin_score=0.25,
        sinkhorn_iters=4,
        projection=rng.standard_normal((d, l)).astype(np.float32),
        class_projection=rng.standard_normal((d, g)).astype(np.float32),
        class_dim=g,
    )
    import tempfile, os
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "weights.vprf")
        container.save_cluster_params(params, path)
        back = container.load_cluster_params(path)
    assert np.array_equal(back.weights, params.weights)
    assert np.array_equal(back.biases, params.biases)
    assert np.array_equal(back.projection, params.projection)
    assert np.array_equal(back.class_projection, params.class_projection)
    assert back.dustbin_score == pytest.approx(0.25)
    assert back.sinkhorn_iters == 4


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "m.tsv"
    container.write_manifest([("a", 45.0, 7.0, "a.vprf"), ("b", 45.1, 7.1, "b.vprf")],
                             path)
    mode, entries = container.read_manifest(path)
    assert mode == "geographic"
    assert entries[0] == ("a", 45.0, 7.0, "a.vprf")

    path2 = tmp_path / "seq.tsv"
    container.write_manifest([("a", 1, "a.vprf")], path2)
    mode, entries = container.read_manifest(path2)
    assert mode == "sequential"
    assert entries[0] == ("a", 1, "a.vprf")

    bad = tmp_path / "bad.tsv"
    bad.write_text("a\t1\ta.vprf\nb\t45.0\t7.0\tb.vprf\n")
    with pytest.raises(ContainerError, match="mixed"):
        container.read_manifest(bad)
