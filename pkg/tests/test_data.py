import gzip
import hashlib
import struct

import numpy as np
import pytest

from aiq.data import Dataset, load_dataset, save_aiqd, search_subset, synthetic_blobs
from aiq.errors import LabelOutOfRange, MalformedFile


def write_idx(tmp_path, n=10, h=28, compress=False):
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, (n, h, h), dtype=np.uint8)
    lab = rng.integers(0, 10, n, dtype=np.uint8)
    img = struct.pack(">IIII", 0x00000803, n, h, h) + px.tobytes()
    lbl = struct.pack(">II", 0x00000801, n) + lab.tobytes()
    opener = gzip.open if compress else open
    with opener(tmp_path / "img.idx", "wb") as fh:
        fh.write(img)
    with opener(tmp_path / "lbl.idx", "wb") as fh:
        fh.write(lbl)
    return px, lab


@pytest.mark.parametrize("compress", [False, True])
def test_idx(tmp_path, compress):
    px, lab = write_idx(tmp_path, compress=compress)
    d = load_dataset(tmp_path / "img.idx", "idx", tmp_path / "lbl.idx")
    assert len(d) == 10 and d.images.shape == (10, 1, 28, 28) and d.images.dtype == np.float32
    assert np.array_equal(d.labels, lab)
    assert np.array_equal(d.images[:, 0], px.astype(np.float32) / np.float32(255))
    n = load_dataset(tmp_path / "img.idx", "idx", tmp_path / "lbl.idx", mean=[0.5], std=[0.25])
    assert np.allclose(n.images, (d.images - 0.5) / 0.25)


def test_idx_errors(tmp_path):
    write_idx(tmp_path)
    raw = (tmp_path / "img.idx").read_bytes()
    (tmp_path / "trunc.idx").write_bytes(raw[:-5])
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path / "trunc.idx", "idx", tmp_path / "lbl.idx")
    with pytest.raises(MalformedFile):  # labels file given as images
        load_dataset(tmp_path / "lbl.idx", "idx", tmp_path / "lbl.idx")
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path / "img.idx", "idx")
    with pytest.raises(LabelOutOfRange):
        load_dataset(tmp_path / "img.idx", "idx", tmp_path / "lbl.idx", num_classes=2)


def test_aiqd_round_trip_and_errors(tmp_path):
    d = synthetic_blobs(40, seed=3, shape=(2, 6, 6), num_classes=4)
    save_aiqd(tmp_path / "d.aiqd", d)
    back = load_dataset(tmp_path / "d.aiqd")
    assert np.array_equal(back.images, d.images) and np.array_equal(back.labels, d.labels)
    raw = (tmp_path / "d.aiqd").read_bytes()
    assert raw[:4] == b"AIQD" and struct.unpack("<4I", raw[4:20]) == (40, 2, 6, 6)
    (tmp_path / "t.aiqd").write_bytes(raw[:-3])
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path / "t.aiqd")
    (tmp_path / "m.aiqd").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(MalformedFile):
        load_dataset(tmp_path / "m.aiqd")
    with pytest.raises(LabelOutOfRange):
        load_dataset(tmp_path / "d.aiqd", num_classes=2)


def test_synthetic_is_deterministic():
    a = synthetic_blobs(512, seed=7)
    b = synthetic_blobs(512, seed=7)
    digest = lambda d: hashlib.sha256(d.images.tobytes() + d.labels.tobytes()).hexdigest()  # noqa: E731
    assert digest(a) == digest(b)
    assert digest(a) != digest(synthetic_blobs(512, seed=8))
    assert a.images.shape == (512, 3, 16, 16) and set(np.unique(a.labels)) == set(range(10))


def test_dataset_validation():
    with pytest.raises(MalformedFile):
        Dataset(np.zeros((3, 1, 2, 2), np.float32), np.zeros(2, np.int64), 2)
    with pytest.raises(LabelOutOfRange):
        Dataset(np.zeros((2, 1, 2, 2), np.float32), np.array([0, 5]), 2)


def test_search_subset():
    s = search_subset(2000, 1000, 0)
    assert len(s) == 1000 == len(np.unique(s)) and (np.diff(s) > 0).all()
    assert np.array_equal(s, search_subset(2000, 1000, 0))
    assert not np.array_equal(s, search_subset(2000, 1000, 1))
    assert np.array_equal(search_subset(50, 1000), np.arange(50))
    assert np.array_equal(search_subset(50, None), np.arange(50))
