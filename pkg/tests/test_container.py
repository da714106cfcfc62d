import struct

import numpy as np
import pytest

from aiq.container import ALIGN, MAGIC, read_container, read_header, write_container
from aiq.errors import MalformedFile
from aiq.quantizer import PackedTensor, quantize


def sample_tensors():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    return {
        "a": rng.standard_normal((7,)).astype(np.float32),
        "b": rng.standard_normal((3, 11)).astype(np.float32),
        "q8": quantize(w, 8)[0],
        "q4": quantize(w, 4)[0],
    }


def test_layout_and_round_trip(tmp_path):
    t = sample_tensors()
    p = tmp_path / "x.aiqw"
    write_container(p, t)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC
    (hlen,) = struct.unpack("<I", raw[4:8])
    assert (8 + hlen) % ALIGN == 0
    header, base = read_header(p)
    assert list(header) == list(t)
    assert all(e["offset"] % ALIGN == 0 for e in header.values())
    assert header["q4"]["dtype"] == "i4p" and header["q4"]["nbytes"] == (135 + 1) // 2
    assert header["q8"]["dtype"] == "i8" and header["a"]["dtype"] == "f32"
    back = read_container(p)
    assert np.array_equal(back["a"], t["a"]) and back["b"].shape == (3, 11)
    for k in ("q8", "q4"):
        assert isinstance(back[k], PackedTensor)
        assert np.array_equal(back[k].codes(), t[k].codes())
        assert back[k].scale == t[k].scale
    write_container(tmp_path / "y.aiqw", back)
    assert (tmp_path / "y.aiqw").read_bytes() == raw


def test_rejects_non_float32(tmp_path):
    with pytest.raises(TypeError):
        write_container(tmp_path / "x.aiqw", {"a": np.zeros(3, np.float64)})


@pytest.mark.parametrize("mutate", ["magic", "truncate_header", "truncate_blob", "bad_json"])
def test_malformed(tmp_path, mutate):
    p = tmp_path / "x.aiqw"
    write_container(p, sample_tensors())
    raw = bytearray(p.read_bytes())
    if mutate == "magic":
        raw[:4] = b"NOPE"
    elif mutate == "truncate_header":
        raw = raw[:20]
    elif mutate == "truncate_blob":
        header, base = read_header(p)
        raw = raw[: base + header["q4"]["offset"] + 10]
    else:
        raw[8] = ord("#")
    p.write_bytes(bytes(raw))
    with pytest.raises(MalformedFile):
        read_container(p)
