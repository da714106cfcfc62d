"""AIQW weight container.

Layout::

    b"AIQW" | u32 LE header length | JSON header (space padded) | blobs

The blob section starts on a 64-byte boundary and every blob offset (relative
to the start of the blob section) is a multiple of 64.  The header maps
tensor id -> {"offset", "nbytes", "shape", "dtype"} and, for packed dtypes,
"scale".  Supported dtypes: ``f32`` (little-endian float32), ``i8`` (one
signed code per byte) and ``i4p`` (two signed 4-bit codes per byte, low nibble
holds the even element).
"""

import json
import math
import struct

import numpy as np

from .errors import MalformedFile

MAGIC = b"AIQW"
ALIGN = 64

_F32 = np.dtype("<f4")


def _align(n):
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _payload(value):
    """Return (dtype tag, logical shape, raw byte array, scale or None)."""
    from .quantizer import PackedTensor

    if isinstance(value, PackedTensor):
        tag = "i8" if value.bits == 8 else "i4p"
        return tag, value.shape, np.ascontiguousarray(value.data).view(np.uint8), float(value.scale)
    arr = np.asarray(value)
    if arr.dtype != np.float32:
        raise TypeError(f"only float32 tensors can be stored unpacked, got {arr.dtype}")
    return "f32", arr.shape, np.ascontiguousarray(arr, dtype=_F32).reshape(-1).view(np.uint8), None


def write_container(path, tensors):
    """Write ``tensors`` (id -> float32 array or PackedTensor) to ``path``.

    Entries are laid out in mapping order, so the output is a pure function of
    the input and rewriting a loaded container reproduces it byte for byte.
    """
    header = {}
    blobs = []
    offset = 0
    for tid, value in tensors.items():
        tag, shape, raw, scale = _payload(value)
        entry = {"offset": offset, "nbytes": int(raw.size), "shape": [int(d) for d in shape], "dtype": tag}
        if scale is not None:
            entry["scale"] = scale
        header[tid] = entry
        blobs.append(raw)
        offset = _align(offset + raw.size)
    text = json.dumps(header, separators=(",", ":")).encode("utf-8")
    hlen = _align(8 + len(text)) - 8
    text = text + b" " * (hlen - len(text))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", hlen))
        fh.write(text)
        pos = 0
        for raw in blobs:
            fh.write(raw.tobytes())
            pos += raw.size
            pad = _align(pos) - pos
            fh.write(b"\0" * pad)
            pos += pad


def read_header(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] != MAGIC:
            raise MalformedFile(f"{path}: not an AIQW container")
        (hlen,) = struct.unpack("<I", head[4:])
        text = fh.read(hlen)
        if len(text) != hlen:
            raise MalformedFile(f"{path}: truncated header")
    try:
        header = json.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"{path}: bad header ({exc})") from None
    if not isinstance(header, dict):
        raise MalformedFile(f"{path}: header must be a JSON object")
    return header, 8 + hlen


def read_container(path):
    """Read every tensor from ``path``; returns an ordered dict-like mapping."""
    from .quantizer import PackedTensor

    header, base = read_header(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    out = {}
    for tid, entry in header.items():
        try:
            tag = entry["dtype"]
            shape = tuple(int(d) for d in entry["shape"])
            start = base + int(entry["offset"])
            nbytes = int(entry.get("nbytes", 0))
        except (KeyError, TypeError, ValueError):
            raise MalformedFile(f"{path}: bad header entry for {tid!r}") from None
        count = math.prod(shape)
        if tag == "f32":
            need = 4 * count
        elif tag == "i8":
            need = count
        elif tag == "i4p":
            need = (count + 1) // 2
        else:
            raise MalformedFile(f"{path}: unknown dtype {tag!r} for {tid!r}")
        if nbytes and nbytes != need:
            raise MalformedFile(f"{path}: {tid!r} declares {nbytes} bytes, shape needs {need}")
        if start + need > len(blob):
            raise MalformedFile(f"{path}: blob for {tid!r} runs past end of file")
        raw = np.frombuffer(blob, dtype=np.uint8, count=need, offset=start)
        if tag == "f32":
            out[tid] = raw.view(_F32).astype(np.float32).reshape(shape)
        else:
            bits = 8 if tag == "i8" else 4
            data = raw.view(np.int8).copy() if bits == 8 else raw.copy()
            out[tid] = PackedTensor(bits=bits, data=data, scale=np.float32(entry["scale"]), shape=shape)
    return out
