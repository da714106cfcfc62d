"""
Symmetric INT8/INT4 quantization and packed storage
===================================================

Quantize one tensor by hand, pack INT4 codes two per byte, round-trip a
whole model through the AIQW container, and check that the packed engine
path reproduces fake quantization exactly.

    python demos/02_quantize_and_pack.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from aiq import apply_scheme, dequantize, forward, load_packed_model, quantize, uniform_scheme
from aiq.fixtures import fixture_dataset, load_fixture
from aiq.graph import to_manifest
from aiq.container import write_container
from aiq.quantizer import pack_int4, quantized_tensors, unpack_int4

rng = np.random.default_rng(0)
w = rng.standard_normal(10).astype(np.float32)

# One scale per tensor: amax / qmax, codes clamped to [-qmax, qmax].
for bits in (8, 4):
    packed, params = quantize(w, bits)
    err = np.abs(dequantize(packed) - w).max()
    print(f"{bits}-bit scale {params.scale:.5f}  codes {packed.codes()}  max error {err:.4f} (<= scale/2)")

# INT4: even element in the low nibble, odd element in the high nibble.
codes = np.array([1, -2, 7, -7, 3], np.int8)
raw = pack_int4(codes)
print("packed bytes", [f"{b:02x}" for b in raw], "->", unpack_int4(raw, codes.size))

g = load_fixture("mini_resnet")
x = fixture_dataset("mini_resnet", "eval").images[:32]
q = uniform_scheme(g, 4)
fake = forward(apply_scheme(g, q, "fake"), x)
packed = forward(apply_scheme(g, q, "packed"), x)
print("packed == fake-quant logits:", np.array_equal(fake, packed))

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "m.json").write_text(json.dumps(to_manifest(g)))
    write_container(tmp / "m.aiqw", quantized_tensors(g, q))
    m = load_packed_model(tmp / "m.json", tmp / "m.aiqw")
    print("container size", (tmp / "m.aiqw").stat().st_size, "bytes;",
          "reloaded logits equal:", np.array_equal(forward(m, x), packed))
