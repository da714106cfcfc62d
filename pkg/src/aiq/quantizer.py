"""Symmetric per-tensor weight quantization and packed storage."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cost import BitWidth, validate_scheme

QRANGE = {8: 127, 4: 7}


@dataclass(frozen=True)
class QuantParams:
    scale: np.float32
    bits: int
    zero_point: int = 0

    @property
    def qmax(self):
        return QRANGE[self.bits]

    @property
    def qmin(self):
        return -QRANGE[self.bits]


@dataclass(frozen=True, eq=False)
class PackedTensor:
    """Low-precision weight storage.

    ``data`` holds one int8 code per element for 8 bits, or two's-complement
    nibbles packed two per byte (even element in the low nibble) for 4 bits.
    """

    bits: int
    data: np.ndarray
    scale: np.float32
    shape: tuple

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def nbytes(self):
        return int(self.data.size)

    @property
    def params(self):
        return QuantParams(np.float32(self.scale), self.bits)

    def codes(self):
        """Unpacked integer codes, shaped like the original tensor."""
        if self.bits == 8:
            return self.data.reshape(self.shape)
        out = np.empty(self.size, np.int8)
        kernels.unpack_int4(self.data, self.size, out)
        return out.reshape(self.shape)


def pack_int4(codes):
    codes = np.ascontiguousarray(codes, dtype=np.int8).reshape(-1)
    out = np.empty((codes.size + 1) // 2, np.uint8)
    kernels.pack_int4(codes, out)
    return out


def unpack_int4(packed, n):
    out = np.empty(n, np.int8)
    kernels.unpack_int4(np.ascontiguousarray(packed, dtype=np.uint8), n, out)
    return out


def quantize(weight, bits):
    """Quantize a float32 tensor to INT8 or INT4 codes.

    ``scale = max|w| / qmax`` (1 for an all-zero tensor) and codes are
    ``clamp(round(w / scale), -qmax, qmax)`` with ties rounded away from zero.
    Codes are computed in float64 against the exact scale; the stored scale is
    that value rounded to float32.
    """
    bits = int(bits)
    if bits not in QRANGE:
        raise ValueError(f"quantize supports 8 or 4 bits, got {bits}")
    w = np.ascontiguousarray(weight, dtype=np.float32)
    flat = w.reshape(-1)
    qmax = QRANGE[bits]
    amax = kernels.absmax(flat) if flat.size else 0.0
    codes = np.zeros(flat.size, np.int8)
    if amax > 0:
        scale = np.float32(amax / qmax)
        kernels.quantize_codes(flat, float(qmax), float(amax), codes)
    else:
        scale = np.float32(1.0)
    data = codes if bits == 8 else pack_int4(codes)
    packed = PackedTensor(bits=bits, data=data, scale=scale, shape=tuple(w.shape))
    return packed, packed.params


def dequantize(packed):
    """``code * scale`` in float32, shaped like the original tensor."""
    return (packed.codes().astype(np.float32) * np.float32(packed.scale)).reshape(packed.shape)


def fake_quantize(weight, bits):
    if int(bits) == 32:
        return weight
    return dequantize(quantize(weight, bits)[0])


# -- weight sources consumed by the inference engine --------------------------


def engine_order(arr):
    """Reorder a weight tensor to the engine's (out, fan_in) row layout.

    Conv kernels (out, in, kh, kw) become rows ordered (kh, kw, in) to match
    channels-last patches; linear weights are already (out, in).
    """
    if arr.ndim == 4:
        arr = arr.transpose(0, 2, 3, 1)
    return np.ascontiguousarray(arr).reshape(arr.shape[0], -1)


class DenseWeights:
    """Float32 weights viewed as an (out, fan_in) matrix."""

    bits = 32

    def __init__(self, weight):
        self.weight = np.asarray(weight, dtype=np.float32)
        self.shape = tuple(self.weight.shape)
        self.matrix = engine_order(self.weight)

    def matmul(self, x):
        o, k = self.matrix.shape
        return kernels.run_gemm(kernels.gemm_dense, x, (self.matrix,), o, k)

    def rows(self, r0, r1):
        return self.matrix[r0:r1], 4 * (r1 - r0) * self.matrix.shape[1]

    @property
    def nbytes(self):
        return self.matrix.size * 4


class PackedWeights:
    """Packed INT8/INT4 weights decoded tile by tile inside the GEMM."""

    def __init__(self, packed):
        self.packed = packed
        self.bits = packed.bits
        self.shape = tuple(packed.shape)
        self.out_rows = self.shape[0]
        self.fan_in = packed.size // self.out_rows
        reorder = len(self.shape) == 4 and self.shape[1] > 1
        if self.bits == 8:
            codes = engine_order(packed.data.reshape(self.shape)) if reorder else packed.data
            self.data = codes.reshape(self.out_rows, self.fan_in)
        else:
            self.data = pack_int4(engine_order(packed.codes())) if reorder else packed.data

    def matmul(self, x):
        o, k = self.out_rows, self.fan_in
        if self.bits == 8:
            return kernels.run_gemm(kernels.gemm_int8, x, (self.data, self.packed.scale), o, k)
        return kernels.run_gemm(kernels.gemm_int4, x, (self.data, self.packed.scale, k), o, k)

    def rows(self, r0, r1):
        k = self.fan_in
        if self.bits == 8:
            tile = self.data[r0:r1].astype(np.float32) * np.float32(self.packed.scale)
            return tile, (r1 - r0) * k
        tile = kernels.dequant_int4_rows(self.data, self.packed.scale, r0, r1, k)
        a, b = r0 * k, r1 * k
        return tile, (b + 1) // 2 - (a + 1) // 2

    @property
    def nbytes(self):
        return self.packed.nbytes


@dataclass(frozen=True, eq=False)
class QuantizedModel:
    """A graph plus one weight source per layer that owns weights.

    ``sources`` maps graph layer index -> DenseWeights/PackedWeights.  The
    underlying graph is never modified.
    """

    graph: object
    scheme: tuple
    sources: dict
    storage: str

    def effective_weight(self, index):
        src = self.sources[index]
        if isinstance(src, DenseWeights):
            return src.weight
        return dequantize(src.packed)


class QuantCache:
    """Memo of per-layer weight sources keyed by (layer index, bits).

    Entries are immutable and recomputing one yields an identical value, so
    concurrent readers/writers need no lock.
    """

    def __init__(self):
        self._packed = {}
        self._dense = {}

    def packed(self, graph, index, bits):
        key = (index, int(bits))
        hit = self._packed.get(key)
        if hit is None:
            hit = quantize(graph.layers[index].weight, bits)[0]
            self._packed[key] = hit
        return hit

    def dense(self, graph, index, bits):
        key = (index, int(bits))
        hit = self._dense.get(key)
        if hit is None:
            if int(bits) == 32:
                hit = DenseWeights(graph.layers[index].weight)
            else:
                hit = DenseWeights(dequantize(self.packed(graph, index, bits)))
            self._dense[key] = hit
        return hit


def apply_scheme(graph, scheme, storage="fake", cache=None):
    """Model view with each quantizable layer's weights at its scheme width.

    ``storage="fake"`` keeps dequantized float32 copies (quantize then
    dequantize); ``storage="packed"`` keeps the low-precision codes and
    decodes them on the fly.  Both produce identical numerics.  FP32 layers
    reference the original weights.
    """
    if storage not in ("fake", "packed"):
        raise ValueError("storage must be 'fake' or 'packed'")
    scheme = validate_scheme(graph, scheme)
    sources = {}
    it = iter(scheme)
    for i, layer in enumerate(graph.layers):
        if not layer.quantizable:
            continue
        b = next(it)
        if b == BitWidth.FP32:
            sources[i] = cache.dense(graph, i, b) if cache else DenseWeights(layer.weight)
        elif storage == "fake":
            sources[i] = cache.dense(graph, i, b) if cache else DenseWeights(dequantize(quantize(layer.weight, b)[0]))
        else:
            sources[i] = PackedWeights(cache.packed(graph, i, b) if cache else quantize(layer.weight, b)[0])
    return QuantizedModel(graph=graph, scheme=scheme, sources=sources, storage=storage)


def quantized_tensors(graph, scheme):
    """Container id -> array/PackedTensor for saving a packed model."""
    model = apply_scheme(graph, scheme, storage="packed")
    out = {}
    for i, layer in enumerate(graph.layers):
        for role, tid in layer.tensor_ids.items():
            if role == "weight" and layer.quantizable and isinstance(model.sources[i], PackedWeights):
                out[tid] = model.sources[i].packed
            else:
                out[tid] = layer.tensors[role]
    return out


def load_packed_model(graph_manifest_path, weights_path):
    """Load a manifest whose container stores some weights as i8/i4p."""
    import json

    from .container import read_container
    from .graph import build_graph

    with open(graph_manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = read_container(weights_path)
    floats, packed = {}, {}
    for tid, value in raw.items():
        if isinstance(value, PackedTensor):
            packed[tid] = value
            floats[tid] = dequantize(value)
        else:
            floats[tid] = value
    graph = build_graph(manifest, floats)
    scheme, sources = [], {}
    for i, layer in enumerate(graph.layers):
        if not layer.quantizable:
            continue
        tid = layer.tensor_ids["weight"]
        if tid in packed:
            scheme.append(BitWidth(packed[tid].bits))
            sources[i] = PackedWeights(packed[tid])
        else:
            scheme.append(BitWidth.FP32)
            sources[i] = DenseWeights(layer.weight)
    return QuantizedModel(graph=graph, scheme=tuple(scheme), sources=sources, storage="packed")
