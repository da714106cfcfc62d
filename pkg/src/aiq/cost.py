"""Analytic FLOP and memory-traffic model, arithmetic intensity and roofline.

Counting rules:

* one multiply-accumulate is 2 FLOPs;
* weights are read once per batch at their scheme bit-width (packed INT4
  rounds up to whole bytes per tensor), biases always at 4 bytes/element;
* activations always move at 4 bytes/element.

Two traffic policies decide which activation traffic reaches DRAM.  Under
``"fused"`` (the default) only Conv2d/Linear layers move activations: the
elementwise, normalization and pooling layers between them are treated as
epilogues of their producer and contribute FLOPs but no bytes.  Under
``"unfused"`` every layer reads its full input and writes its full output.
"""

import csv
import enum
import json
import math
from dataclasses import dataclass

from .errors import ConfigInvalid, EmptyModel, LengthMismatch, ShapeMissing

TRAFFIC_POLICIES = ("fused", "unfused")


class BitWidth(enum.IntEnum):
    INT4 = 4
    INT8 = 8
    FP32 = 32

    @property
    def label(self):
        return "fp32" if self == BitWidth.FP32 else f"int{int(self)}"


DEFAULT_BITS = (BitWidth.FP32, BitWidth.INT8, BitWidth.INT4)


def parse_bits(value):
    """Accept 32/8/4, "fp32"/"int8"/"int4" or a BitWidth."""
    try:
        if isinstance(value, str):
            v = value.strip().lower()
            names = {"fp32": 32, "int8": 8, "int4": 4}
            value = names[v] if v in names else int(v)
        return BitWidth(int(value))
    except (TypeError, ValueError):
        raise ConfigInvalid(f"unsupported bit-width {value!r}; expected one of 32, 8, 4") from None


def validate_scheme(graph, scheme):
    """Return ``scheme`` as a tuple of BitWidth, checking its length."""
    n = graph.num_quantizable
    if n == 0:
        raise EmptyModel()
    bits = tuple(parse_bits(b) for b in scheme)
    if len(bits) != n:
        raise LengthMismatch(n, len(bits))
    return bits


def uniform_scheme(graph, bits):
    return (parse_bits(bits),) * graph.num_quantizable


def fp32_scheme(graph):
    return uniform_scheme(graph, 32)


@dataclass(frozen=True)
class LayerCost:
    layer_id: str
    kind: str
    flops: int
    weight_elements: int
    bias_elements: int
    act_in_bytes: int
    act_out_bytes: int

    @property
    def bias_bytes(self):
        return 4 * self.bias_elements

    def weight_bytes(self, bits=32):
        """Bytes of parameters read: packed weights plus FP32 bias."""
        return math.ceil(self.weight_elements * int(bits) / 8) + self.bias_bytes

    @property
    def act_bytes(self):
        return self.act_in_bytes + self.act_out_bytes

    def total_bytes(self, bits=32):
        return self.weight_bytes(bits) + self.act_bytes


def _numel(shape):
    return math.prod(shape)


def layer_cost(layer, batch=1):
    if layer.input_shape is None or layer.output_shape is None:
        raise ShapeMissing(f"layer {layer.id!r} has no inferred shapes")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    p = layer.params
    n_in = _numel(layer.input_shape) * batch
    n_out = _numel(layer.output_shape) * batch
    w_el = b_el = 0
    act_in, act_out = 4 * n_in, 4 * n_out
    kind = layer.kind
    if kind == "conv2d":
        _, ho, wo = layer.output_shape
        flops = 2 * p["kernel_h"] * p["kernel_w"] * (p["in_channels"] // p["groups"]) * p["out_channels"] * ho * wo * batch
        w_el = _numel(layer.weight.shape)
        b_el = layer.bias.size if layer.bias is not None else 0
    elif kind == "linear":
        flops = 2 * p["in_features"] * p["out_features"] * batch
        w_el = layer.weight.size
        b_el = layer.bias.size if layer.bias is not None else 0
    elif kind == "relu":
        flops = n_out
    elif kind == "add":
        flops = n_out
        act_in = 2 * 4 * n_in
    elif kind == "batchnorm2d":
        flops = 2 * n_out
    elif kind == "avgpool2d":
        flops = p["kernel"] * p["kernel"] * n_out
    elif kind == "global_avg_pool":
        flops = n_in
    elif kind == "flatten":
        flops, act_in, act_out = 0, 0, 0
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    return LayerCost(layer.id, kind, int(flops), int(w_el), int(b_el), int(act_in), int(act_out))


@dataclass(frozen=True)
class CostReport:
    layers: tuple  # LayerCost per graph layer
    bits: tuple  # bit-width applied to each graph layer (32 for non-quantizable)
    layer_bytes: tuple  # bytes counted per layer under the traffic policy
    batch: int
    traffic: str

    @property
    def global_flops(self):
        return sum(c.flops for c in self.layers)

    @property
    def global_bytes(self):
        return sum(self.layer_bytes)

    @property
    def ai(self):
        return self.global_flops / self.global_bytes

    def layer_ai(self, i):
        b = self.layer_bytes[i]
        return self.layers[i].flops / b if b else math.inf

    @property
    def weight_bytes(self):
        return sum(c.weight_bytes(b) for c, b in zip(self.layers, self.bits))


def global_ai(graph, scheme, batch=1, traffic="fused"):
    """Cost report for ``graph`` under ``scheme``; ``report.ai`` is AI(q)."""
    if traffic not in TRAFFIC_POLICIES:
        raise ValueError(f"traffic must be one of {TRAFFIC_POLICIES}")
    scheme = validate_scheme(graph, scheme)
    it = iter(scheme)
    costs, bits, counted = [], [], []
    for layer in graph.layers:
        c = layer_cost(layer, batch)
        b = next(it) if layer.quantizable else BitWidth.FP32
        costs.append(c)
        bits.append(b)
        if layer.quantizable or traffic == "unfused":
            counted.append(c.total_bytes(b))
        else:
            counted.append(0)
    return CostReport(tuple(costs), tuple(bits), tuple(counted), batch, traffic)


def arithmetic_intensity(graph, scheme, batch=1, traffic="fused"):
    return global_ai(graph, scheme, batch, traffic).ai


@dataclass(frozen=True)
class MachineModel:
    peak_flops: float
    mem_bandwidth: float

    def __post_init__(self):
        if not (self.peak_flops > 0 and self.mem_bandwidth > 0):
            raise ValueError("machine model values must be positive")

    @property
    def ridge_point(self):
        return self.peak_flops / self.mem_bandwidth

    def attainable(self, ai):
        return min(self.peak_flops, ai * self.mem_bandwidth)

    def to_json(self):
        return {"peak_flops": self.peak_flops, "mem_bandwidth_bytes_per_s": self.mem_bandwidth}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["peak_flops"]), float(obj["mem_bandwidth_bytes_per_s"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class RooflineResult:
    bound: tuple  # "memory-bound" / "compute-bound" per layer
    layer_attainable: tuple  # FLOP/s per layer
    attainable_flops: float
    images_per_s: float


def roofline_classify(report, machine):
    bound, att = [], []
    for i in range(len(report.layers)):
        ai = report.layer_ai(i)
        bound.append("memory-bound" if ai < machine.ridge_point else "compute-bound")
        att.append(machine.attainable(ai))
    model_att = machine.attainable(report.ai)
    per_image = report.global_flops / report.batch
    return RooflineResult(tuple(bound), tuple(att), model_att, model_att / per_image)


def write_cost_csv(path, report, machine=None):
    bound = roofline_classify(report, machine).bound if machine is not None else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer_id", "kind", "flops", "weight_bytes", "act_bytes", "ai", "bound"])
        for i, (c, b) in enumerate(zip(report.layers, report.bits)):
            counted = report.layer_bytes[i]
            wb = c.weight_bytes(b) if counted else 0
            ai = report.layer_ai(i)
            w.writerow([
                c.layer_id,
                c.kind,
                c.flops,
                wb,
                counted - wb,
                "inf" if math.isinf(ai) else repr(ai),
                bound[i] if bound else "",
            ])
