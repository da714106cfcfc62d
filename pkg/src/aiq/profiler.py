"""Layerwise quantization sensitivity and scheme-structure statistics.

Sign convention: ``delta = acc_fp32 - acc_quantized`` in percentage points,
so a positive delta is an accuracy *loss* and a negative one a gain.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .cost import BitWidth, parse_bits, validate_scheme


@dataclass(frozen=True)
class SensitivityRow:
    layer_id: str
    delta_acc_int8: float
    delta_acc_int4: float
    ai_int8: float
    ai_int4: float
    final_bits: int | None = None


@dataclass(frozen=True)
class ProbeRow:
    """One single-layer probe: layer i alone at ``bits``."""

    index: int
    layer_id: str
    bits: int
    ai: float
    accuracy: float
    delta_pp: float


def single_layer_scheme(n, i, bits):
    s = [BitWidth.FP32] * n
    s[i] = BitWidth(bits)
    return tuple(s)


def layerwise_profile(evaluator, bits):
    """Quantize one layer at a time to ``bits`` and record (AI, accuracy).

    Uses L accuracy evaluations plus the FP32 baseline; FP32 probes share
    the baseline's cached result.
    """
    bits = parse_bits(bits)
    g = evaluator.graph
    base = evaluator.baseline_accuracy
    rows = []
    for i, li in enumerate(g.quantizable_indices):
        scheme = single_layer_scheme(evaluator.n, i, bits)
        acc = evaluator.accuracy(scheme)
        rows.append(ProbeRow(i, g.layers[li].id, int(bits), evaluator.ai(scheme), acc, 100.0 * (base - acc)))
    return rows


def sensitivity_table(evaluator, final_scheme=None):
    """INT8 and INT4 single-layer probes merged into one row per layer."""
    p8 = layerwise_profile(evaluator, 8)
    p4 = layerwise_profile(evaluator, 4)
    if final_scheme is not None:
        final_scheme = validate_scheme(evaluator.graph, final_scheme)
    rows = []
    for k, (a, b) in enumerate(zip(p8, p4)):
        rows.append(SensitivityRow(a.layer_id, a.delta_pp, b.delta_pp, a.ai, b.ai,
                                   None if final_scheme is None else int(final_scheme[k])))
    return rows


def write_sensitivity_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "delta_8b", "delta_4b", "final_bits", "ai_8b", "ai_4b"])
        for r in rows:
            w.writerow([r.layer_id, f"{r.delta_acc_int8:.4f}", f"{r.delta_acc_int4:.4f}",
                        "" if r.final_bits is None else r.final_bits, repr(r.ai_int8), repr(r.ai_int4)])


def write_profile_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "layer", "bits", "ai", "accuracy", "delta_pp"])
        for r in rows:
            w.writerow([r.index, r.layer_id, r.bits, repr(r.ai), repr(r.accuracy), f"{r.delta_pp:.4f}"])


@dataclass(frozen=True)
class SchemeStatistics:
    layer_ids: tuple
    channels: tuple
    depth: tuple
    weight_bytes: tuple
    bits: tuple
    size_bits_rho: float | None
    depth_bits_rho: float | None

    def to_json(self):
        na = lambda v: "n/a" if v is None else v  # noqa: E731
        return {
            "layers": [
                {"layer_id": a, "channels": b, "depth": c, "weight_bytes": d, "bits": e}
                for a, b, c, d, e in zip(self.layer_ids, self.channels, self.depth, self.weight_bytes, self.bits)
            ],
            "spearman_size_bits": na(self.size_bits_rho),
            "spearman_depth_bits": na(self.depth_bits_rho),
        }


def _rho(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y).statistic)


def _channels(layer):
    p = layer.params
    return int(p["out_channels"] if layer.kind == "conv2d" else p["out_features"])


def scheme_statistics(graph, scheme):
    """Per-layer width/depth/bits and their Spearman correlations.

    ``weight_bytes`` is the FP32 weight size; correlations are None (n/a)
    when either side is constant, e.g. for the all-FP32 scheme.
    """
    scheme = validate_scheme(graph, scheme)
    layers = [graph.layers[i] for i in graph.quantizable_indices]
    wb = tuple(4 * int(l.weight.size) for l in layers)
    bits = tuple(int(b) for b in scheme)
    depth = tuple(range(len(layers)))
    return SchemeStatistics(
        tuple(l.id for l in layers), tuple(_channels(l) for l in layers), depth, wb, bits,
        _rho(wb, bits), _rho(depth, bits),
    )
