import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aiq.cost import (
    BitWidth,
    MachineModel,
    arithmetic_intensity,
    fp32_scheme,
    global_ai,
    layer_cost,
    parse_bits,
    roofline_classify,
    uniform_scheme,
    write_cost_csv,
)
from aiq.errors import ConfigInvalid, EmptyModel, LengthMismatch, ShapeMissing
from aiq.fixtures import heavy_early_resnet20, load_fixture, memory_bound_stack, plain_convnet20, resnet20, toy_mlp
from aiq.graph import build_graph
from helpers import depthwise_net
from oracles import resnet20_traffic

GOLDEN = Path(__file__).parent / "golden"


def linear_graph(fin=4, fout=2, bias=True):
    t = {"w": np.ones((fout, fin), np.float32), "b": np.zeros(fout, np.float32)}
    m = {"name": "l", "input_shape": [fin], "layers": [
        {"id": "fc", "kind": "linear", "params": {"in_features": fin, "out_features": fout},
         "weight": "w", "bias": "b" if bias else None}]}
    return build_graph(m, t)


def test_linear_layer_cost():
    c = layer_cost(linear_graph().layers[0])
    assert c.flops == 16
    assert c.weight_bytes(32) == 32 + 8
    assert c.weight_bytes(4) == 4 + 8
    assert c.act_bytes == (4 + 2) * 4
    assert c.total_bytes(32) == 40 + 24


def test_relu_cost():
    m = {"name": "r", "input_shape": [10], "layers": [{"id": "r", "kind": "relu"}]}
    c = layer_cost(build_graph(m, {}).layers[0])
    assert c.flops == 10 and c.weight_bytes(32) == 0


def test_int4_rounds_up_per_tensor():
    c = layer_cost(linear_graph(3, 1, bias=False).layers[0])
    assert c.weight_bytes(4) == 2 and c.weight_bytes(8) == 3 and c.weight_bytes(32) == 12


def test_shape_missing():
    from dataclasses import replace

    layer = replace(linear_graph().layers[0], input_shape=None)
    with pytest.raises(ShapeMissing):
        layer_cost(layer)


def test_resnet20_matches_closed_form_oracle():
    g = resnet20()
    rng = np.random.default_rng(0)
    schemes = [[32] * 20, [8] * 20, [4] * 20] + [list(rng.choice([32, 8, 4], 20)) for _ in range(5)]
    for traffic in ("fused", "unfused"):
        for batch in (1, 3, 16):
            for q in schemes:
                rep = global_ai(g, q, batch, traffic)
                assert (rep.global_flops, rep.global_bytes) == resnet20_traffic(q, batch, traffic)


def test_resnet20_golden_baseline_ai():
    golden = json.loads((GOLDEN / "resnet20_cost.json").read_text())
    g = resnet20()
    for name, bits in (("fp32", 32), ("int8", 8), ("int4", 4)):
        rep = global_ai(g, uniform_scheme(g, bits))
        assert rep.global_flops == golden[name]["flops"]
        assert rep.global_bytes == golden[name]["bytes"]
        assert rep.ai == golden[name]["ai"]
    ratio = golden["int8"]["ai"] / golden["fp32"]["ai"]
    assert 1.30 <= ratio <= 1.60


def test_scheme_validation():
    g = resnet20()
    with pytest.raises(LengthMismatch):
        global_ai(g, [32] * 19)
    with pytest.raises(ConfigInvalid):
        global_ai(g, [16] * 20)
    empty = build_graph({"name": "e", "input_shape": [3], "layers": [{"id": "r", "kind": "relu"}]}, {})
    with pytest.raises(EmptyModel):
        global_ai(empty, [])
    with pytest.raises(LengthMismatch):
        global_ai(empty, [32])


def test_parse_bits():
    assert parse_bits("int4") == BitWidth.INT4 and parse_bits(" FP32 ") == 32 and parse_bits(8) == BitWidth.INT8
    assert BitWidth.FP32 > BitWidth.INT8 > BitWidth.INT4
    for bad in ("int2", 16, None, "x"):
        with pytest.raises(ConfigInvalid):
            parse_bits(bad)


def test_roofline_examples():
    m = MachineModel(10e9, 10e9)
    assert m.ridge_point == 1.0
    assert m.attainable(0.5) == 5e9
    assert m.attainable(math.inf) == m.peak_flops
    g = linear_graph()
    rep = global_ai(g, [32])
    # layer AI exactly at the ridge point counts as compute-bound
    at_ridge = MachineModel(rep.layer_ai(0) * 1e9, 1e9)
    assert roofline_classify(rep, at_ridge).bound == ("compute-bound",)
    below = MachineModel(rep.layer_ai(0) * 1e9 * 1.01, 1e9)
    assert roofline_classify(rep, below).bound == ("memory-bound",)
    with pytest.raises(ValueError):
        MachineModel(0, 1)


def test_roofline_model_throughput():
    g = resnet20()
    rep = global_ai(g, fp32_scheme(g), batch=2)
    m = MachineModel(50e9, 10e9)
    r = roofline_classify(rep, m)
    assert r.attainable_flops == min(50e9, rep.ai * 10e9)
    assert r.images_per_s == r.attainable_flops / (rep.global_flops / 2)
    assert len(r.bound) == len(g.layers)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e6, 1e13), st.floats(1e6, 1e12), st.floats(1e-3, 1e4))
def test_attainable_never_exceeds_roofs(peak, bw, ai):
    m = MachineModel(peak, bw)
    assert m.attainable(ai) <= peak and m.attainable(ai) <= ai * bw


def test_machine_json_round_trip(tmp_path):
    m = MachineModel(1.5e11, 2.25e10)
    m.save(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == {"peak_flops": 1.5e11, "mem_bandwidth_bytes_per_s": 2.25e10}
    assert MachineModel.load(tmp_path / "m.json") == m


FIXTURES = {
    "resnet20": resnet20,
    "heavy_early_resnet20": heavy_early_resnet20,
    "plain_convnet20": lambda: plain_convnet20(width=16),
    "mini_resnet": lambda: load_fixture("mini_resnet"),
    "toy": lambda: toy_mlp(1),
    "depthwise": depthwise_net,
    "stack": lambda: memory_bound_stack(1 << 20, width=256, bottleneck=16),
}
GRAPHS = {k: f() for k, f in FIXTURES.items()}


@settings(max_examples=1000, deadline=None)
@given(st.sampled_from(sorted(GRAPHS)), st.data(), st.integers(1, 32), st.sampled_from(["fused", "unfused"]))
def test_ai_monotone_under_bit_reduction(name, data, batch, traffic):
    g = GRAPHS[name]
    n = g.num_quantizable
    q = data.draw(st.lists(st.sampled_from([32, 8, 4]), min_size=n, max_size=n))
    lower = [data.draw(st.sampled_from([b for b in (32, 8, 4) if b <= qi])) for qi in q]
    assert arithmetic_intensity(g, lower, batch, traffic) >= arithmetic_intensity(g, q, batch, traffic)


@pytest.mark.parametrize("name", sorted(GRAPHS))
def test_batch_amortizes_weights(name):
    g = GRAPHS[name]
    for bits in (32, 8, 4):
        q = uniform_scheme(g, bits)
        for b in (1, 2, 4, 8):
            assert arithmetic_intensity(g, q, 2 * b) >= arithmetic_intensity(g, q, b)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(sorted(GRAPHS)), st.data(), st.sampled_from(["fused", "unfused"]))
def test_global_values_are_sums_of_layers(name, data, traffic):
    g = GRAPHS[name]
    n = g.num_quantizable
    q = data.draw(st.lists(st.sampled_from([32, 8, 4]), min_size=n, max_size=n))
    rep = global_ai(g, q, 1, traffic)
    flops = nbytes = 0
    it = iter(q)
    for layer in g.layers:
        c = layer_cost(layer)
        flops += c.flops
        b = next(it) if layer.quantizable else 32
        if layer.quantizable or traffic == "unfused":
            nbytes += c.weight_bytes(b) + c.act_in_bytes + c.act_out_bytes
    assert rep.global_flops == flops and rep.global_bytes == nbytes
    assert rep.ai == flops / nbytes > 0


def test_layer_cost_monotone_in_bits():
    for g in GRAPHS.values():
        for layer in g.layers:
            c = layer_cost(layer)
            if c.weight_elements:
                assert c.weight_bytes(32) > c.weight_bytes(8) > c.weight_bytes(4)
                assert c.total_bytes(32) >= c.total_bytes(8) >= c.total_bytes(4)


def test_cost_csv(tmp_path):
    g = resnet20()
    rep = global_ai(g, uniform_scheme(g, 8))
    write_cost_csv(tmp_path / "c.csv", rep, MachineModel(1e11, 1e10))
    with open(tmp_path / "c.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["layer_id", "kind", "flops", "weight_bytes", "act_bytes", "ai", "bound"]
    assert len(rows) == len(g.layers)
    assert sum(int(r["flops"]) for r in rows) == rep.global_flops
    assert sum(int(r["weight_bytes"]) + int(r["act_bytes"]) for r in rows) == rep.global_bytes
    assert {r["bound"] for r in rows if r["kind"] == "conv2d"} <= {"memory-bound", "compute-bound"}
