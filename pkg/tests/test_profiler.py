import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aiq.cost import BitWidth, arithmetic_intensity, fp32_scheme
from aiq.data import Dataset
from aiq.graph import build_graph
from aiq.profiler import (
    layerwise_profile,
    scheme_statistics,
    sensitivity_table,
    single_layer_scheme,
    write_profile_csv,
    write_sensitivity_csv,
)
from aiq.search import Evaluator, coordinate_descent
from helpers import toy_evaluator

GOLDEN = Path(__file__).parent / "golden"


def test_profile_basics():
    ev = toy_evaluator(5, cache=True, incremental=False)
    assert ev.forward_evals == 1
    rows = layerwise_profile(ev, 4)
    assert ev.forward_evals == 1 + ev.n
    assert [r.index for r in rows] == list(range(ev.n))
    for r in rows:
        s = single_layer_scheme(ev.n, r.index, 4)
        assert r.ai == arithmetic_intensity(ev.graph, s)
        assert r.delta_pp == 100.0 * (ev.baseline_accuracy - r.accuracy)
    fp = layerwise_profile(ev, 32)
    assert all(r.delta_pp == 0.0 for r in fp)
    assert ev.forward_evals == 1 + ev.n


def test_dominant_layer_has_highest_single_layer_ai():
    rng = np.random.default_rng(0)
    dims = [(16, 8), (300, 16), (12, 300), (5, 12)]
    layers, t = [], {}
    for i, (o, k) in enumerate(dims):
        t[f"w{i}"] = rng.standard_normal((o, k)).astype(np.float32)
        layers += [{"id": f"fc{i}", "kind": "linear", "params": {"in_features": k, "out_features": o}, "weight": f"w{i}"},
                   {"id": f"r{i}", "kind": "relu"}]
    g = build_graph({"name": "dom", "input_shape": [8], "layers": layers[:-1]}, t)
    x = rng.standard_normal((40, 8)).astype(np.float32)
    ev = Evaluator(g, Dataset(x, rng.integers(0, 5, 40), 5), subset_size=None)
    rows = layerwise_profile(ev, 4)
    sizes = [g.layers[i].weight.size for i in g.quantizable_indices]
    assert int(np.argmax([r.ai for r in rows])) == int(np.argmax(sizes))


def test_sensitivity_table_and_csv(tmp_path):
    ev = toy_evaluator(6)
    final = (4, 8, 32, 4)
    rows = sensitivity_table(ev, final)
    assert [r.final_bits for r in rows] == list(final)
    p8, p4 = layerwise_profile(ev, 8), layerwise_profile(ev, 4)
    assert [r.delta_acc_int8 for r in rows] == [r.delta_pp for r in p8]
    assert [r.ai_int4 for r in rows] == [r.ai for r in p4]
    write_sensitivity_csv(tmp_path / "s.csv", rows)
    with open(tmp_path / "s.csv", newline="") as fh:
        got = list(csv.DictReader(fh))
    assert list(got[0]) == ["layer", "delta_8b", "delta_4b", "final_bits", "ai_8b", "ai_4b"]
    assert [int(r["final_bits"]) for r in got] == list(final)
    write_profile_csv(tmp_path / "p.csv", p4)
    with open(tmp_path / "p.csv", newline="") as fh:
        got = list(csv.DictReader(fh))
    assert len(got) == ev.n and float(got[2]["ai"]) == p4[2].ai


def test_mini_resnet_int4_profile(mini, mini_eval):
    ev = Evaluator(mini, mini_eval, subset_size=None, incremental=False)
    rows = layerwise_profile(ev, 4)
    ai = [r.ai for r in rows]
    d = [r.delta_pp for r in rows]
    sizes = [mini.layers[i].weight.size for i in mini.quantizable_indices]
    assert len(rows) == 20 and len(set(ai)) > 1
    for a, sa in zip(ai, sizes):
        for b, sb in zip(ai, sizes):
            assert (a < b) == (sa < sb) and (a == b) == (sa == sb)
    assert max(abs(x) for x in d) <= 5.0
    steps = np.sign(np.diff(d))
    assert (steps > 0).any() and (steps < 0).any()


def test_mini_resnet_int8_profile_golden(mini, mini_eval):
    ev = Evaluator(mini, mini_eval, subset_size=None, incremental=False)
    rows = layerwise_profile(ev, 8)
    golden = json.loads((GOLDEN / "mini_resnet_profile_int8.json").read_text())
    assert [r.layer_id for r in rows] == golden["layers"]
    assert [round(r.delta_pp, 6) for r in rows] == golden["delta_pp"]
    assert all(abs(r.delta_pp) <= 1.0 for r in rows)


def test_scheme_statistics():
    from aiq.fixtures import resnet20

    g = resnet20()
    st = scheme_statistics(g, fp32_scheme(g))
    assert st.size_bits_rho is None and st.depth_bits_rho is None
    assert st.to_json()["spearman_size_bits"] == "n/a"
    assert st.channels[0] == 16 and st.channels[-1] == 10 and st.depth == tuple(range(20))
    order = np.argsort(st.weight_bytes, kind="stable")
    q = [32] * 20
    for i in order[10:]:
        q[i] = 4
    st = scheme_statistics(g, q)
    assert st.size_bits_rho < 0
    assert st.weight_bytes[0] == 4 * 16 * 3 * 9


@pytest.mark.slow
def test_heavy_early_wide_layers_quantized_first(heavy, heavy_eval):
    ev = Evaluator(heavy, heavy_eval, subset_size=1000, seed=0)
    final = coordinate_descent(ev, ev.objective(0.9)).final.scheme
    st = scheme_statistics(heavy, final)
    order = np.argsort(st.weight_bytes, kind="stable")
    narrow, wide = order[:10], order[10:]
    low = lambda idx: np.mean([final[i] <= BitWidth.INT8 for i in idx])  # noqa: E731
    assert low(wide) >= low(narrow)
    mean_bits = lambda idx: np.mean([int(final[i]) for i in idx])  # noqa: E731
    assert mean_bits(wide) <= mean_bits(narrow)
