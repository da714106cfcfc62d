import csv
import json

import pytest

from aiq.cli import main
from aiq.data import save_aiqd
from aiq.fixtures import teacher_dataset, toy_mlp
from aiq.graph import save_model


@pytest.fixture
def work(tmp_path, monkeypatch):
    g = toy_mlp(seed=4)
    save_model(g, tmp_path / "toy.json", tmp_path / "toy.aiqw")
    save_aiqd(tmp_path / "toy.aiqd", teacher_dataset(g, 200, 4))
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("AIQ_THREADS", raising=False)
    return tmp_path


MODEL = ["--model", "toy.json", "--weights", "toy.aiqw", "--data", "toy.aiqd"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_search_outputs(work):
    assert main(["search", *MODEL, "--out", "o"]) == 0
    scheme = json.loads((work / "o/scheme.json").read_text())
    assert len(scheme["scheme"]) == len(scheme["layer_ids"]) == 4
    assert set(scheme["scheme"]) <= {32, 8, 4}
    trace = [json.loads(line) for line in (work / "o/trace.jsonl").read_text().splitlines()]
    assert trace and [r["iteration"] for r in trace] == list(range(len(trace)))
    rec = rows(work / "o/record.csv")
    assert [r["eval_set"] for r in rec] == ["subset", "full"]
    cfg = json.loads((work / "o/config.json").read_text())
    assert cfg["threads"] == 2 and cfg["lam"] == 0.9 and cfg["bits"] == [32, 8, 4]


def test_exit_codes(work, capsys):
    assert main(["search", "--fixture", "mini_resnet", "--algo", "exhaustive", "--out", "o"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["search", "--model", "nope.json", "--weights", "toy.aiqw", "--data", "toy.aiqd"]) == 3
    assert main(["search", "--model", "toy.json", "--weights", "toy.aiqw", "--data", "nope.aiqd"]) == 3
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "[32,8]"]) == 2
    (work / "bad.json").write_text(json.dumps([32, 8, 4, 5]))
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "bad.json"]) == 2
    (work / "short.json").write_text(json.dumps([32, 8]))
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "short.json"]) == 2
    assert main(["bench", *MODEL, "--runs", "3"]) == 2
    (work / "junk.aiqd").write_bytes(b"AIQD\0\0")
    assert main(["search", "--model", "toy.json", "--weights", "toy.aiqw", "--data", "junk.aiqd"]) == 3


def test_threads_resolution(work, monkeypatch):
    monkeypatch.setenv("AIQ_THREADS", "3")
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--out", "a"]) == 0
    assert json.loads((work / "a/config.json").read_text())["threads"] == 3
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--out", "b", "--threads", "1"]) == 0
    assert json.loads((work / "b/config.json").read_text())["threads"] == 1
    monkeypatch.setenv("AIQ_THREADS", "lots")
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--out", "c"]) == 2


def test_profile(work):
    assert main(["profile", *MODEL, "--out", "p", "--table"]) == 0
    got = rows(work / "p/profile.csv")
    assert len(got) == 4 and list(got[0])[:2] == ["index", "layer"]
    assert (work / "p/profile.svg").exists()
    assert len(rows(work / "p/sensitivity.csv")) == 4
    assert main(["profile", *MODEL, "--out", "f", "--bits", "32"]) == 0
    assert all(float(r["delta_pp"]) == 0.0 for r in rows(work / "f/profile.csv"))


def test_sweep(work):
    assert main(["sweep", *MODEL, "--out", "s", "--lambdas", "0,0.9,1", "--subset-size", "0"]) == 0
    got = rows(work / "s/pareto.csv")
    labels = [r["label"] for r in got]
    assert labels.count("aiq") == 3
    assert {"uniform:fp32", "uniform:int8", "uniform:int4"} <= set(labels)
    assert {r["dominated"] for r in got} <= {"0", "1"}
    assert (work / "s/pareto.svg").exists()


def test_cost_and_quantize(work):
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "uniform:int8", "--out", "c"]) == 0
    got = rows(work / "c/cost.csv")
    assert list(got[0]) == ["layer_id", "kind", "flops", "weight_bytes", "act_bytes", "ai", "bound"]
    assert main(["quantize", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "uniform:int4",
                 "--out", "q"]) == 0
    name = json.loads((work / "toy.json").read_text())["name"]
    assert (work / "q" / f"{name}.aiqw").exists()
    assert main(["cost", "--model", f"q/{name}.json", "--weights", f"q/{name}.aiqw", "--scheme", "uniform:int4",
                 "--out", "c4"]) == 0
    assert main(["cost", "--model", "toy.json", "--weights", "toy.aiqw", "--scheme", "q/scheme.json",
                 "--out", "c4b"]) == 0
    assert (work / "c4/cost.csv").read_bytes() == (work / "c4b/cost.csv").read_bytes()
    assert main(["quantize", "--model", f"q/{name}.json", "--weights", f"q/{name}.aiqw", "--scheme", "uniform:int4",
                 "--out", "q2"]) == 0
    assert (work / f"q2/{name}.aiqw").read_bytes() == (work / f"q/{name}.aiqw").read_bytes()


def test_bench(work):
    assert main(["bench", *MODEL, "--scheme", "uniform:int8", "--runs", "5", "--random-k", "2", "--out", "b"]) == 0
    t = json.loads((work / "b/throughput.json").read_text())
    assert t["runs"] == 5 and t["images_per_s"] > 0 and t["accuracy"] is not None
    r = json.loads((work / "b/throughput_random.json").read_text())
    assert sum(b != 32 for b in r["scheme"]) == 2


def test_calibrate(work):
    assert main(["calibrate", "--runs", "1", "--buffer-mb", "16", "--out", "m"]) == 0
    m = json.loads((work / "m/machine.json").read_text())
    assert m["peak_flops"] > 0 and m["mem_bandwidth_bytes_per_s"] > 0
