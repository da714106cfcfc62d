"""Command-line front end: ``aiq <subcommand> ...``.

Every subcommand writes ``config.json`` (the fully resolved configuration)
next to its outputs.  Exit codes: 0 ok, 2 usage/config error, 3 data/model
error, 4 internal error.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import bench, kernels, profiler, report, search
from .container import write_container
from .cost import BitWidth, MachineModel, fp32_scheme, global_ai, parse_bits, uniform_scheme, validate_scheme, write_cost_csv
from .data import load_dataset
from .errors import AIQError, ConfigInvalid, DataError, LengthMismatch
from .fixtures import fixture_dataset, load_fixture
from .graph import load_model, quantizable_layers, to_manifest
from .quantizer import quantized_tensors

FIXTURES = ("mini_resnet", "heavy_early_mini")


def _bits_list(text):
    try:
        return tuple(sorted({parse_bits(t) for t in text.split(",") if t.strip()}, reverse=True))
    except (ValueError, AIQError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bits(text):
    try:
        return parse_bits(text)
    except AIQError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_model(p, data=True):
    g = p.add_argument_group("model")
    g.add_argument("--model", help="model manifest (.json)")
    g.add_argument("--weights", help="weights container (.aiqw)")
    g.add_argument("--fixture", choices=FIXTURES, help="use a shipped trained fixture (model and its eval set)")
    if data:
        d = p.add_argument_group("data")
        d.add_argument("--data", help="dataset file (.aiqd or IDX images)")
        d.add_argument("--data-format", choices=("aiqd", "idx"), default="aiqd")
        d.add_argument("--labels", help="IDX labels file (with --data-format idx)")
        d.add_argument("--mean", type=_floats, help="per-channel normalization mean (IDX)")
        d.add_argument("--std", type=_floats, help="per-channel normalization std (IDX)")
        d.add_argument("--num-classes", type=int)


def _add_common(p):
    p.add_argument("--out", default="aiq-out", help="output directory (default: aiq-out)")
    p.add_argument("--threads", type=int, help="worker threads (fallback: $AIQ_THREADS, then 2)")
    p.add_argument("--seed", type=int, default=0)


def _add_search_opts(p):
    p.add_argument("--lambda", dest="lam", type=float, default=0.9)
    p.add_argument("--bits", type=_bits_list, default=(32, 8, 4), help="allowed bit-widths (default 32,8,4)")
    p.add_argument("--algo", choices=search.ALGORITHMS, default="greedy")
    p.add_argument("--ai-normalization", choices=search.AI_NORMALIZATIONS, default="none")
    p.add_argument("--greedy-moves", choices=("any-lower", "fp32-only"), default="any-lower")
    p.add_argument("--subset-size", type=int, default=1000, help="search subset size (0 = whole set)")
    p.add_argument("--batch", type=int, default=1, help="batch size for the AI cost model")
    p.add_argument("--traffic", choices=("fused", "unfused"), default="fused")
    p.add_argument("--exhaustive-cap", type=int, default=10_000)


def build_parser():
    ap = argparse.ArgumentParser(prog="aiq", description="Arithmetic-intensity-aware mixed-precision quantization")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="search a mixed-precision scheme")
    _add_model(p)
    _add_search_opts(p)
    _add_common(p)

    p = sub.add_parser("profile", help="single-layer sensitivity profile")
    _add_model(p)
    p.add_argument("--bits", type=_bits, default=BitWidth.INT4, help="bit-width of the probed layer")
    p.add_argument("--table", action="store_true", help="also write the INT8/INT4 sensitivity table")
    p.add_argument("--final-scheme", help="scheme file whose bits fill the table's final_bits column")
    p.add_argument("--subset-size", type=int, default=0, help="evaluation subset size (0 = whole set)")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--traffic", choices=("fused", "unfused"), default="fused")
    _add_common(p)

    p = sub.add_parser("sweep", help="lambda sweep and Pareto frontier")
    _add_model(p)
    _add_search_opts(p)
    p.add_argument("--lambdas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 0.9, 1.0])
    _add_common(p)

    p = sub.add_parser("bench", help="wall-clock throughput with packed weights")
    _add_model(p)
    p.add_argument("--scheme", default="fp32", help="scheme file, uniform:int8, uniform:int4 or fp32")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--images", type=int, help="images per timed run (default: batch)")
    p.add_argument("--random-k", type=int, help="also time a seeded random scheme with k quantized layers")
    p.add_argument("--random-bits", type=_bits, default=BitWidth.INT8)
    p.add_argument("--no-accuracy", action="store_true", help="skip accuracy on the packed path")
    _add_common(p)

    p = sub.add_parser("cost", help="analytic per-layer cost report")
    _add_model(p, data=False)
    p.add_argument("--scheme", default="fp32")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--traffic", choices=("fused", "unfused"), default="fused")
    p.add_argument("--machine", help="MachineModel JSON for roofline classification")
    _add_common(p)

    p = sub.add_parser("calibrate", help="measure peak FLOP/s and memory bandwidth")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--buffer-mb", type=int, help="streaming buffer size (default: 8x LLC, memory permitting)")
    _add_common(p)

    p = sub.add_parser("quantize", help="write a packed-weight model for a scheme")
    _add_model(p, data=False)
    p.add_argument("--scheme", required=True)
    _add_common(p)
    return ap


# -- helpers -----------------------------------------------------------------


def resolve_threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("AIQ_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigInvalid(f"AIQ_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigInvalid("AIQ_THREADS must be >= 1")
        return n
    return 2


def _load_graph(args):
    if args.fixture:
        return load_fixture(args.fixture)
    if not (args.model and args.weights):
        raise ConfigInvalid("give --model and --weights, or --fixture")
    try:
        return load_model(args.model, args.weights)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read model: {exc}") from None


def _load_data(args):
    if args.data:
        try:
            return load_dataset(args.data, args.data_format, args.labels, args.mean, args.std, args.num_classes)
        except FileNotFoundError as exc:
            raise DataError(f"cannot read dataset: {exc}") from None
    if args.fixture:
        return fixture_dataset(args.fixture, "eval")
    raise ConfigInvalid("give --data (or --fixture for a shipped model and its eval set)")


def read_scheme(text, graph):
    """``fp32``, ``uniform:int8``, ``uniform:int4`` or a scheme JSON file."""
    t = text.strip().lower()
    if t == "fp32":
        return fp32_scheme(graph)
    if t.startswith("uniform:"):
        return uniform_scheme(graph, parse_bits(t.split(":", 1)[1]))
    try:
        obj = json.loads(Path(text).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigInvalid(f"scheme {text!r} is neither a keyword nor an existing file") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"scheme file {text}: {exc}") from None
    bits = obj["scheme"] if isinstance(obj, dict) else obj
    ids = obj.get("layer_ids") if isinstance(obj, dict) else None
    if ids is not None and list(ids) != quantizable_layers(graph):
        if len(ids) != graph.num_quantizable:
            raise LengthMismatch(graph.num_quantizable, len(ids))
        raise ConfigInvalid("scheme file layer ids do not match the model")
    return validate_scheme(graph, bits)


def write_scheme(path, graph, scheme):
    obj = {"layer_ids": quantizable_layers(graph), "scheme": [int(b) for b in scheme]}
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _resolved(args, threads):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["threads"] = threads
    for k, v in cfg.items():
        if isinstance(v, tuple):
            cfg[k] = [int(x) for x in v]
        elif isinstance(v, BitWidth):
            cfg[k] = int(v)
    return cfg


def _outdir(args, threads):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(_resolved(args, threads), indent=1, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return out


def _evaluators(args, graph, data, storage="fake"):
    size = args.subset_size or None
    ev = search.Evaluator(graph, data, subset_size=size, seed=args.seed, batch=args.batch, traffic=args.traffic,
                          storage=storage)
    full = ev if size is None or size >= len(data) else search.Evaluator(
        graph, data, subset_size=None, seed=args.seed, batch=args.batch, traffic=args.traffic, storage=storage,
        incremental=False)
    return ev, full


def _say(msg):
    print(msg, flush=True)


# -- subcommands ---------------------------------------------------------------


def cmd_search(args, threads):
    graph = _load_graph(args)
    data = _load_data(args)
    out = _outdir(args, threads)
    ev, full = _evaluators(args, graph, data)
    obj = ev.objective(args.lam, args.ai_normalization)
    kwargs = {}
    if args.algo == "greedy":
        kwargs["moves"] = args.greedy_moves
    elif args.algo == "exhaustive":
        kwargs["cap"] = args.exhaustive_cap
    rec, trace = search.run_search(ev, obj, args.algo, args.bits, **kwargs)
    rec = replace(rec, algorithm=args.algo)
    final = search.reevaluate(rec, full)
    write_scheme(out / "scheme.json", graph, rec.scheme)
    if trace is not None:
        trace.write_jsonl(out / "trace.jsonl")
    search.write_records_csv(out / "record.csv", [rec, final], {"eval_set": ["subset", "full"]})
    _say(f"scheme   {rec.scheme_str}")
    _say(f"AI       {final.ai:.4f} FLOPs/byte (FP32 {full.baseline_ai:.4f})")
    _say(f"accuracy {100 * final.accuracy:.2f}% (FP32 {100 * full.baseline_accuracy:.2f}%, "
         f"loss {final.acc_loss_pp:.2f} pp) on {len(full.labels)} samples")
    _say(f"evaluations {rec.evals_used}; outputs in {out}")
    return 0


def cmd_profile(args, threads):
    graph = _load_graph(args)
    data = _load_data(args)
    out = _outdir(args, threads)
    size = args.subset_size or None
    ev = search.Evaluator(graph, data, subset_size=size, seed=args.seed, batch=args.batch, traffic=args.traffic,
                          incremental=False)
    rows = profiler.layerwise_profile(ev, args.bits)
    profiler.write_profile_csv(out / "profile.csv", rows)
    label = BitWidth(args.bits).label.upper()
    (out / "profile.svg").write_text(report.profile_svg(rows, f"Single-layer {label} quantization"), encoding="utf-8")
    if args.table:
        final = read_scheme(args.final_scheme, graph) if args.final_scheme else None
        profiler.write_sensitivity_csv(out / "sensitivity.csv", profiler.sensitivity_table(ev, final))
    for r in rows:
        _say(f"{r.index:3d} {r.layer_id:24s} AI {r.ai:9.4f}  acc {100 * r.accuracy:6.2f}%  delta {r.delta_pp:+.2f} pp")
    return 0


def cmd_sweep(args, threads):
    graph = _load_graph(args)
    data = _load_data(args)
    out = _outdir(args, threads)
    ev, full = _evaluators(args, graph, data)
    pts = search.pareto_sweep(ev, args.lambdas, args.algo, args.bits, args.ai_normalization, include_uniform=True)
    finals = [search.reevaluate(p.record, full) for p in pts]
    flags = search.dominated_flags(finals)
    labeled = [search.SweepPoint(r, f, p.label) for r, f, p in zip(finals, flags, pts)]
    search.write_records_csv(out / "pareto.csv", finals, {
        "label": [p.label for p in pts],
        "dominated": [int(f) for f in flags],
    })
    (out / "pareto.svg").write_text(report.pareto_svg(labeled), encoding="utf-8")
    for p in labeled:
        lam = "" if p.label != "aiq" else f"lambda={p.record.lam:g}"
        _say(f"{p.label:13s} {lam:12s} AI {p.record.ai:9.4f}  acc {100 * p.record.accuracy:6.2f}%"
             f"{'  (dominated)' if p.dominated else ''}")
    return 0


def cmd_bench(args, threads):
    graph = _load_graph(args)
    data = _load_data(args)
    scheme = read_scheme(args.scheme, graph)
    out = _outdir(args, threads)
    cfg = bench.BenchConfig(args.batch, args.runs, args.warmup, threads, args.images)
    res = bench.measure_throughput(graph, scheme, data, cfg, measure_accuracy=not args.no_accuracy)
    res.save(out / "throughput.json")
    _say(f"{res.images_per_s:.2f} images/s (median of {res.runs} runs, {threads} threads)")
    if args.random_k is not None:
        rnd, _ = bench.compare_random_baseline(graph, args.random_k, args.random_bits, args.seed, data, cfg)
        rnd.save(out / "throughput_random.json")
        _say(f"random k={args.random_k}: {rnd.images_per_s:.2f} images/s")
    return 0


def cmd_cost(args, threads):
    graph = _load_graph(args)
    scheme = read_scheme(args.scheme, graph)
    out = _outdir(args, threads)
    rep = global_ai(graph, scheme, args.batch, args.traffic)
    machine = MachineModel.load(args.machine) if args.machine else None
    write_cost_csv(out / "cost.csv", rep, machine)
    _say(f"FLOPs {rep.global_flops}  bytes {rep.global_bytes}  AI {rep.ai:.4f} FLOPs/byte")
    return 0


def cmd_calibrate(args, threads):
    out = _outdir(args, threads)
    buf = args.buffer_mb << 20 if args.buffer_mb else None
    with threadpool_limits(limits=1):
        cal = bench.calibrate_machine(args.runs, buf, path=out / "machine.json")
    m = cal.machine
    _say(f"peak {m.peak_flops / 1e9:.1f} GFLOP/s  bandwidth {m.mem_bandwidth / 1e9:.2f} GB/s  "
         f"ridge {m.ridge_point:.2f} FLOPs/byte (buffer {cal.buffer_bytes >> 20} MiB)")
    return 0


def cmd_quantize(args, threads):
    graph = _load_graph(args)
    scheme = read_scheme(args.scheme, graph)
    out = _outdir(args, threads)
    stem = graph.name
    (out / f"{stem}.json").write_text(json.dumps(to_manifest(graph), indent=1) + "\n", encoding="utf-8")
    write_container(out / f"{stem}.aiqw", quantized_tensors(graph, scheme))
    write_scheme(out / "scheme.json", graph, scheme)
    _say(f"wrote {out / (stem + '.json')} and {out / (stem + '.aiqw')}")
    return 0


COMMANDS = {
    "search": cmd_search, "profile": cmd_profile, "sweep": cmd_sweep, "bench": cmd_bench,
    "cost": cmd_cost, "calibrate": cmd_calibrate, "quantize": cmd_quantize,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = resolve_threads(args)
        with kernels.engine_threads(threads):
            return COMMANDS[args.command](args, threads)
    except AIQError as exc:
        print(f"aiq {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        print(f"aiq {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
