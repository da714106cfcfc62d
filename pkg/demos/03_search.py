"""
Searching a mixed-precision scheme
==================================

Trade arithmetic intensity against accuracy loss on the shipped
mini-ResNet:  L = -lambda * AI + (1 - lambda) * loss_pp.  Greedy and
coordinate descent search on a 1000-image subset; results are re-scored
on the full evaluation split.  A lambda sweep traces the frontier.

    python demos/03_search.py  [writes demo-out/pareto.svg]
"""

from pathlib import Path

from aiq import Evaluator, coordinate_descent, greedy_search, pareto_sweep
from aiq.fixtures import fixture_dataset, load_fixture
from aiq.report import pareto_svg
from aiq.search import dominated_flags, reevaluate, SweepPoint

g = load_fixture("mini_resnet")
data = fixture_dataset("mini_resnet", "eval")
ev = Evaluator(g, data, subset_size=1000, seed=0)
full = Evaluator(g, data, subset_size=None, incremental=False)
print(f"FP32: AI {full.baseline_ai:.3f}, accuracy {100 * full.baseline_accuracy:.2f}%")

obj = ev.objective(0.9)
for name, algo in (("greedy", greedy_search), ("coord", coordinate_descent)):
    trace = algo(ev, obj)
    rec = reevaluate(trace.final, full)
    print(f"{name:7s} {rec.scheme_str}  AI {rec.ai:.3f}  acc {100 * rec.accuracy:.2f}%  "
          f"({trace.final.evals_used} evaluations, {len(trace.steps)} steps)")

# Frontier: each lambda gives one scheme; uniform baselines for reference.
pts = pareto_sweep(ev, [0.0, 0.5, 0.9, 0.99, 1.0], "greedy", include_uniform=True)
finals = [reevaluate(p.record, full) for p in pts]
flags = dominated_flags(finals)
for p, r, d in zip(pts, finals, flags):
    print(f"{p.label:13s} AI {r.ai:7.3f}  acc {100 * r.accuracy:6.2f}%{'  dominated' if d else ''}")

out = Path("demo-out")
out.mkdir(exist_ok=True)
(out / "pareto.svg").write_text(pareto_svg([SweepPoint(r, d, p.label) for r, d, p in zip(finals, flags, pts)]))
print("wrote", out / "pareto.svg")
