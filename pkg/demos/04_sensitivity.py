"""
Which layers tolerate low precision?
====================================

Quantize one layer at a time, record the AI gained and the accuracy lost,
then ask whether a searched scheme puts low bits on the widest layers.

    python demos/04_sensitivity.py  [writes demo-out/profile.svg]
"""

from pathlib import Path

import numpy as np

from aiq import Evaluator, coordinate_descent
from aiq.fixtures import fixture_dataset, load_fixture
from aiq.profiler import layerwise_profile, scheme_statistics
from aiq.report import profile_svg

g = load_fixture("heavy_early_mini")
data = fixture_dataset("heavy_early_mini", "eval")
ev = Evaluator(g, data, subset_size=None, incremental=False)

rows = layerwise_profile(ev, 4)
for r in rows:
    print(f"{r.index:2d} {r.layer_id:18s} AI {r.ai:7.3f}  delta {r.delta_pp:+5.2f} pp")
worst = max(rows, key=lambda r: r.delta_pp)
print("most sensitive at INT4:", worst.layer_id)

out = Path("demo-out")
out.mkdir(exist_ok=True)
(out / "profile.svg").write_text(profile_svg(rows, "Single-layer INT4 quantization"))

search_ev = Evaluator(g, data, subset_size=1000, seed=0)
final = coordinate_descent(search_ev, search_ev.objective(0.9)).final.scheme
st = scheme_statistics(g, final)
print("scheme", [int(b) for b in final])
print("Spearman(weight bytes, bits):", st.size_bits_rho, " Spearman(depth, bits):", st.depth_bits_rho)
order = np.argsort(st.weight_bytes)
print("mean bits, narrow half:", np.mean([int(final[i]) for i in order[:10]]),
      " wide half:", np.mean([int(final[i]) for i in order[10:]]))
