"""
Does higher AI run faster?
==========================

Calibrate the machine, then time a weight-dominated model with FP32, INT8
and INT4 packed weights.  Timed runs of the schemes are interleaved so
that drift hits them all equally.

    python demos/05_throughput.py
"""

from aiq.bench import (
    BenchConfig, bandwidth_buffer_bytes, calibrate_machine, llc_bytes, measure_interleaved, roofline_images_per_s,
)
from aiq.cost import uniform_scheme
from aiq.fixtures import memory_bound_stack, teacher_dataset

cal = calibrate_machine(runs=3, buffer_bytes=bandwidth_buffer_bytes())
m = cal.machine
print(f"peak {m.peak_flops / 1e9:.1f} GFLOP/s, bandwidth {m.mem_bandwidth / 1e9:.2f} GB/s, ridge {m.ridge_point:.2f}")

# Weights several times the last-level cache so every image streams them.
g = memory_bound_stack(4 * (llc_bytes() or 32 << 20), width=4096)
data = teacher_dataset(g, 64, 0)
schemes = [uniform_scheme(g, b) for b in (32, 8, 4)]
res = measure_interleaved(g, schemes, data, BenchConfig(runs=7, threads=2), measure_accuracy=False)
for bits, q, r in zip((32, 8, 4), schemes, res):
    print(f"{bits:2d}-bit  {r.images_per_s:8.1f} images/s  (roofline {roofline_images_per_s(g, q, m):8.1f})")
print("INT8 speed-up over FP32:", round(res[1].images_per_s / res[0].images_per_s, 2))
