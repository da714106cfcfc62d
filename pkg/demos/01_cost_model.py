"""
Arithmetic intensity of a ResNet-20
===================================

Count FLOPs and bytes moved for every layer, then see how weight bit-width
moves the network along the roofline.  Pure analysis: no data, no timing.

    python demos/01_cost_model.py
"""

from aiq import BitWidth, MachineModel, global_ai, uniform_scheme
from aiq.cost import roofline_classify
from aiq.fixtures import resnet20

g = resnet20()
print(g.name, "-", g.num_quantizable, "conv/linear layers")

# Global AI = total FLOPs / total bytes.  Only conv and linear layers move
# bytes; BN, ReLU and residual adds are fused into them.
for bits in (32, 8, 4):
    rep = global_ai(g, uniform_scheme(g, bits))
    print(f"uniform {bits:2d}-bit  FLOPs {rep.global_flops:>9d}  bytes {rep.global_bytes:>8d}  AI {rep.ai:7.3f}")

fp32 = global_ai(g, uniform_scheme(g, 32)).ai
print("INT8 / FP32 AI ratio:", round(global_ai(g, uniform_scheme(g, 8)).ai / fp32, 4))

# The same numbers without fusion: every layer reads its input and writes
# its output.
print("unfused FP32 AI:", round(global_ai(g, uniform_scheme(g, 32), traffic="unfused").ai, 3))

# Larger batches amortize weight traffic over more images.
for batch in (1, 8, 64):
    print(f"batch {batch:3d}: AI {global_ai(g, uniform_scheme(g, 32), batch).ai:8.3f}")

# Per-layer view against a hypothetical machine: 100 GFLOP/s, 2.5 GB/s.
# Lower bits raise each layer's AI and move some across the ridge point.
m = MachineModel(100e9, 2.5e9)
print(f"ridge point {m.ridge_point:.1f} FLOPs/byte")
for bits in (32, 8, 4):
    rep = global_ai(g, uniform_scheme(g, bits))
    roof = roofline_classify(rep, m)
    mem = [g.layers[i].id for i in g.quantizable_indices if roof.bound[i] == "memory-bound"]
    print(f"{bits:2d}-bit: {len(mem):2d} memory-bound layers, roofline {roof.images_per_s:7.0f} images/s")
