"""Model and data builders shared by the test modules."""

import numpy as np

from aiq.fixtures import teacher_dataset, toy_mlp
from aiq.graph import build_graph
from aiq.search import Evaluator


def toy_problem(seed, n=512, pool=4):
    """Random 4-layer MLP with margin-filtered teacher labels, evaluated exactly."""
    g = toy_mlp(seed)
    return g, teacher_dataset(g, n, seed, pool=pool)


def toy_evaluator(seed, **kwargs):
    g, d = toy_problem(seed)
    return Evaluator(g, d, subset_size=None, **kwargs)


def depthwise_net(seed=0, c=6, size=8, mult=2):
    """Small conv net with a depthwise (groups == in_channels) layer, a
    channel-multiplier depthwise layer, 1x1 convs, BN, avg pooling and an
    odd-sized classifier."""
    rng = np.random.default_rng(seed)
    t = {}

    def w(name, *shape):
        t[name] = (rng.standard_normal(shape) * 0.4).astype(np.float32)
        return name

    def bn(lid, ch):
        t[f"{lid}.w"] = (1 + 0.1 * rng.standard_normal(ch)).astype(np.float32)
        t[f"{lid}.b"] = (0.1 * rng.standard_normal(ch)).astype(np.float32)
        t[f"{lid}.m"] = (0.1 * rng.standard_normal(ch)).astype(np.float32)
        t[f"{lid}.v"] = rng.uniform(0.5, 1.5, ch).astype(np.float32)
        return {"id": lid, "kind": "batchnorm2d", "params": {"channels": ch}, "weight": f"{lid}.w",
                "bias": f"{lid}.b", "running_mean": f"{lid}.m", "running_var": f"{lid}.v"}

    def conv(lid, cin, cout, k, stride=1, pad=0, groups=1, bias=True):
        return {"id": lid, "kind": "conv2d",
                "params": {"in_channels": cin, "out_channels": cout, "kernel_h": k, "kernel_w": k,
                           "stride": stride, "padding": pad, "groups": groups},
                "weight": w(f"{lid}.weight", cout, cin // groups, k, k),
                "bias": w(f"{lid}.bias", cout) if bias else None}

    layers = [
        conv("pw0", 3, c, 1),
        bn("bn0", c),
        {"id": "r0", "kind": "relu"},
        conv("dw1", c, c, 3, 1, 1, groups=c, bias=False),
        bn("bn1", c),
        {"id": "r1", "kind": "relu"},
        conv("pw1", c, c, 1),
        {"id": "add1", "kind": "add", "residual_from": "r0"},
        conv("dw2", c, c * mult, 3, 2, 1, groups=c),
        {"id": "r2", "kind": "relu"},
        {"id": "pool", "kind": "avgpool2d", "params": {"kernel": 2}},
        {"id": "flat", "kind": "flatten"},
        {"id": "fc", "kind": "linear", "params": {"in_features": c * mult * (size // 4) ** 2, "out_features": 7},
         "weight": w("fc.weight", 7, c * mult * (size // 4) ** 2), "bias": w("fc.bias", 7)},
    ]
    return build_graph({"name": "depthwise_net", "input_shape": [3, size, size], "layers": layers}, t)
