"""Model builders and shipped fixtures.

Builders return a :class:`ModelGraph` with deterministic He-initialised
weights; the trained desk-scale fixtures live in ``aiq/assets`` and are
loaded with :func:`load_fixture`.
"""

from importlib import resources

import numpy as np

from .graph import build_graph, load_model


class _Builder:
    def __init__(self, name, input_shape, seed):
        self.name = name
        self.input_shape = list(input_shape)
        self.rng = np.random.default_rng(seed)
        self.layers = []
        self.tensors = {}

    def _tensor(self, tid, arr):
        self.tensors[tid] = np.ascontiguousarray(arr, dtype=np.float32)
        return tid

    def conv(self, lid, cin, cout, k=3, stride=1, pad=1, groups=1, bias=False):
        fan_in = cin // groups * k * k
        w = self.rng.standard_normal((cout, cin // groups, k, k)) * np.sqrt(2.0 / fan_in)
        spec = {
            "id": lid,
            "kind": "conv2d",
            "params": {"in_channels": cin, "out_channels": cout, "kernel_h": k, "kernel_w": k,
                       "stride": stride, "padding": pad, "groups": groups},
            "weight": self._tensor(f"{lid}.weight", w),
            "bias": self._tensor(f"{lid}.bias", np.zeros(cout)) if bias else None,
        }
        self.layers.append(spec)
        return lid

    def bn(self, lid, c):
        self.layers.append({
            "id": lid, "kind": "batchnorm2d", "params": {"channels": c},
            "weight": self._tensor(f"{lid}.weight", np.ones(c)),
            "bias": self._tensor(f"{lid}.bias", np.zeros(c)),
            "running_mean": self._tensor(f"{lid}.running_mean", np.zeros(c)),
            "running_var": self._tensor(f"{lid}.running_var", np.ones(c)),
        })
        return lid

    def simple(self, lid, kind, params=None, residual_from=None):
        spec = {"id": lid, "kind": kind, "params": params or {}}
        if residual_from is not None:
            spec["residual_from"] = residual_from
        self.layers.append(spec)
        return lid

    def linear(self, lid, fin, fout, std=None, bias=True):
        std = np.sqrt(1.0 / fin) if std is None else std
        w = self.rng.standard_normal((fout, fin), dtype=np.float32) * np.float32(std)
        self.layers.append({
            "id": lid, "kind": "linear", "params": {"in_features": fin, "out_features": fout},
            "weight": self._tensor(f"{lid}.weight", w),
            "bias": self._tensor(f"{lid}.bias", np.zeros(fout)) if bias else None,
        })
        return lid

    def build(self):
        manifest = {"name": self.name, "input_shape": self.input_shape, "layers": self.layers}
        return build_graph(manifest, self.tensors)


def resnet(stem=16, stages=(16, 32, 64), blocks=3, input_shape=(3, 32, 32), num_classes=10, seed=0, name=None):
    """CIFAR-style ResNet: 3x3 stem, ``len(stages)`` stages of ``blocks``
    basic blocks, global pooling and a linear classifier.

    Blocks that change shape use the parameter-free shortcut (stride-2
    subsampling, then symmetric zero channel padding when the block widens
    or a centered channel crop when it narrows), so the quantizable layers are
    exactly the stem, the 2·blocks·stages block convolutions and the
    classifier: 20 for the default ResNet-20 layout.
    """
    name = name or f"resnet{2 * blocks * len(stages) + 2}"
    b = _Builder(name, input_shape, seed)
    c = input_shape[0]
    b.conv("conv1", c, stem)
    b.bn("bn1", stem)
    prev = b.simple("relu1", "relu")
    c = stem
    for s, width in enumerate(stages, start=1):
        for k in range(blocks):
            stride = 2 if (s > 1 and k == 0) else 1
            p = f"layer{s}.{k}"
            b.conv(f"{p}.conv1", c, width, stride=stride)
            b.bn(f"{p}.bn1", width)
            b.simple(f"{p}.relu1", "relu")
            b.conv(f"{p}.conv2", width, width)
            b.bn(f"{p}.bn2", width)
            shortcut = "identity" if (stride == 1 and c == width) else "pad"
            b.simple(f"{p}.add", "add", {"shortcut": shortcut}, residual_from=prev)
            prev = b.simple(f"{p}.relu2", "relu")
            c = width
    b.simple("pool", "global_avg_pool")
    b.simple("flatten", "flatten")
    b.linear("fc", c, num_classes)
    return b.build()


def resnet20(seed=0):
    """ResNet-20 for 3x32x32 inputs: widths (16, 16, 32, 64)."""
    return resnet(16, (16, 32, 64), seed=seed, name="resnet20")


def heavy_early_resnet20(seed=0, stem=64, stages=(32, 16, 16), input_shape=(3, 32, 32)):
    """ResNet-20 with the channel progression reversed."""
    return resnet(stem, stages, input_shape=input_shape, seed=seed, name="heavy_early_resnet20")


def mini_resnet(seed=0):
    """ResNet-20 topology at reduced width for 3x16x16 inputs."""
    return resnet(8, (8, 16, 32), input_shape=(3, 16, 16), seed=seed, name="mini_resnet")


def plain_convnet20(width=64, input_shape=(3, 32, 32), num_classes=10, seed=0, downsample=(7, 13)):
    """19 conv/BN/ReLU layers of equal width plus a classifier, no shortcuts."""
    b = _Builder("plain_convnet20", input_shape, seed)
    c = input_shape[0]
    for i in range(19):
        stride = 2 if i in downsample else 1
        b.conv(f"f{3 * i}", c, width, stride=stride)
        b.bn(f"f{3 * i + 1}", width)
        b.simple(f"f{3 * i + 2}", "relu")
        c = width
    b.simple("pool", "global_avg_pool")
    b.simple("flatten", "flatten")
    b.linear("cls", c, num_classes)
    return b.build()


def memory_bound_stack(weight_bytes, width=4096, bottleneck=64, num_classes=10, sensitive=2, outlier=400.0, seed=0,
                       calib=64):
    """Wide Linear stack for batch-1 throughput runs.

    ``weight_bytes`` of FP32 weights are spread over square ``width`` x
    ``width`` layers.  ``sensitive`` narrow bottleneck pairs
    (width -> bottleneck -> width) are interleaved; each narrow layer carries a
    single outlier weight ``outlier`` times the typical magnitude, which makes
    per-tensor INT8 quantization of that layer destructive.  The input is a
    (width, 1, 1) tensor flattened before the first layer.

    Deep random ReLU stacks map every input to nearly the same direction, so
    the head bias is set to minus the mean logit over ``calib`` Gaussian
    inputs; predictions then depend on the input rather than on one
    dominant class.
    """
    n_wide = max(1, -(-int(weight_bytes) // (4 * width * width)))
    b = _Builder("memory_bound_stack", (width, 1, 1), seed)
    b.simple("flatten", "flatten")
    pairs = set(np.linspace(0, n_wide, sensitive + 2)[1:-1].round().astype(int)) if sensitive else set()
    j = 0
    for i in range(n_wide):
        if i in pairs:
            for tag, fin, fout in (("down", width, bottleneck), ("up", bottleneck, width)):
                lid = f"{tag}{j}"
                b.linear(lid, fin, fout, std=np.sqrt(2.0 / fin))
                w = b.tensors[f"{lid}.weight"]
                r, c = b.rng.integers(0, fout), b.rng.integers(0, fin)
                w[r, c] = np.float32(outlier * np.sqrt(2.0 / fin))
                b.simple(f"{lid}.relu", "relu")
            j += 1
        b.linear(f"wide{i}", width, width, std=np.sqrt(2.0 / width))
        b.simple(f"wide{i}.relu", "relu")
    b.linear("head", width, num_classes, std=np.sqrt(1.0 / width))
    x = b.rng.standard_normal((calib, width), dtype=np.float32)
    for spec in b.layers:
        if spec["kind"] == "linear":
            x = x @ b.tensors[spec["weight"]].T
        elif spec["kind"] == "relu":
            np.maximum(x, 0, out=x)
    b.tensors["head.bias"] = -x.mean(axis=0).astype(np.float32)
    return b.build()


def asset_path(name):
    return resources.files("aiq") / "assets" / name


def load_fixture(name="mini_resnet"):
    """Load a shipped trained fixture (``mini_resnet`` or ``heavy_early_mini``)."""
    return load_model(asset_path(f"{name}.json"), asset_path(f"{name}.aiqw"))


def fixture_dataset(name="mini_resnet", split="eval"):
    """Synthetic dataset the shipped fixture was trained/evaluated on."""
    from .data import synthetic_blobs

    spec = FIXTURE_DATA[name][split]
    return synthetic_blobs(**spec)


# generator settings behind the shipped fixtures
FIXTURE_DATA = {
    "mini_resnet": {
        "train": {"n": 20000, "seed": 1, "shape": (3, 16, 16)},
        "eval": {"n": 2000, "seed": 7, "shape": (3, 16, 16)},
    },
    "heavy_early_mini": {
        "train": {"n": 20000, "seed": 1, "shape": (3, 16, 16)},
        "eval": {"n": 2000, "seed": 7, "shape": (3, 16, 16)},
    },
}


def heavy_early_mini(seed=0):
    """Heavy-early variant of :func:`mini_resnet` (channels reversed)."""
    return resnet(32, (16, 8, 8), input_shape=(3, 16, 16), seed=seed, name="heavy_early_mini")


def toy_mlp(seed=0, layers=4, in_shape=(1, 4, 4), num_classes=10, width_range=(8, 64)):
    """Random MLP with ``layers`` Linear layers of random widths."""
    rng = np.random.default_rng(seed)
    b = _Builder(f"toy{seed}", in_shape, seed)
    b.simple("flatten", "flatten")
    fin = int(np.prod(in_shape))
    for i in range(layers):
        last = i == layers - 1
        fout = num_classes if last else int(rng.integers(width_range[0], width_range[1] + 1))
        b.linear(f"fc{i}", fin, fout, std=np.sqrt((1.0 if last else 2.0) / fin))
        if not last:
            b.simple(f"relu{i}", "relu")
        fin = fout
    return b.build()


def teacher_dataset(graph, n=256, seed=0, pool=4):
    """Gaussian inputs labelled by ``graph``'s own FP32 predictions.

    ``pool * n`` candidates are drawn and the ``n`` with the widest top-2
    logit margin are kept (in draw order), mimicking the confident
    predictions of a trained classifier; ``pool=1`` keeps every draw.
    """
    from .data import Dataset
    from .inference import forward

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((pool * n, *graph.input_shape), dtype=np.float32)
    logits = np.concatenate([forward(graph, x[s : s + 1024]) for s in range(0, len(x), 1024)])
    top2 = np.sort(logits, axis=1)[:, -2:]
    keep = np.sort(np.argsort(top2[:, 0] - top2[:, 1], kind="stable")[:n])
    x = np.ascontiguousarray(x[keep])
    labels = np.argmax(logits[keep], axis=1).astype(np.int64)
    num_classes = graph.layers[graph.quantizable_indices[-1]].params["out_features"]
    return Dataset(x, labels, num_classes, {"source": "teacher", "seed": seed})
