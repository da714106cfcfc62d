"""Model representation: layers, manifests and shape inference."""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .container import read_container, write_container
from .errors import MalformedManifest, MissingTensor, NonFiniteWeight, ShapeMismatch

QUANTIZABLE_KINDS = ("conv2d", "linear")

# kind -> (required params, defaults)
_KIND_PARAMS = {
    "conv2d": (
        ("in_channels", "out_channels", "kernel_h", "kernel_w"),
        {"stride": 1, "padding": 0, "groups": 1},
    ),
    "linear": (("in_features", "out_features"), {}),
    "batchnorm2d": (("channels",), {"eps": 1e-5}),
    "relu": ((), {}),
    "avgpool2d": (("kernel",), {"stride": None}),
    "global_avg_pool": ((), {}),
    # shortcut "pad": residual subsampled by the spatial ratio, then channels
    # zero-padded symmetrically (widening) or center-cropped (narrowing)
    "add": ((), {"shortcut": "identity"}),
    "flatten": ((), {}),
}

# tensor roles a layer of each kind must own
_ROLES = {
    "conv2d": ("weight", "bias?"),
    "linear": ("weight", "bias?"),
    "batchnorm2d": ("weight", "bias", "running_mean", "running_var"),
}


def _normalize_params(kind, params):
    if kind not in _KIND_PARAMS:
        raise MalformedManifest(f"unknown layer kind {kind!r}")
    params = dict(params or {})
    if kind == "conv2d" and "kernel_size" in params:
        k = params.pop("kernel_size")
        params.setdefault("kernel_h", k)
        params.setdefault("kernel_w", k)
    required, defaults = _KIND_PARAMS[kind]
    out = {}
    for name in required:
        if name not in params:
            raise MalformedManifest(f"{kind} layer missing param {name!r}")
        out[name] = params.pop(name)
    for name, default in defaults.items():
        out[name] = params.pop(name, default)
    if params:
        raise MalformedManifest(f"{kind} layer has unknown params {sorted(params)}")
    if kind == "avgpool2d" and out["stride"] is None:
        out["stride"] = out["kernel"]
    for name, value in out.items():
        if name in ("shortcut", "eps"):
            continue
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise MalformedManifest(f"{kind} param {name!r} must be a non-negative integer, got {value!r}")
    if kind == "conv2d":
        if out["groups"] not in (1, out["in_channels"]):
            raise MalformedManifest("conv2d groups must be 1 or in_channels")
        if out["out_channels"] % out["groups"]:
            raise MalformedManifest("conv2d out_channels must be divisible by groups")
        if min(out["kernel_h"], out["kernel_w"], out["stride"], out["in_channels"], out["out_channels"]) < 1:
            raise MalformedManifest("conv2d sizes must be positive")
    if kind == "add" and out["shortcut"] not in ("identity", "pad"):
        raise MalformedManifest(f"add shortcut must be 'identity' or 'pad', got {out['shortcut']!r}")
    return out


def expected_tensor_shapes(kind, params):
    """Shapes of the tensors a layer owns, keyed by role."""
    if kind == "conv2d":
        w = (params["out_channels"], params["in_channels"] // params["groups"], params["kernel_h"], params["kernel_w"])
        return {"weight": w, "bias": (params["out_channels"],)}
    if kind == "linear":
        return {"weight": (params["out_features"], params["in_features"]), "bias": (params["out_features"],)}
    if kind == "batchnorm2d":
        c = (params["channels"],)
        return {"weight": c, "bias": c, "running_mean": c, "running_var": c}
    return {}


@dataclass(frozen=True)
class Layer:
    id: str
    kind: str
    params: dict
    tensors: dict = field(default_factory=dict)  # role -> float32 array
    tensor_ids: dict = field(default_factory=dict)  # role -> container id
    residual_from: int | None = None
    input_shape: tuple | None = None
    output_shape: tuple | None = None

    @property
    def quantizable(self):
        return self.kind in QUANTIZABLE_KINDS

    @property
    def weight(self):
        return self.tensors.get("weight")

    @property
    def bias(self):
        return self.tensors.get("bias")

    def __repr__(self):
        return f"Layer({self.id!r}, {self.kind}, in={self.input_shape}, out={self.output_shape})"


@dataclass(frozen=True)
class ModelGraph:
    name: str
    input_shape: tuple
    layers: tuple
    normalization: dict | None = None

    @property
    def num_quantizable(self):
        return sum(1 for layer in self.layers if layer.quantizable)

    @property
    def quantizable_indices(self):
        return tuple(i for i, layer in enumerate(self.layers) if layer.quantizable)

    def layer(self, layer_id):
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def __len__(self):
        return len(self.layers)


def quantizable_layers(graph):
    """Ids of the Conv2d/Linear layers in topological order.

    Position in this list is the coordinate of the layer in every
    quantization scheme applied to ``graph``.
    """
    return [layer.id for layer in graph.layers if layer.quantizable]


def _out_shape(layer, in_shape, layers, shapes):
    k, p = layer.kind, layer.params
    if k == "linear":
        if in_shape != (p["in_features"],):
            raise ShapeMismatch(f"{layer.id} input", (p["in_features"],), in_shape)
        return (p["out_features"],)
    if k == "flatten":
        return (math.prod(in_shape),)
    if k == "add":
        src = shapes[layer.residual_from]
        if p["shortcut"] == "identity":
            if src != in_shape:
                raise ShapeMismatch(f"{layer.id} residual from {layers[layer.residual_from].id}", in_shape, src)
        else:
            if len(src) != 3 or len(in_shape) != 3:
                raise ShapeMismatch(f"{layer.id} residual", in_shape, src)
            c1, h1, w1 = src
            c2, h2, w2 = in_shape
            ok = (c2 - c1) % 2 == 0 and h2 > 0 and w2 > 0
            ok = ok and h1 % h2 == 0 and w1 % w2 == 0 and h1 // h2 == w1 // w2
            if not ok:
                raise ShapeMismatch(f"{layer.id} padded residual from {layers[layer.residual_from].id}", in_shape, src)
        return in_shape
    if k == "relu":
        return in_shape
    if len(in_shape) != 3:
        raise ShapeMismatch(f"{layer.id} input (C,H,W)", ("C", "H", "W"), in_shape)
    c, h, w = in_shape
    if k == "conv2d":
        if c != p["in_channels"]:
            raise ShapeMismatch(f"{layer.id} input", (p["in_channels"], h, w), in_shape)
        ho = (h + 2 * p["padding"] - p["kernel_h"]) // p["stride"] + 1
        wo = (w + 2 * p["padding"] - p["kernel_w"]) // p["stride"] + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{layer.id} output", ("positive",), (p["out_channels"], ho, wo))
        return (p["out_channels"], ho, wo)
    if k == "batchnorm2d":
        if c != p["channels"]:
            raise ShapeMismatch(f"{layer.id} input", (p["channels"], h, w), in_shape)
        return in_shape
    if k == "avgpool2d":
        ho = (h - p["kernel"]) // p["stride"] + 1
        wo = (w - p["kernel"]) // p["stride"] + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{layer.id} output", ("positive",), (c, ho, wo))
        return (c, ho, wo)
    if k == "global_avg_pool":
        return (c, 1, 1)
    raise MalformedManifest(f"unknown layer kind {k!r}")


def infer_shapes(graph, input_shape=None):
    """Return a copy of ``graph`` with every layer's input/output shape set.

    Stored shapes, when present, must agree with the derived ones.
    """
    in_shape = tuple(int(d) for d in (input_shape if input_shape is not None else graph.input_shape))
    if tuple(graph.input_shape) != in_shape:
        raise ShapeMismatch("model input", graph.input_shape, in_shape)
    shapes = []
    layers = []
    cur = in_shape
    for layer in graph.layers:
        out = _out_shape(layer, cur, graph.layers, shapes)
        if layer.input_shape is not None and tuple(layer.input_shape) != cur:
            raise ShapeMismatch(f"{layer.id} stored input_shape", cur, layer.input_shape)
        if layer.output_shape is not None and tuple(layer.output_shape) != out:
            raise ShapeMismatch(f"{layer.id} stored output_shape", out, layer.output_shape)
        layers.append(replace(layer, input_shape=cur, output_shape=out))
        shapes.append(out)
        cur = out
    return replace(graph, layers=tuple(layers))


def _frozen(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.flags.writeable = False
    return arr


def build_graph(manifest, tensors):
    """Validate a manifest dict against a tensor mapping and build the graph."""
    if not isinstance(manifest, dict):
        raise MalformedManifest("manifest must be a JSON object")
    for key in ("name", "input_shape", "layers"):
        if key not in manifest:
            raise MalformedManifest(f"manifest missing {key!r}")
    if not isinstance(manifest["layers"], list):
        raise MalformedManifest("'layers' must be a list")
    try:
        input_shape = tuple(int(d) for d in manifest["input_shape"])
    except (TypeError, ValueError):
        raise MalformedManifest("'input_shape' must be a list of integers") from None
    index = {}
    layers = []
    for pos, spec in enumerate(manifest["layers"]):
        if not isinstance(spec, dict) or "id" not in spec or "kind" not in spec:
            raise MalformedManifest(f"layer #{pos} needs 'id' and 'kind'")
        lid, kind = str(spec["id"]), spec["kind"]
        if lid in index:
            raise MalformedManifest(f"duplicate layer id {lid!r}")
        params = _normalize_params(kind, spec.get("params"))
        residual = spec.get("residual_from")
        if kind == "add":
            if residual is None:
                raise MalformedManifest(f"add layer {lid!r} needs residual_from")
            if residual not in index:
                raise MalformedManifest(f"add layer {lid!r} references unknown or later layer {residual!r}")
            residual = index[residual]
        elif residual is not None:
            raise MalformedManifest(f"only add layers may set residual_from ({lid!r})")
        want = expected_tensor_shapes(kind, params)
        roles = _ROLES.get(kind, ())
        owned, ids = {}, {}
        for role in roles:
            optional = role.endswith("?")
            role = role.rstrip("?")
            tid = spec.get(role)
            if tid is None:
                if optional:
                    continue
                raise MalformedManifest(f"layer {lid!r} ({kind}) needs a {role!r} tensor")
            if tid not in tensors:
                raise MissingTensor(tid)
            arr = np.asarray(tensors[tid])
            if arr.dtype != np.float32:
                raise MalformedManifest(f"tensor {tid!r} must be float32 at rest, got {arr.dtype}")
            if tuple(arr.shape) != want[role]:
                raise ShapeMismatch(tid, want[role], arr.shape)
            if not np.isfinite(arr).all():
                raise NonFiniteWeight(tid)
            owned[role] = _frozen(arr)
            ids[role] = tid
        for role in ("weight", "bias"):
            if role not in [r.rstrip("?") for r in roles] and spec.get(role) is not None:
                raise MalformedManifest(f"layer {lid!r} ({kind}) cannot own a {role!r} tensor")
        stored_out = spec.get("output_shape")
        layers.append(
            Layer(
                id=lid,
                kind=kind,
                params=params,
                tensors=owned,
                tensor_ids=ids,
                residual_from=residual,
                output_shape=tuple(stored_out) if stored_out is not None else None,
            )
        )
        index[lid] = pos
    norm = manifest.get("normalization")
    graph = ModelGraph(name=str(manifest["name"]), input_shape=input_shape, layers=tuple(layers), normalization=norm)
    return infer_shapes(graph)


def to_manifest(graph):
    layers = []
    for layer in graph.layers:
        spec = {"id": layer.id, "kind": layer.kind, "params": dict(layer.params)}
        spec["weight"] = layer.tensor_ids.get("weight")
        spec["bias"] = layer.tensor_ids.get("bias")
        for role in ("running_mean", "running_var"):
            if role in layer.tensor_ids:
                spec[role] = layer.tensor_ids[role]
        spec["residual_from"] = graph.layers[layer.residual_from].id if layer.residual_from is not None else None
        if layer.output_shape is not None:
            spec["output_shape"] = list(layer.output_shape)
        layers.append(spec)
    out = {"name": graph.name, "input_shape": list(graph.input_shape), "layers": layers}
    if graph.normalization is not None:
        out["normalization"] = graph.normalization
    return out


def graph_tensors(graph):
    """Container id -> array, in manifest order."""
    out = {}
    for layer in graph.layers:
        for role, tid in layer.tensor_ids.items():
            out[tid] = layer.tensors[role]
    return out


def load_model(manifest_path, weights_path):
    """Build a graph from a manifest and its AIQW container.  Packed
    (quantized) weights are dequantized, so a saved quantized model loads
    as the float graph it stands for."""
    from .quantizer import PackedTensor, dequantize

    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"{manifest_path}: {exc}") from None
    tensors = {k: dequantize(v) if isinstance(v, PackedTensor) else v
               for k, v in read_container(weights_path).items()}
    return build_graph(manifest, tensors)


def save_model(graph, manifest_path, weights_path):
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(to_manifest(graph), fh, indent=1)
        fh.write("\n")
    write_container(weights_path, graph_tensors(graph))
