"""Deterministic float32 forward pass and accuracy evaluation."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .cost import fp32_scheme
from .errors import EmptySubset, ShapeMismatch
from .graph import ModelGraph
from .quantizer import QuantizedModel, apply_scheme

BN_EPS = 1e-5


def as_model(model):
    if isinstance(model, ModelGraph):
        return apply_scheme(model, fp32_scheme(model))
    return model


def _conv2d(layer, src, x):
    # x is NHWC; weights are consumed as (out, kh, kw, in/groups) rows
    p = layer.params
    n, h, w, c = x.shape
    kh, kw, s, pad = p["kernel_h"], p["kernel_w"], p["stride"], p["padding"]
    o = p["out_channels"]
    ho = (h + 2 * pad - kh) // s + 1
    wo = (w + 2 * pad - kw) // s + 1
    if kh == kw == 1 and pad == 0:
        cols = np.ascontiguousarray(x[:, ::s, ::s, :]).reshape(-1, c)
    else:
        cols = kernels.im2col_nhwc(np.ascontiguousarray(x), kh, kw, s, pad, ho, wo)
    m = n * ho * wo
    if p["groups"] == 1:
        out, nbytes = src.matmul(cols)
    else:
        mult = o // c
        patches = cols.reshape(m, kh * kw, c)
        if mult > 1:
            patches = np.repeat(patches, mult, axis=2)
        out = np.empty((m, o), np.float32)
        t = kernels.tile_rows(m, kh * kw, o)
        nbytes = 0
        for r0 in range(0, o, t):
            r1 = min(r0 + t, o)
            tile, nb = src.rows(r0, r1)
            out[:, r0:r1] = np.einsum("mkc,ck->mc", patches[:, :, r0:r1], tile)
            nbytes += nb
    if layer.bias is not None:
        out += layer.bias
        nbytes += layer.bias.size * 4
    return out.reshape(n, ho, wo, o), nbytes


def _linear(layer, src, x):
    x = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    out, nbytes = src.matmul(x)
    if layer.bias is not None:
        out += layer.bias
        nbytes += layer.bias.size * 4
    return out, nbytes


def _batchnorm(layer, x):
    t = layer.tensors
    a = t["weight"] / np.sqrt(t["running_var"] + np.float32(layer.params.get("eps", BN_EPS)))
    b = t["bias"] - t["running_mean"] * a
    return x * a + b


def _pad_shortcut(src, shape):
    c2, h2, _ = shape
    h1, _, c1 = src.shape[1:]
    s = h1 // h2
    out = src[:, ::s, ::s, :]
    extra = (c2 - c1) // 2
    if extra > 0:
        out = np.pad(out, ((0, 0), (0, 0), (0, 0), (extra, extra)))
    elif extra < 0:
        out = out[..., -extra : -extra + c2]
    return out


def to_internal(x):
    """NCHW batch -> the engine's channels-last layout."""
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)) if x.ndim == 4 else x


def from_internal(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)) if x.ndim == 4 else x


def _last_use(graph):
    last = {}
    for i, layer in enumerate(graph.layers):
        if layer.kind == "add":
            last[layer.residual_from] = i
    return last


def run_layers(model, x, start=0, stop=None, saved=None, counter=None):
    """Run layers ``start..stop-1`` on activation ``x`` (channels-last).

    ``saved`` holds earlier outputs still needed by residual adds; it is
    returned updated so that execution can be resumed later.
    """
    graph = model.graph
    stop = len(graph.layers) if stop is None else stop
    last = _last_use(graph)
    saved = dict(saved or {})
    for i in range(start, stop):
        layer = graph.layers[i]
        kind = layer.kind
        if kind == "conv2d":
            x, nbytes = _conv2d(layer, model.sources[i], x)
        elif kind == "linear":
            x, nbytes = _linear(layer, model.sources[i], x)
        else:
            nbytes = 0
            if kind == "relu":
                x = np.maximum(x, np.float32(0))
            elif kind == "batchnorm2d":
                x = _batchnorm(layer, x)
            elif kind == "add":
                src = saved[layer.residual_from]
                if layer.params["shortcut"] == "pad":
                    src = _pad_shortcut(src, layer.output_shape)
                x = x + src
            elif kind == "avgpool2d":
                k, s = layer.params["kernel"], layer.params["stride"]
                win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
                x = win.mean(axis=(4, 5), dtype=np.float32)
            elif kind == "global_avg_pool":
                x = x.mean(axis=(1, 2), keepdims=True, dtype=np.float32)
            elif kind == "flatten":
                if x.ndim == 4:
                    x = x.transpose(0, 3, 1, 2)
                x = np.ascontiguousarray(x).reshape(x.shape[0], -1)
        if counter is not None and layer.quantizable:
            counter[layer.id] = counter.get(layer.id, 0) + nbytes
        if i in last:
            saved[i] = x
        for j in [j for j in saved if last[j] <= i]:
            del saved[j]
    return x, saved


def forward(model, batch, counter=None):
    """Logits for ``batch`` (N, *input_shape).

    ``counter``, when given, accumulates weight+bias bytes read per layer id.
    """
    model = as_model(model)
    x = np.ascontiguousarray(batch, dtype=np.float32)
    if tuple(x.shape[1:]) != tuple(model.graph.input_shape):
        raise ShapeMismatch("input batch", ("N",) + tuple(model.graph.input_shape), x.shape)
    out, _ = run_layers(model, to_internal(x), counter=counter)
    return from_internal(out).reshape(out.shape[0], -1)


@dataclass(frozen=True)
class AccuracyResult:
    correct: int
    total: int
    baseline_accuracy: float | None = None

    @property
    def accuracy(self):
        return self.correct / self.total

    @property
    def acc_loss_pp(self):
        if self.baseline_accuracy is None:
            return None
        return 100.0 * (self.baseline_accuracy - self.accuracy)


def predict(model, images, batch_size=128):
    model = as_model(model)
    preds = []
    for s in range(0, len(images), batch_size):
        preds.append(np.argmax(forward(model, images[s : s + batch_size]), axis=1))
    return np.concatenate(preds) if preds else np.empty(0, np.int64)


def evaluate(model, data, subset=None, batch_size=128, baseline=None):
    """Top-1 accuracy of ``model`` on ``data`` (or on ``subset`` indices).

    Ties in the logits go to the lowest class index.  ``baseline`` is an
    FP32 accuracy on the same samples used to fill ``acc_loss_pp``.
    """
    if subset is None:
        images, labels = data.images, data.labels
    else:
        idx = np.asarray(subset, dtype=np.int64)
        if idx.size == 0:
            raise EmptySubset("evaluation subset is empty")
        images, labels = data.images[idx], data.labels[idx]
    if len(labels) == 0:
        raise EmptySubset("dataset is empty")
    pred = predict(model, images, batch_size)
    correct = int(np.count_nonzero(pred == labels))
    return AccuracyResult(correct, int(len(labels)), baseline)


__all__ = ["AccuracyResult", "QuantizedModel", "evaluate", "forward", "predict", "run_layers"]
