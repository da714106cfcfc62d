"""Arithmetic-intensity-aware mixed-precision post-training quantization.

A numpy library: a model graph and analytic cost model, symmetric INT8/INT4
weight quantization with packed storage, a CPU inference engine, bit-width
search (greedy, coordinate descent, exhaustive), per-layer sensitivity
profiling and a wall-clock throughput harness.  ``python -m aiq.cli`` (or
the ``aiq`` script) exposes the same operations from the shell.
"""

from .cost import BitWidth, MachineModel, arithmetic_intensity, fp32_scheme, global_ai, uniform_scheme
from .data import Dataset, load_dataset, save_aiqd
from .errors import AIQError
from .graph import ModelGraph, build_graph, load_model, save_model
from .inference import evaluate, forward, predict
from .quantizer import PackedTensor, apply_scheme, dequantize, load_packed_model, quantize
from .search import Evaluator, coordinate_descent, exhaustive_search, greedy_search, pareto_sweep

__version__ = "0.1.0"

__all__ = [
    "AIQError", "BitWidth", "Dataset", "Evaluator", "MachineModel", "ModelGraph", "PackedTensor",
    "apply_scheme", "arithmetic_intensity", "build_graph", "coordinate_descent", "dequantize", "evaluate",
    "exhaustive_search", "forward", "fp32_scheme", "global_ai", "greedy_search", "load_dataset", "load_model",
    "load_packed_model", "pareto_sweep", "predict", "quantize", "save_aiqd", "save_model", "uniform_scheme",
]
