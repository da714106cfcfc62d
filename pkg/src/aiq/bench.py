"""Wall-clock throughput of packed-weight inference and roofline calibration."""

import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import kernels
from .cost import BitWidth, MachineModel, fp32_scheme, validate_scheme
from .errors import ConfigInvalid, KTooLarge
from .inference import from_internal, run_layers, to_internal
from .quantizer import QuantCache, apply_scheme


@dataclass(frozen=True)
class BenchConfig:
    batch: int = 1
    runs: int = 10
    warmup: int = 2
    threads: int = 2
    images: int | None = None  # images per timed run; defaults to ``batch``

    def __post_init__(self):
        if self.runs < 5:
            raise ConfigInvalid(f"runs must be >= 5 for a stable median, got {self.runs}")
        if self.warmup < 0 or self.batch < 1 or self.threads < 1:
            raise ConfigInvalid("batch and threads must be >= 1 and warmup >= 0")


@dataclass(frozen=True)
class ThroughputResult:
    scheme: tuple
    images_per_s: float
    runs: int
    warmup_runs: int
    times: tuple
    accuracy: float | None
    fingerprint: dict = field(default_factory=dict)
    batch: int = 1
    images_per_run: int = 1
    weight_bytes_per_image: int = 0

    @property
    def median_s(self):
        return statistics.median(self.times)

    def to_json(self):
        out = asdict(self)
        out["scheme"] = [int(b) for b in self.scheme]
        out["times"] = list(self.times)
        out["median_s"] = self.median_s
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cache_sizes():
    """{"L1d": bytes, "L2": ..., "L3": ...} from sysfs (empty if unavailable)."""
    out = {}
    base = Path("/sys/devices/system/cpu/cpu0/cache")
    for d in sorted(base.glob("index*")):
        try:
            level = (d / "level").read_text().strip()
            kind = (d / "type").read_text().strip()
            size = (d / "size").read_text().strip()
        except OSError:
            continue
        mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(size[-1:], 1)
        nbytes = int(size.rstrip("KMG")) * mult
        if kind == "Instruction":
            continue
        out[f"L{level}{'d' if kind == 'Data' else ''}"] = nbytes
    return out


def llc_bytes():
    sizes = cache_sizes()
    return sizes[max(sizes)] if sizes else None


def cpu_model():
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def machine_fingerprint(threads):
    return {"cpu": cpu_model(), "logical_cpus": os.cpu_count(), "threads": threads, "caches": cache_sizes(),
            "numpy": np.__version__}


def _run_once(model, chunks):
    for x in chunks:
        run_layers(model, x)


def _accuracy(model, data):
    correct = 0
    for s in range(0, len(data), 128):
        out, _ = run_layers(model, to_internal(data.images[s : s + 128]))
        pred = np.argmax(from_internal(out).reshape(out.shape[0], -1), axis=1)
        correct += int(np.count_nonzero(pred == data.labels[s : s + 128]))
    return correct / len(data)


def measure_interleaved(graph, schemes, data, config=None, cache=None, measure_accuracy=True):
    """Time several schemes with their runs interleaved (A B A B ...).

    Interleaving exposes every scheme to the same machine drift, which
    makes the comparison between them fairer than back-to-back blocks.
    Returns one ThroughputResult per scheme.
    """
    config = config or BenchConfig()
    schemes = [validate_scheme(graph, s) for s in schemes]
    cache = cache or QuantCache()
    models = [apply_scheme(graph, s, storage="packed", cache=cache) for s in schemes]
    n_img = config.images or config.batch
    idx = np.arange(n_img) % len(data)
    imgs = data.images[idx]
    chunks = [to_internal(np.ascontiguousarray(imgs[s : s + config.batch])) for s in range(0, n_img, config.batch)]
    times = [[] for _ in models]
    counted = []
    with kernels.engine_threads(config.threads):
        for model in models:
            counter = {}
            run_layers(model, chunks[0][:1], counter=counter)
            counted.append(int(sum(counter.values())))
        for _ in range(config.warmup):
            for model in models:
                _run_once(model, chunks)
        for _ in range(config.runs):
            for j, model in enumerate(models):
                t0 = time.perf_counter()
                _run_once(model, chunks)
                times[j].append(time.perf_counter() - t0)
        accs = [_accuracy(m, data) if measure_accuracy else None for m in models]
    fp = machine_fingerprint(config.threads)
    return [
        ThroughputResult(s, n_img / statistics.median(t), config.runs, config.warmup, tuple(t), acc, fp,
                         config.batch, n_img, nb)
        for s, t, acc, nb in zip(schemes, times, accs, counted)
    ]


def measure_throughput(graph, scheme, data, config=None, cache=None, measure_accuracy=True):
    """Median-of-runs images/s with packed weights decoded tile by tile.

    One run pushes ``config.images`` inputs (the first ones of ``data``,
    cycled if needed) through the model in batches of ``config.batch``.
    Accuracy, when requested, is measured on the same packed path over all
    of ``data`` outside the timed region.
    """
    return measure_interleaved(graph, [scheme], data, config, cache, measure_accuracy)[0]


def random_scheme(n, k, bits, seed):
    """k distinct uniformly random layers at ``bits``, the rest FP32."""
    if not 0 <= k <= n:
        raise KTooLarge(f"k={k} must lie in [0, {n}]")
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(n, size=k, replace=False).tolist())
    return tuple(BitWidth(bits) if i in chosen else BitWidth.FP32 for i in range(n))


def quantized_count(scheme):
    return sum(1 for b in scheme if b != BitWidth.FP32)


def compare_random_baseline(graph, k, bits, seed, data, config=None, aiq_scheme=None, cache=None):
    """Throughput of a seeded random k-layer scheme, paired with ``aiq_scheme``.

    Returns ``(random_result, aiq_result)``; ``aiq_result`` is None when no
    AIQ scheme is given.  The two schemes' runs are interleaved.
    """
    n = graph.num_quantizable
    if k > n:
        raise KTooLarge(f"k={k} exceeds the {n} quantizable layers")
    if aiq_scheme is not None and quantized_count(validate_scheme(graph, aiq_scheme)) != k:
        raise ConfigInvalid("the AIQ scheme must quantize exactly k layers")
    rnd = random_scheme(n, k, bits, seed)
    if aiq_scheme is None:
        return measure_throughput(graph, rnd, data, config, cache), None
    r, a = measure_interleaved(graph, [rnd, aiq_scheme], data, config, cache)
    return r, a


# -- roofline calibration ----------------------------------------------------

def peak_flops(n=384, min_flops=2e10, repeats=5):
    """Best FLOP/s of a register-blocked SGEMM on cache-resident operands
    (three n x n float32 blocks; n=384 fits a 2 MiB L2).  This is the same
    BLAS path the inference GEMMs use, so it is the engine's compute roof."""
    rng = np.random.default_rng(0)
    a = rng.random((n, n), dtype=np.float32)
    b = rng.random((n, n), dtype=np.float32)
    c = np.empty_like(a)
    reps = max(1, int(min_flops / (2 * n**3)))
    np.dot(a, b, out=c)
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(reps):
            np.dot(a, b, out=c)
        best.append(time.perf_counter() - t0)
    return 2.0 * n**3 * reps / min(best)


@numba.njit(cache=True)
def _stream_copy(src, dst):
    # plain loads/stores at every size (library memcpy switches to
    # non-temporal stores above a cache-dependent threshold)
    for i in range(src.shape[0]):
        dst[i] = src[i]


def available_bytes():
    try:
        for line in Path("/proc/meminfo").read_text().splitlines():
            if line.startswith("MemAvailable:"):
                return int(line.split()[1]) * 1024
    except OSError:
        pass
    return 1 << 30


def ordering_cache_bytes(factor=16, budget_fraction=0.25):
    """Largest cache level whose ``factor``-times buffer fits the per-buffer
    memory budget; used for the cache-inflation ordering check."""
    cap = int(available_bytes() * budget_fraction)
    fits = [size for size in cache_sizes().values() if factor * size <= cap]
    return max(fits) if fits else None


def bandwidth_buffer_bytes(factor=8, cache=None, budget_fraction=0.25):
    """``factor`` x LLC, capped at ``budget_fraction`` of available memory
    per buffer (a copy needs two)."""
    cache = cache or llc_bytes() or (32 << 20)
    cap = int(available_bytes() * budget_fraction)
    return max(1 << 20, min(factor * cache, cap))


def stream_bandwidth(nbytes, repeats=5):
    """Bytes/s of a streaming copy (read + write counted) over ``nbytes``."""
    n = max(1, nbytes // 4)
    src = np.ones(n, np.float32)
    dst = np.empty_like(src)
    _stream_copy(src, dst)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _stream_copy(src, dst)
        times.append(time.perf_counter() - t0)
    return 2.0 * 4 * n / statistics.median(times)


@dataclass(frozen=True)
class Calibration:
    machine: MachineModel
    buffer_bytes: int
    peak_samples: tuple
    bandwidth_samples: tuple

    @staticmethod
    def cv(xs):
        return statistics.pstdev(xs) / statistics.mean(xs)


def calibrate_machine(runs=5, buffer_bytes=None, path=None):
    """Roofline parameters for this machine.

    Peak FLOP/s comes from a cache-resident SGEMM, bandwidth from a
    streaming copy over a buffer of at least 8x the last-level cache (capped
    by available memory).  Each of ``runs`` samples is itself a best/median
    over repeats; the model uses the median sample.
    """
    buffer_bytes = buffer_bytes or bandwidth_buffer_bytes()
    peaks, bws = [], []
    for _ in range(runs):
        peaks.append(peak_flops(repeats=5))
        bws.append(stream_bandwidth(buffer_bytes, repeats=3))
    machine = MachineModel(statistics.median(peaks), statistics.median(bws))
    if path is not None:
        machine.save(path)
    return Calibration(machine, buffer_bytes, tuple(peaks), tuple(bws))


def roofline_images_per_s(graph, scheme, machine, batch=1):
    """Attainable images/s under the roofline for ``scheme`` at ``batch``."""
    from .cost import global_ai

    rep = global_ai(graph, scheme, batch)
    return machine.attainable(rep.ai) / (rep.global_flops / batch)


def default_threads():
    env = os.environ.get("AIQ_THREADS")
    return int(env) if env else 2


__all__ = [
    "BenchConfig", "ThroughputResult", "measure_throughput", "measure_interleaved", "compare_random_baseline", "random_scheme",
    "calibrate_machine", "Calibration", "peak_flops", "stream_bandwidth", "machine_fingerprint", "cache_sizes",
    "llc_bytes", "bandwidth_buffer_bytes", "ordering_cache_bytes", "roofline_images_per_s", "quantized_count", "fp32_scheme",
]
