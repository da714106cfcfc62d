"""AI-aware objective and mixed-precision scheme search.

The objective for a scheme q is

    loss(q) = -lam * ai_term(q) + (1 - lam) * acc_loss_pp(q)

where ``ai_term`` is AI(q) (``ai_normalization="none"``) or AI(q)/AI(fp32)
(``"baseline_relative"``), and ``acc_loss_pp`` is the accuracy drop from the
FP32 model in percentage points on the evaluation subset.  Lower is better.
"""

import csv
import itertools
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cost import DEFAULT_BITS, BitWidth, arithmetic_intensity, fp32_scheme, parse_bits, validate_scheme
from .data import search_subset
from .errors import ConfigInvalid, EmptySubset, SpaceTooLarge
from .inference import from_internal, run_layers, to_internal
from .quantizer import QuantCache, apply_scheme

AI_NORMALIZATIONS = ("none", "baseline_relative")
ALGORITHMS = ("greedy", "coord", "exhaustive")


@dataclass(frozen=True)
class Objective:
    lam: float
    baseline_ai: float
    baseline_acc: float
    ai_normalization: str = "none"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigInvalid(f"lambda must lie in [0, 1], got {self.lam}")
        if self.ai_normalization not in AI_NORMALIZATIONS:
            raise ConfigInvalid(f"ai_normalization must be one of {AI_NORMALIZATIONS}")
        if not self.baseline_ai > 0:
            raise ConfigInvalid("baseline AI must be positive")

    def ai_term(self, ai):
        return ai / self.baseline_ai if self.ai_normalization == "baseline_relative" else ai

    def acc_loss_pp(self, accuracy):
        return 100.0 * (self.baseline_acc - accuracy)

    def loss(self, ai, acc_loss_pp):
        return -self.lam * self.ai_term(ai) + (1.0 - self.lam) * acc_loss_pp

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


def loss(objective, ai, acc_loss_pp):
    return objective.loss(ai, acc_loss_pp)


@dataclass(frozen=True)
class EvalRecord:
    scheme: tuple
    ai: float
    accuracy: float
    acc_loss_pp: float
    loss: float
    evals_used: int = 0
    seed: int = 0
    lam: float | None = None
    ai_normalization: str = "none"
    algorithm: str = ""

    @property
    def scheme_str(self):
        return ",".join(str(int(b)) for b in self.scheme)

    def to_row(self):
        return {
            "scheme": self.scheme_str,
            "ai": repr(self.ai),
            "accuracy": repr(self.accuracy),
            "acc_loss_pp": repr(self.acc_loss_pp),
            "loss": repr(self.loss),
            "evals_used": self.evals_used,
            "lambda": "" if self.lam is None else repr(self.lam),
            "algorithm": self.algorithm,
            "seed": self.seed,
        }

    def to_json(self):
        out = asdict(self)
        out["scheme"] = [int(b) for b in self.scheme]
        return out


RECORD_COLUMNS = ["scheme", "ai", "accuracy", "acc_loss_pp", "loss", "evals_used", "lambda", "algorithm", "seed"]


def write_records_csv(path, records, extra=None):
    """EvalRecord CSV; ``extra`` maps column name -> per-record values."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS + list(extra))
        for k, rec in enumerate(records):
            row = rec.to_row()
            w.writerow([row[c] for c in RECORD_COLUMNS] + [extra[c][k] for c in extra])


def read_records_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(
            EvalRecord(
                scheme=tuple(BitWidth(int(b)) for b in row["scheme"].split(",")),
                ai=float(row["ai"]),
                accuracy=float(row["accuracy"]),
                acc_loss_pp=float(row["acc_loss_pp"]),
                loss=float(row["loss"]),
                evals_used=int(row["evals_used"]),
                seed=int(row["seed"]),
                lam=float(row["lambda"]) if row["lambda"] else None,
                algorithm=row["algorithm"],
            )
        )
    return out


class Evaluator:
    """Analytic AI plus measured accuracy for quantization schemes.

    Accuracy is measured on a fixed subset of ``data`` (``subset_size``
    samples drawn with ``seed``; pass ``subset_size=None`` for the whole
    set).  Results are memoized per scheme.  After :meth:`set_base`, schemes
    that agree with the base on a prefix of layers resume the forward pass
    from a stored activation checkpoint instead of recomputing the prefix;
    the numerics are unchanged because every layer runs on the same batches.
    """

    def __init__(self, graph, data, subset_size=1000, seed=0, subset=None, batch=1, traffic="fused",
                 storage="fake", eval_batch_size=128, cache=True, incremental=True,
                 checkpoint_budget=1 << 30, workers=1):
        self.graph = graph
        self.data = data
        self.seed = seed
        if subset is None:
            subset = search_subset(len(data), subset_size, seed)
        self.subset = np.asarray(subset, dtype=np.int64)
        if self.subset.size == 0:
            raise EmptySubset("evaluation subset is empty")
        self.batch = batch
        self.traffic = traffic
        self.storage = storage
        self.cache_enabled = cache
        self.incremental = incremental
        self.checkpoint_budget = checkpoint_budget
        self.workers = max(1, int(workers))
        self.qcache = QuantCache()
        self.labels = data.labels[self.subset]
        images = data.images[self.subset]
        self.chunks = [to_internal(np.ascontiguousarray(images[s : s + eval_batch_size], dtype=np.float32))
                       for s in range(0, len(images), eval_batch_size)]
        self.qidx = graph.quantizable_indices
        self._acc = {}
        self._ai = {}
        self._lock = threading.Lock()
        self._base = None
        self.forward_evals = 0
        self.fp32_scheme = fp32_scheme(graph)
        self.baseline_ai = self.ai(self.fp32_scheme)
        self.baseline_accuracy = self.accuracy(self.fp32_scheme)

    @property
    def n(self):
        return self.graph.num_quantizable

    def objective(self, lam=0.9, ai_normalization="none"):
        return Objective(float(lam), self.baseline_ai, self.baseline_accuracy, ai_normalization)

    def ai(self, scheme):
        scheme = validate_scheme(self.graph, scheme)
        hit = self._ai.get(scheme)
        if hit is None:
            hit = arithmetic_intensity(self.graph, scheme, self.batch, self.traffic)
            self._ai[scheme] = hit
        return hit

    def _model(self, scheme):
        return apply_scheme(self.graph, scheme, storage=self.storage, cache=self.qcache)

    def _count(self, logits, k):
        lo = sum(len(c) for c in self.chunks[:k])
        pred = np.argmax(from_internal(logits).reshape(logits.shape[0], -1), axis=1)
        return int(np.count_nonzero(pred == self.labels[lo : lo + len(pred)]))

    def _measure(self, scheme):
        model = self._model(scheme)
        start_layer, states = 0, None
        base = self._base
        if base is not None:
            first = next((i for i, (a, b) in enumerate(zip(scheme, base[0])) if a != b), None)
            if first is not None:
                start_layer, states = self.qidx[first], base[1]
        correct = 0
        for k, x in enumerate(self.chunks):
            saved = None
            if states is not None:
                x, saved = states[k][start_layer]
            out, _ = run_layers(model, x, start=start_layer, saved=saved)
            correct += self._count(out, k)
        with self._lock:
            self.forward_evals += 1
        return correct / len(self.labels)

    def accuracy(self, scheme):
        scheme = validate_scheme(self.graph, scheme)
        if self.cache_enabled:
            hit = self._acc.get(scheme)
            if hit is not None:
                return hit
        acc = self._measure(scheme)
        if self.cache_enabled:
            with self._lock:
                self._acc[scheme] = acc
        return acc

    def _checkpoint_bytes(self):
        total = 0
        for li in self.qidx:
            layer = self.graph.layers[li]
            total += 4 * int(np.prod(layer.input_shape)) * len(self.labels) * 2
        return total

    def set_base(self, scheme):
        """Store activation checkpoints before every quantizable layer of
        ``scheme`` so prefix-sharing schemes can resume from them."""
        scheme = validate_scheme(self.graph, scheme)
        if not self.incremental or self._checkpoint_bytes() > self.checkpoint_budget:
            return
        if self._base is not None and self._base[0] == scheme:
            return
        model = self._model(scheme)
        states = []
        correct = 0
        for k, x in enumerate(self.chunks):
            ck = {}
            saved = {}
            pos = 0
            for li in self.qidx:
                x, saved = run_layers(model, x, start=pos, stop=li, saved=saved)
                ck[li] = (x, dict(saved))
                pos = li
            x, _ = run_layers(model, x, start=pos, saved=saved)
            correct += self._count(x, k)
            states.append(ck)
        self._base = (scheme, states)
        if self.cache_enabled and scheme not in self._acc:
            self._acc[scheme] = correct / len(self.labels)

    def clear_base(self):
        self._base = None

    def record(self, scheme, objective, **extra):
        scheme = validate_scheme(self.graph, scheme)
        ai = self.ai(scheme)
        acc = self.accuracy(scheme)
        alp = objective.acc_loss_pp(acc)
        return EvalRecord(scheme, ai, acc, alp, objective.loss(ai, alp), seed=self.seed, lam=objective.lam,
                          ai_normalization=objective.ai_normalization, **extra)

    def records(self, schemes, objective):
        if self.workers == 1 or len(schemes) < 2:
            return [self.record(s, objective) for s in schemes]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(lambda s: self.record(s, objective), schemes))


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    layer: int
    layer_id: str
    from_bits: int
    to_bits: int
    delta: float
    accepted: bool
    record: EvalRecord

    @property
    def move(self):
        return f"{self.layer_id}: {self.from_bits}->{self.to_bits}"

    def to_json(self):
        return {"iteration": self.iteration, "move": self.move, "layer": self.layer,
                "delta_loss": self.delta, "accepted": self.accepted, "record": self.record.to_json()}


@dataclass
class SearchTrace:
    algorithm: str
    objective: Objective
    initial: EvalRecord
    steps: list = field(default_factory=list)
    final: EvalRecord | None = None
    evals_used: int = 0
    passes: int = 0

    @property
    def accepted(self):
        return [s for s in self.steps if s.accepted]

    def accepted_losses(self):
        return [self.initial.loss] + [s.record.loss for s in self.accepted]

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for step in self.steps:
                fh.write(json.dumps(step.to_json(), sort_keys=True) + "\n")


def _bitset(bits):
    q = sorted({parse_bits(b) for b in bits}, reverse=True)
    if BitWidth.FP32 not in q:
        raise ConfigInvalid("the bit-set must contain FP32 (the search starts from the FP32 model)")
    return tuple(q)


def greedy_search(evaluator, objective, bits=DEFAULT_BITS, moves="any-lower", max_iters=None):
    """Greedy descent from the all-FP32 scheme.

    Each iteration scores every single-layer reduction to a lower bit-width
    (``moves="fp32-only"`` restricts moves to layers still at FP32), takes
    the one with the lowest loss and stops when it does not lower the loss or
    after ``max_iters`` iterations.  The default budget lets every layer
    take each of its possible steps once: L iterations for ``fp32-only``
    moves and L*(|Q|-1) for ``any-lower`` (a layer may step 32->8->4).
    Ties go to the earliest layer, then to the higher bit-width.
    """
    if moves not in ("any-lower", "fp32-only"):
        raise ConfigInvalid("moves must be 'any-lower' or 'fp32-only'")
    q = _bitset(bits)
    ids = [evaluator.graph.layers[i].id for i in evaluator.qidx]
    current = evaluator.fp32_scheme
    cur = evaluator.record(current, objective, algorithm="greedy")
    trace = SearchTrace("greedy", objective, cur)
    n = evaluator.n
    if max_iters is None:
        max_iters = n if moves == "fp32-only" else n * (len(q) - 1)
    for t in range(max_iters):
        cands = [(i, b) for i in range(n) for b in q
                 if b < current[i] and (moves == "any-lower" or current[i] == BitWidth.FP32)]
        if not cands:
            break
        evaluator.set_base(current)
        schemes = [current[:i] + (b,) + current[i + 1:] for i, b in cands]
        recs = evaluator.records(schemes, objective)
        trace.evals_used += len(recs)
        k = min(range(len(recs)), key=lambda j: (recs[j].loss, j))
        i, b = cands[k]
        delta = recs[k].loss - cur.loss
        accepted = delta < 0
        rec = replace(recs[k], evals_used=trace.evals_used, algorithm="greedy")
        trace.steps.append(TraceStep(t, i, ids[i], int(current[i]), int(b), delta, accepted, rec))
        if not accepted:
            break
        current, cur = schemes[k], rec
    trace.final = replace(cur, evals_used=trace.evals_used)
    return trace


def coordinate_descent(evaluator, objective, bits=DEFAULT_BITS, max_passes=None):
    """Cyclic coordinate descent from the all-FP32 scheme.

    For each layer in order, every alternative bit-width is scored with the
    other layers held fixed and the best is taken if it lowers the loss (on
    a tie the current bit-width stays; among equal alternatives the higher
    bit-width wins).  Full passes repeat until one changes nothing.
    """
    q = _bitset(bits)
    ids = [evaluator.graph.layers[i].id for i in evaluator.qidx]
    current = evaluator.fp32_scheme
    cur = evaluator.record(current, objective, algorithm="coord")
    trace = SearchTrace("coord", objective, cur)
    it = 0
    while max_passes is None or trace.passes < max_passes:
        trace.passes += 1
        changed = False
        for i in range(evaluator.n):
            options = [b for b in q if b != current[i]]
            evaluator.set_base(current)
            schemes = [current[:i] + (b,) + current[i + 1:] for b in options]
            recs = evaluator.records(schemes, objective)
            trace.evals_used += len(recs)
            k = min(range(len(recs)), key=lambda j: (recs[j].loss, j))
            delta = recs[k].loss - cur.loss
            accepted = delta < 0
            rec = replace(recs[k], evals_used=trace.evals_used, algorithm="coord")
            trace.steps.append(TraceStep(it, i, ids[i], int(current[i]), int(options[k]), delta, accepted, rec))
            it += 1
            if accepted:
                current, cur = schemes[k], rec
                changed = True
        if not changed:
            break
    trace.final = replace(cur, evals_used=trace.evals_used)
    return trace


def exhaustive_search(evaluator, objective, bits=DEFAULT_BITS, cap=10_000):
    """Global optimum by enumeration; ties go to the lexicographically
    higher scheme (higher bit-widths first)."""
    q = _bitset(bits)
    size = len(q) ** evaluator.n
    if size > cap:
        raise SpaceTooLarge(f"{len(q)}^{evaluator.n} = {size} schemes exceeds the cap of {cap}")
    evaluator.clear_base()
    best = None
    count = 0
    for scheme in itertools.product(q, repeat=evaluator.n):
        rec = evaluator.record(scheme, objective, algorithm="exhaustive")
        count += 1
        if best is None or rec.loss < best.loss:
            best = rec
    return replace(best, evals_used=count)


def run_search(evaluator, objective, algorithm="greedy", bits=DEFAULT_BITS, **kwargs):
    """Dispatch by name; returns (final EvalRecord, SearchTrace or None)."""
    if algorithm == "greedy":
        trace = greedy_search(evaluator, objective, bits, **kwargs)
    elif algorithm == "coord":
        trace = coordinate_descent(evaluator, objective, bits, **kwargs)
    elif algorithm == "exhaustive":
        return exhaustive_search(evaluator, objective, bits, **kwargs), None
    else:
        raise ConfigInvalid(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    return trace.final, trace


@dataclass(frozen=True)
class SweepPoint:
    record: EvalRecord
    dominated: bool
    label: str = "aiq"


def dominated_flags(records):
    """r is dominated iff another record has >= AI and >= accuracy, one strictly."""
    flags = []
    for r in records:
        flags.append(any(
            s.ai >= r.ai and s.accuracy >= r.accuracy and (s.ai > r.ai or s.accuracy > r.accuracy)
            for s in records
        ))
    return flags


def pareto_sweep(evaluator, lambdas, algorithm="greedy", bits=DEFAULT_BITS, ai_normalization="none",
                 include_uniform=False):
    """One search per lambda, annotated with Pareto-dominance flags.

    With ``include_uniform`` the uniform FP32/INT8/INT4 schemes are added as
    reference rows (labelled ``uniform:<bits>``) and take part in the
    dominance check.
    """
    base = evaluator.objective(0.0, ai_normalization)
    labels, records = [], []
    for lam in lambdas:
        if not 0.0 <= float(lam) <= 1.0:
            raise ConfigInvalid(f"lambda {lam} outside [0, 1]")
        obj = base.with_lambda(lam)
        rec, _ = run_search(evaluator, obj, algorithm, bits)
        records.append(replace(rec, algorithm=algorithm))
        labels.append("aiq")
    if include_uniform:
        for b in _bitset(bits):
            scheme = (b,) * evaluator.n
            obj = base.with_lambda(lambdas[-1] if lambdas else 0.9)
            records.append(evaluator.record(scheme, obj, algorithm=f"uniform:{BitWidth(b).label}"))
            labels.append(f"uniform:{BitWidth(b).label}")
    flags = dominated_flags(records)
    return [SweepPoint(r, f, lab) for r, f, lab in zip(records, flags, labels)]


def combined_score(record):
    """AI (FLOPs/byte) times accuracy in percent."""
    return record.ai * 100.0 * record.accuracy


def reevaluate(record, evaluator, objective=None):
    """Re-score ``record``'s scheme on ``evaluator`` (typically the full
    evaluation set), with baselines taken from that evaluator."""
    lam = record.lam if record.lam is not None else 0.9
    objective = objective or evaluator.objective(lam, record.ai_normalization)
    return replace(evaluator.record(record.scheme, objective), evals_used=record.evals_used,
                   algorithm=record.algorithm)
