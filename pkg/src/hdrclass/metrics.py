"""Confusion-matrix metrics and per-packet latency measurement."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

AVERAGING = "macro"


class EmptySubset(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Counts indexed [true class, predicted class]."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> ConfusionMatrix:
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) treating class ``c`` as the positive class."""
        tp = int(self.counts[c, c])
        fp = int(self.counts[:, c].sum()) - tp
        fn = int(self.counts[c, :].sum()) - tp
        return tp, fp, fn, self.total - tp - fp - fn


def _ratio(num: int, den: int) -> tuple[float, bool]:
    # 0/0 is reported as 0 and flagged
    return (num / den, False) if den else (0.0, True)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool


@dataclass
class LatencyStats:
    iterations: int
    mean_ms: float
    p50_ms: float
    p99_ms: float

    @classmethod
    def from_seconds(cls, samples) -> LatencyStats:
        ms = np.asarray(samples, dtype=np.float64) * 1e3
        return cls(int(ms.size), float(ms.mean()), float(np.percentile(ms, 50)), float(np.percentile(ms, 99)))


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    per_class: list[ClassMetrics]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    sample_count: int
    class_names: tuple[str, ...] = ()
    averaging: str = AVERAGING
    latency: dict[str, LatencyStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "averaging": self.averaging,
            "sample_count": self.sample_count,
            "class_names": list(self.class_names),
            "accuracy": self.accuracy,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "micro": {"precision": self.micro_precision, "recall": self.micro_recall, "f1": self.micro_f1},
            "per_class": [asdict(m) for m in self.per_class],
            "confusion": self.confusion.counts.tolist(),
            "latency": {k: asdict(v) for k, v in self.latency.items()},
        }


def report_from_confusion(cm: ConfusionMatrix, class_names=()) -> EvalReport:
    t = cm.counts.shape[0]
    per_class = []
    for c in range(t):
        tp, fp, fn, _ = cm.one_vs_rest(c)
        p, p_deg = _ratio(tp, tp + fp)
        r, r_deg = _ratio(tp, tp + fn)
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class.append(ClassMetrics(p, r, f1, tp + fn, p_deg or r_deg))
    total = cm.total
    accuracy = float(np.trace(cm.counts)) / total if total else 0.0
    # single-label multiclass: micro P = micro R = micro F1 = accuracy
    return EvalReport(
        confusion=cm,
        per_class=per_class,
        accuracy=accuracy,
        macro_precision=sum(m.precision for m in per_class) / t,
        macro_recall=sum(m.recall for m in per_class) / t,
        macro_f1=sum(m.f1 for m in per_class) / t,
        micro_precision=accuracy,
        micro_recall=accuracy,
        micro_f1=accuracy,
        sample_count=total,
        class_names=tuple(class_names),
    )


def evaluate(model, dataset, indices=None, batch_size: int = 1024) -> EvalReport:
    """Argmax predictions of ``model`` on ``dataset`` (optionally a subset) scored."""
    if model.config.t != dataset.n_classes:
        raise ValueError(f"model has {model.config.t} classes, dataset has {dataset.n_classes}")
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.intp)
    if idx.size == 0:
        raise EmptySubset("nothing to evaluate")
    preds = np.concatenate([model.predict(dataset.x[idx[i : i + batch_size]]) for i in range(0, idx.size, batch_size)])
    cm = ConfusionMatrix.from_predictions(dataset.y[idx], preds, dataset.n_classes)
    return report_from_confusion(cm, dataset.class_names)


def _time_calls(fn, items, iterations: int, warmup: int) -> list[float]:
    n = len(items)
    for i in range(warmup):
        fn(items[i % n])
    out = []
    clock = time.perf_counter
    for i in range(iterations):
        item = items[i % n]
        t0 = clock()
        fn(item)
        out.append(clock() - t0)
    return out


def bench_latency(model, samples: np.ndarray, iterations: int = 1000, warmup: int = 100, frames=None) -> dict[str, LatencyStats]:
    """Per-packet timings at batch size 1.

    ``forward`` times the model alone. ``preprocess`` times frame -> sample
    extraction over ``frames`` (pairs of link type and frame bytes); when no
    frames are given, Ethernet frames are rebuilt from ``samples``.
    """
    from .pcap import extract_from_frame, frame_from_sample

    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[None, :]
    rows = [samples[i : i + 1] for i in range(samples.shape[0])]
    fwd = _time_calls(model.predict_proba, rows, iterations, warmup)
    if frames is None:
        frames = [(1, frame_from_sample(bytes(r[0].tolist()))) for r in rows]
    n = model.config.n
    pre = _time_calls(lambda f: extract_from_frame(f[1], f[0], 0, n), frames, iterations, warmup)
    return {"forward": LatencyStats.from_seconds(fwd), "preprocess": LatencyStats.from_seconds(pre)}
