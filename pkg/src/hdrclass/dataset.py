"""Labeled header samples, the CSV interchange format, synthetic data, folds and batches."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

CLASSES_PREFIX = "# classes:"
VERSION_BYTE = 69  # version 4, IHL 5
PROTOCOLS = (6, 17)
PROTOCOL_POS = 9


class MalformedRow(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class HeaderSample:
    values: bytes
    label: int
    source_meta: str | None = None

    def __post_init__(self):
        if not isinstance(self.values, bytes):
            object.__setattr__(self, "values", bytes(self.values))
        if self.label < 0:
            raise ValueError("label must be non-negative")

    def __len__(self):
        return len(self.values)


class Dataset:
    """Samples stored as a (M, N) uint8 matrix plus an int label vector."""

    def __init__(self, x, y, class_names: Sequence[str], input_len: int | None = None, meta=None):
        x = np.asarray(x)
        if input_len is None:
            input_len = x.shape[1] if x.ndim == 2 else 12
        if x.size == 0:
            x = x.reshape(0, input_len)
        if x.ndim != 2 or x.shape[1] != input_len:
            raise ValueError(f"samples must have shape (M, {input_len}), got {x.shape}")
        if x.size and (x.min() < 0 or x.max() > 255):
            raise ValueError("sample bytes must lie in [0, 255]")
        self.x = x.astype(np.uint8)
        self.y = np.asarray(y, dtype=np.int64).reshape(-1)
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("one label per sample required")
        self.class_names = tuple(class_names)
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise ValueError(f"labels must lie in [0, {len(self.class_names)})")
        self.input_len = input_len
        self.meta = list(meta) if meta is not None else None
        self.x.flags.writeable = False
        self.y.flags.writeable = False

    @classmethod
    def from_samples(cls, samples: Sequence[HeaderSample], class_names, input_len: int) -> Dataset:
        x = np.array([list(s.values) for s in samples], dtype=np.int64).reshape(-1, input_len)
        y = [s.label for s in samples]
        meta = [s.source_meta for s in samples]
        return cls(x, y, class_names, input_len, meta if any(m is not None for m in meta) else None)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return self.x.shape[0]

    def sample(self, i: int) -> HeaderSample:
        meta = self.meta[i] if self.meta is not None else None
        return HeaderSample(self.x[i].tobytes(), int(self.y[i]), meta)

    def __iter__(self) -> Iterator[HeaderSample]:
        return (self.sample(i) for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.input_len == other.input_len
            and self.class_names == other.class_names
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.intp)
        meta = [self.meta[i] for i in idx] if self.meta is not None else None
        return Dataset(self.x[idx], self.y[idx], self.class_names, self.input_len, meta)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def deduplicate(self) -> Dataset:
        """Drop repeated (bytes, label) rows, keeping first occurrences in order."""
        seen = set()
        keep = []
        for i in range(len(self)):
            key = (self.x[i].tobytes(), int(self.y[i]))
            if key not in seen:
                seen.add(key)
                keep.append(i)
        return self.subset(keep)


# -- CSV ---------------------------------------------------------------------


def write_csv(dataset: Dataset, path) -> None:
    n = dataset.input_len
    with open(path, "w", newline="") as fh:
        fh.write(f"{CLASSES_PREFIX} {','.join(dataset.class_names)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"byte{i + 1}" for i in range(n)] + ["label"])
        for row, label in zip(dataset.x.tolist(), dataset.y.tolist()):
            w.writerow(row + [label])


def read_csv(path, class_names: Sequence[str] | None = None) -> Dataset:
    """Read a dataset CSV; class names come from the metadata line unless given."""
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    names = None
    first_row = 2
    if lines and lines[0].startswith(CLASSES_PREFIX):
        first_row = 3
        raw = lines[0][len(CLASSES_PREFIX):].strip()
        names = [s.strip() for s in raw.split(",")] if raw else []
        lines = lines[1:]
    if class_names is not None:
        names = list(class_names)
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = next(reader, None)
    if header is None:
        raise MalformedRow(f"{path}: missing header row")
    n = len(header) - 1
    if n < 1 or header[-1] != "label" or header[:-1] != [f"byte{i + 1}" for i in range(n)]:
        raise MalformedRow(f"{path}: header must be byte1,...,byteN,label")
    rows = []
    for lineno, row in enumerate(reader, start=first_row):
        if not row:
            continue
        if len(row) != n + 1:
            raise MalformedRow(f"{path}:{lineno}: expected {n + 1} columns, got {len(row)}")
        try:
            vals = [int(v) for v in row]
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: non-integer field") from exc
        if any(v < 0 or v > 255 for v in vals[:-1]):
            raise MalformedRow(f"{path}:{lineno}: byte value outside [0, 255]")
        if vals[-1] < 0 or (names is not None and vals[-1] >= len(names)):
            raise MalformedRow(f"{path}:{lineno}: label {vals[-1]} out of range")
        rows.append(vals)
    arr = np.array(rows, dtype=np.int64).reshape(-1, n + 1)
    if names is None:
        t = int(arr[:, -1].max()) + 1 if len(arr) else 0
        names = [str(i) for i in range(t)]
    return Dataset(arr[:, :-1], arr[:, -1], names, n)


# -- synthetic data ----------------------------------------------------------


def synth_generate(class_specs: Sequence[Sequence[np.ndarray]], count: int, seed: int, class_names=None) -> Dataset:
    """Draw ``count`` samples per class from per-position categorical distributions.

    ``class_specs[c][n]`` is a length-256 weight vector for byte position n of
    class c. Byte 0 is always 69 and byte 9 is restricted to TCP/UDP (6/17).
    """
    if len(class_specs) < 2:
        raise InvalidSpec("need at least two classes")
    n = len(class_specs[0])
    probs = []
    for c, spec in enumerate(class_specs):
        if len(spec) != n:
            raise InvalidSpec(f"class {c}: {len(spec)} positions, expected {n}")
        rows = []
        for pos, w in enumerate(spec):
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (256,):
                raise InvalidSpec(f"class {c} byte {pos}: weights must have length 256")
            if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise InvalidSpec(f"class {c} byte {pos}: weights must be non-negative and not all zero")
            rows.append(w / w.sum())
        probs.append(rows)
    rng = np.random.default_rng(seed)
    t = len(class_specs)
    x = np.zeros((t * count, n), dtype=np.int64)
    for c in range(t):
        block = x[c * count : (c + 1) * count]
        for pos in range(n):
            p = probs[c][pos]
            if pos == 0:
                block[:, 0] = VERSION_BYTE
                continue
            if pos == PROTOCOL_POS:
                pw = p[list(PROTOCOLS)]
                pw = pw / pw.sum() if pw.sum() > 0 else np.full(2, 0.5)
                block[:, pos] = rng.choice(PROTOCOLS, size=count, p=pw)
                continue
            block[:, pos] = rng.choice(256, size=count, p=p)
    y = np.repeat(np.arange(t), count)
    names = class_names or [f"class{c}" for c in range(t)]
    return Dataset(x, y, names, n)


def _range_weights(lo: int, hi: int) -> np.ndarray:
    w = np.zeros(256)
    w[lo : hi + 1] = 1.0
    return w


def _peaks(rng: np.random.Generator, k: int, spread: int) -> np.ndarray:
    w = np.zeros(256)
    for centre in rng.integers(0, 256, size=k):
        lo, hi = max(0, centre - spread), min(255, centre + spread)
        w[lo : hi + 1] += rng.uniform(0.5, 1.5)
    return w


ISCX_NAMES = ("Chat", "Email", "File Transfer", "P2P", "Streaming", "VoIP")


def header_like_specs(n_classes: int, input_len: int = 12, seed: int = 0, separable: bool = True):
    """Per-class distributions shaped like real IPv4 header bytes.

    With ``separable`` set, the high Total Length byte (position 2) takes a
    class-specific pair of values, so the label is a function of bytes 2-3.
    Otherwise classes overlap and differ only in their peak locations.
    """
    if input_len < 12:
        raise InvalidSpec("synthetic headers need at least 12 bytes")
    rng = np.random.default_rng(seed)
    uniform = np.ones(256)
    specs = []
    for c in range(n_classes):
        spec = [None] * input_len
        spec[0] = _range_weights(VERSION_BYTE, VERSION_BYTE)
        tos = np.zeros(256)
        tos[0], tos[rng.integers(1, 256)] = 0.9, 0.1
        spec[1] = tos
        if separable:
            spec[2] = _range_weights(2 * c, 2 * c + 1)
            spec[3] = uniform
        else:
            spec[2] = _peaks(rng, 2, 1)
            spec[3] = _peaks(rng, 3, 20)
        spec[4] = uniform
        spec[5] = uniform
        df = np.zeros(256)
        df[0], df[64] = 0.3, 0.7
        spec[6] = df
        spec[7] = _range_weights(0, 0)
        spec[8] = _peaks(rng, 2, 3)
        proto = np.zeros(256)
        proto[6], proto[17] = rng.uniform(0.2, 0.8), 0.5
        spec[9] = proto
        spec[10] = uniform
        spec[11] = uniform
        for pos in range(12, input_len):
            spec[pos] = uniform
        specs.append(spec)
    return specs


def synth_headers(n_classes: int, per_class: int, seed: int, input_len: int = 12, separable: bool = True) -> Dataset:
    names = list(ISCX_NAMES[:n_classes]) if n_classes <= len(ISCX_NAMES) else None
    specs = header_like_specs(n_classes, input_len, seed, separable)
    return synth_generate(specs, per_class, seed, names)


# -- folds and batches -------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    assignments: np.ndarray = field(repr=False)
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_folds(dataset: Dataset, fold_count: int = 10, seed: int = 0) -> FoldPlan:
    """Deal each class's shuffled samples round-robin over the folds."""
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    counts = dataset.class_counts()
    for c, k in enumerate(counts):
        if 0 < k < fold_count:
            raise TooFewSamples(f"class {dataset.class_names[c]!r} has {k} samples, fewer than {fold_count} folds")
    rng = np.random.default_rng(seed)
    assignments = np.full(len(dataset), -1, dtype=np.int64)
    offset = 0
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.y == c)
        idx = idx[rng.permutation(idx.size)]
        assignments[idx] = (offset + np.arange(idx.size)) % fold_count
        # continue where this class stopped so fold totals stay level
        offset = (offset + idx.size) % fold_count
    assignments.flags.writeable = False
    return FoldPlan(fold_count, assignments, seed)


def batches(indices, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffle ``indices`` from (seed, epoch) and cut into blocks; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.asarray(indices, dtype=np.intp)
    rng = np.random.default_rng([seed, epoch])
    idx = idx[rng.permutation(idx.size)]
    return [idx[i : i + batch_size] for i in range(0, idx.size, batch_size)]


def stratified_split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split into (train, test) index arrays."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.y == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(idx.size * test_fraction))
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
