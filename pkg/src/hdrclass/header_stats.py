"""Per-class, per-byte histograms of header values scaled to [0, 1]."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

N_BINS = 20
BIN_EDGES = tuple(round(0.05 * b, 2) for b in range(N_BINS + 1))


class EmptyDataset(ValueError):
    pass


def byte_bin(v):
    """Bin of v/255 over 20 equal intervals, left-closed except the closed last one.

    Integer arithmetic keeps values on interior edges (e.g. 51/255 == 0.2)
    in the upper bin.
    """
    return np.minimum(np.asarray(v, dtype=np.int64) * N_BINS // 255, N_BINS - 1)


@dataclass
class HistogramGrid:
    counts: np.ndarray  # (T, N, 20)
    class_names: tuple[str, ...]

    @property
    def bin_edges(self) -> tuple[float, ...]:
        return BIN_EDGES

    @property
    def per_class_totals(self) -> np.ndarray:
        return self.counts[:, 0, :].sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, HistogramGrid):
            return NotImplemented
        return self.class_names == other.class_names and np.array_equal(self.counts, other.counts)

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "bin_edges": list(BIN_EDGES),
            "per_class_totals": self.per_class_totals.tolist(),
            "counts": self.counts.tolist(),
        }


def compute_histograms(dataset) -> HistogramGrid:
    if len(dataset) == 0:
        raise EmptyDataset("cannot build histograms from an empty dataset")
    t, n = dataset.n_classes, dataset.input_len
    bins = byte_bin(dataset.x)
    counts = np.zeros((t, n, N_BINS), dtype=np.int64)
    cols = np.broadcast_to(np.arange(n), bins.shape)
    labels = np.broadcast_to(dataset.y[:, None], bins.shape)
    np.add.at(counts, (labels, cols, bins), 1)
    return HistogramGrid(counts, tuple(dataset.class_names))


def export_grid(grid: HistogramGrid, path, fmt: str = "csv") -> None:
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(grid.to_dict(), fh, indent=1)
            fh.write("\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# classes: {','.join(grid.class_names)}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "byte", "bin", "count"])
            t, n, nb = grid.counts.shape
            for c in range(t):
                for b in range(n):
                    for k in range(nb):
                        w.writerow([c, b, k, int(grid.counts[c, b, k])])
    else:
        raise ValueError(f"unknown grid format {fmt!r}")


def read_grid(path, fmt: str | None = None) -> HistogramGrid:
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    if fmt == "json":
        with open(path) as fh:
            doc = json.load(fh)
        return HistogramGrid(np.asarray(doc["counts"], dtype=np.int64), tuple(doc["class_names"]))
    with open(path, newline="") as fh:
        first = fh.readline()
        names = tuple(s.strip() for s in first.split(":", 1)[1].split(",")) if first.startswith("# classes:") else None
        if names is None:
            fh.seek(0)
        rows = [tuple(map(int, r)) for r in list(csv.reader(fh))[1:] if r]
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    t, n = int(arr[:, 0].max()) + 1, int(arr[:, 1].max()) + 1
    counts = np.zeros((t, n, N_BINS), dtype=np.int64)
    counts[arr[:, 0], arr[:, 1], arr[:, 2]] = arr[:, 3]
    return HistogramGrid(counts, names or tuple(str(c) for c in range(t)))
