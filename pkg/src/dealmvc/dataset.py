"""Multi-view datasets: on-disk format, validation, preprocessing, batching,
and a synthetic generator with a shared latent cluster structure.

On-disk layout is a plain-text manifest of ``key=value`` lines::

    name=syn3
    view.0.path=view0.csv
    view.1.path=view1.csv
    labels.path=labels.txt

Relative paths resolve against the manifest's directory. Matrix files hold
one sample per row, comma separated, no header; the label file holds one
integer per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BatchTooSmall,
    DataError,
    EmptyView,
    InvalidInput,
    InvalidShape,
    LabelOutOfRange,
    MismatchedRows,
    MissingDataset,
)

# (samples, clusters, views) of the public benchmarks; used to catch a
# manifest that points at the wrong or truncated feature files.
KNOWN_DATASETS = {
    "bbcsport": (544, 5, 2),
    "reuters": (1200, 6, 5),
    "caltech101_7": (1400, 7, 5),
    "cora": (2708, 7, 4),
    "wiki": (2866, 10, 2),
    "caltech101": (9144, 102, 5),
    "hdigit": (10000, 10, 2),
    "stl10": (13000, 10, 4),
}

NORMALIZE_MODES = ("none", "minmax", "zscore")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiViewDataset:
    """V aligned views of the same N samples, plus optional labels.

    Arrays are made read-only on construction so a dataset can be shared
    freely between threads and runs.
    """

    views: tuple
    labels: Optional[np.ndarray] = None
    names: Optional[tuple] = None
    name: str = "dataset"

    def __post_init__(self):
        if len(self.views) == 0:
            raise EmptyView("dataset has no views")
        views = []
        for v, x in enumerate(self.views):
            x = np.asarray(x)
            if not np.issubdtype(x.dtype, np.number):
                raise DataError(f"view {v} is not numeric (dtype {x.dtype})")
            x = np.array(x, dtype=np.float64, copy=True)
            if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
                raise EmptyView(f"view {v} has shape {x.shape}; expected a non-empty N x d matrix")
            if not np.all(np.isfinite(x)):
                raise DataError(f"view {v} contains non-finite values")
            views.append(_frozen(x))
        n = views[0].shape[0]
        for v, x in enumerate(views):
            if x.shape[0] != n:
                raise MismatchedRows(f"view {v} has {x.shape[0]} rows, view 0 has {n}")
        object.__setattr__(self, "views", tuple(views))

        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.ndim != 1 or y.shape[0] != n:
                raise MismatchedRows(f"labels have shape {y.shape}; expected ({n},)")
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(np.mod(y, 1) == 0):
                    raise LabelOutOfRange("labels must be integers")
            y = np.array(y, dtype=np.int64, copy=True)
            uniq = np.unique(y)
            k = len(uniq)
            if uniq[0] < 0 or uniq[-1] >= k:
                raise LabelOutOfRange(
                    f"labels must cover 0..K-1 exactly; found {k} distinct values in [{uniq[0]}, {uniq[-1]}]"
                )
            object.__setattr__(self, "labels", _frozen(y))

        if self.names is not None:
            if len(self.names) != len(views):
                raise InvalidInput("one name per view is required")
            object.__setattr__(self, "names", tuple(str(s) for s in self.names))

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list:
        return [x.shape[1] for x in self.views]

    @property
    def n_clusters(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(self.labels.max()) + 1

    def subset(self, indices) -> "MultiViewDataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return MultiViewDataset(tuple(x[idx] for x in self.views), labels, self.names, self.name)


@dataclass(frozen=True)
class BatchView:
    indices: np.ndarray
    views: tuple = field(repr=False)

    def __len__(self):
        return len(self.indices)


# ---------------------------------------------------------------------------
# disk I/O


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingDataset(f"manifest not found: {path}")
    entries = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _read_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingDataset(f"view file not found: {path}")
    if path.stat().st_size == 0:
        raise EmptyView(f"view file is empty: {path}")
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if x.size == 0:
        raise EmptyView(f"view file has no rows: {path}")
    return x


def _read_labels(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingDataset(f"label file not found: {path}")
    values = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        s = raw.strip()
        if not s:
            continue
        try:
            values.append(int(s))
        except ValueError:
            raise DataError(f"{path}:{lineno}: label {s!r} is not an integer") from None
    return np.asarray(values, dtype=np.int64)


def check_known_shape(ds: MultiViewDataset) -> None:
    """Reject a dataset whose name is a known benchmark but whose shape is not."""
    key = ds.name.strip().lower().replace("-", "_").replace(" ", "_")
    if key not in KNOWN_DATASETS:
        return
    n, k, v = KNOWN_DATASETS[key]
    got = (ds.n_samples, ds.n_clusters if ds.labels is not None else k, ds.n_views)
    if got != (n, k, v):
        raise InvalidShape(
            f"{ds.name}: expected N={n}, K={k}, V={v}; got N={got[0]}, K={got[1]}, V={got[2]}"
        )


def load_dataset(path) -> MultiViewDataset:
    """Load a dataset from its manifest file (or a directory holding ``manifest.txt``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    entries = read_manifest(path)
    base = path.parent

    view_keys = {}
    for key in entries:
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "view" and parts[2] == "path":
            try:
                view_keys[int(parts[1])] = key
            except ValueError:
                raise DataError(f"bad view index in key {key!r}") from None
    if len(view_keys) < 2:
        raise DataError(f"{path}: manifest must list at least two views, found {len(view_keys)}")
    order = sorted(view_keys)
    if order != list(range(len(order))):
        raise DataError(f"{path}: view indices must be 0..V-1, got {order}")

    views = [_read_matrix(base / entries[view_keys[i]]) for i in order]
    labels = None
    if "labels.path" in entries:
        labels = _read_labels(base / entries["labels.path"])
    name = entries.get("name", path.parent.name)
    names = tuple(Path(entries[view_keys[i]]).stem for i in order)
    ds = MultiViewDataset(tuple(views), labels, names, name)
    check_known_shape(ds)
    return ds


def save_dataset(ds: MultiViewDataset, out_dir) -> Path:
    """Write ``ds`` in the manifest format; returns the manifest path.

    Floats are written with 17 significant digits so a reload is exact and
    reruns produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"name={ds.name}"]
    for v, x in enumerate(ds.views):
        fname = f"view{v}.csv"
        np.savetxt(out / fname, x, fmt="%.17g", delimiter=",")
        lines.append(f"view.{v}.path={fname}")
    if ds.labels is not None:
        np.savetxt(out / "labels.txt", ds.labels, fmt="%d")
        lines.append("labels.path=labels.txt")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# preprocessing


def normalize_views(ds: MultiViewDataset, mode: str = "minmax") -> MultiViewDataset:
    """Column-wise normalization. Constant columns map to 0 in both modes."""
    if mode not in NORMALIZE_MODES:
        raise InvalidInput(f"unknown normalization {mode!r}; choose from {NORMALIZE_MODES}")
    if mode == "none":
        return ds
    out = []
    for x in ds.views:
        if mode == "minmax":
            lo = x.min(axis=0)
            span = x.max(axis=0) - lo
            scale = np.where(span > 0, span, 1.0)
            y = np.where(span > 0, (x - lo) / scale, 0.0)
        else:
            mu = x.mean(axis=0)
            sd = x.std(axis=0)
            scale = np.where(sd > 0, sd, 1.0)
            y = np.where(sd > 0, (x - mu) / scale, 0.0)
        out.append(y)
    return MultiViewDataset(tuple(out), ds.labels, ds.names, ds.name)


def batch_iter(ds: MultiViewDataset, batch_size: int, shuffle: bool = True, seed: int = 0) -> list:
    """Partition the samples into batches for one pass.

    A trailing batch of a single sample is folded into its predecessor, so
    every batch has at least two rows.
    """
    if batch_size < 2:
        raise BatchTooSmall(f"batch_size must be >= 2, got {batch_size}")
    n = ds.n_samples
    if n < 2:
        raise BatchTooSmall("cannot form a batch of two or more from a single sample")
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    else:
        order = np.arange(n)
    bounds = list(range(0, n, batch_size)) + [n]
    chunks = [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return [BatchView(idx, tuple(x[idx] for x in ds.views)) for idx in chunks]


# ---------------------------------------------------------------------------
# synthetic data


def latent_centers(rng: np.random.Generator, K: int, separation: float, noise: float) -> np.ndarray:
    """K x K matrix whose rows are pairwise exactly ``separation * noise`` apart.

    Rows of a random orthogonal matrix are orthonormal, hence sqrt(2) apart.
    """
    rotation, _ = np.linalg.qr(rng.standard_normal((K, K)))
    return (separation * noise / np.sqrt(2.0)) * rotation


def generate_synthetic(
    K: int,
    N: int,
    dims: Sequence[int],
    separation: float = 6.0,
    noise: float = 1.0,
    seed: int = 0,
    name: str = "synthetic",
) -> MultiViewDataset:
    """Gaussian clusters in a shared K-dim latent space, observed through one
    random linear map per view plus view-specific Gaussian noise.

    Latent centers sit on a randomly rotated scaled simplex, so every pair is
    exactly ``separation * noise`` apart. Cluster sizes are balanced (they
    differ by at most one) so every label occurs.
    """
    dims = [int(d) for d in dims]
    if K < 2:
        raise InvalidShape(f"need K >= 2 clusters, got {K}")
    if N < K:
        raise InvalidShape(f"need N >= K samples, got N={N}, K={K}")
    if not dims or min(dims) < 1:
        raise InvalidShape(f"view dimensions must be positive, got {dims}")
    if noise <= 0:
        raise InvalidInput(f"noise must be > 0, got {noise}")
    if separation < 0:
        raise InvalidInput(f"separation must be >= 0, got {separation}")

    rng = np.random.default_rng(seed)
    centers = latent_centers(rng, K, separation, noise)
    labels = rng.permutation(np.arange(N) % K)
    latent = centers[labels] + noise * rng.standard_normal((N, K))

    views = []
    for d in dims:
        proj = rng.standard_normal((K, d)) / np.sqrt(K)
        views.append(latent @ proj + noise * rng.standard_normal((N, d)))
    names = tuple(f"view{v}" for v in range(len(dims)))
    return MultiViewDataset(tuple(views), labels, names, name)
