"""Datasets for desk-scale retraining runs.

Random streams come from numpy's Philox4x64 counter-based generator keyed
through ``SeedSequence([seed, stream])``, so every consumer (data, init,
shuffling) draws from its own reproducible stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STREAM_DATA = 1
STREAM_INIT = 2
STREAM_SHUFFLE = 3


def rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True, eq=False)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    classes: int

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.x_train, self.y_train
        if which == "eval":
            if len(self.y_eval) == 0:
                # single-split datasets score on their training rows
                return self.x_train, self.y_train
            return self.x_eval, self.y_eval
        raise ValueError(f"unknown split {which!r}")


def make_synthetic(seed: int, n_train: int = 1024, n_eval: int = 512, classes: int = 2,
                   dim: int = 16, separation: float = 4.0) -> Dataset:
    """Gaussian clusters with unit-variance noise around random class centres.

    Centres are drawn on a sphere of radius ``separation / 2`` so two classes
    sit about ``separation`` apart.
    """
    if classes < 2:
        raise ValueError(f"classes must be >= 2, got {classes}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_train < 1 or n_eval < 0:
        raise ValueError(f"need n_train >= 1 and n_eval >= 0, got {n_train}, {n_eval}")
    g = rng(seed, STREAM_DATA)
    centres = g.standard_normal((classes, dim))
    centres *= (separation / 2) / np.linalg.norm(centres, axis=1, keepdims=True)

    def draw(n):
        y = np.arange(n) % classes
        g.shuffle(y)
        x = centres[y] + g.standard_normal((n, dim))
        return x, y.astype(np.int64)

    x_tr, y_tr = draw(n_train)
    x_ev, y_ev = draw(n_eval)
    return Dataset(x_tr, y_tr, x_ev, y_ev, classes)


def save_csv_dataset(ds: Dataset, path, label_column: str = "label") -> Path:
    """Write both splits to one CSV with a ``split`` column."""
    path = Path(path)
    header = [f"f{i}" for i in range(ds.dim)] + [label_column, "split"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, (x, y) in (("train", (ds.x_train, ds.y_train)), ("eval", (ds.x_eval, ds.y_eval))):
            for row, label in zip(x, y):
                w.writerow([repr(float(v)) for v in row] + [int(label), name])
    return path


def load_csv_dataset(path, label_column: str = "label", eval_fraction: float = 0.2) -> Dataset:
    """Numeric CSV with a header row.

    A ``split`` column with ``train`` / ``eval`` values selects the split;
    otherwise the last ``floor(eval_fraction * rows)`` rows are held out.
    Features are standardized with training-split mean and std.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise ValueError(f"{path}: label column {label_column!r} not found in header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    li = header.index(label_column)
    si = header.index("split") if "split" in header else None
    feat_cols = [i for i in range(len(header)) if i not in (li, si)]
    if not feat_cols:
        raise ValueError(f"{path}: no feature columns")
    feats, labels, splits = [], [], []
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(r)}")
        try:
            feats.append([float(r[i]) for i in feat_cols])
            labels.append(float(r[li]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        if si is not None:
            splits.append(r[si].strip())
    x = np.array(feats, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: non-finite feature value")
    raw = np.array(labels)
    if not np.all(raw == np.round(raw)):
        raise ValueError(f"{path}: labels must be integers")
    uniq = np.unique(raw)
    y = np.searchsorted(uniq, raw).astype(np.int64)
    if si is not None:
        bad = set(splits) - {"train", "eval"}
        if bad:
            raise ValueError(f"{path}: unknown split values {sorted(bad)}")
        is_eval = np.array([s == "eval" for s in splits])
    else:
        n_eval = int(np.floor(eval_fraction * len(y)))
        is_eval = np.zeros(len(y), dtype=bool)
        if n_eval:
            is_eval[-n_eval:] = True
    if is_eval.all():
        raise ValueError(f"{path}: no training rows")
    x_tr = x[~is_eval]
    mean = x_tr.mean(axis=0)
    std = x_tr.std(axis=0)
    std[std == 0] = 1.0
    x = (x - mean) / std
    classes = max(2, len(uniq))
    return Dataset(x[~is_eval], y[~is_eval], x[is_eval], y[is_eval], classes)
