"""Dataset ingestion: seeded Gaussian blobs and CSV files."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import TAG_DATA, Stream, derive
from .training import Dataset

log = logging.getLogger(__name__)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian blobs (unit per-coordinate noise before rescaling).

    Class means sit at pairwise distance >= ``separation`` (exactly equal for
    the closest pair). Everything is mapped to [0, 1] by one affine map
    spanning the mean coordinates padded by ``pad * noise`` on each side,
    then clipped.
    """

    classes: int
    dim: int
    per_class: int
    separation: float
    seed: int
    test_count: int | None = None
    noise: float = 1.0
    pad: float = 4.0

    def __post_init__(self):
        if self.classes < 1 or self.dim < 1 or self.per_class < 1:
            raise ValueError("classes, dim and per_class must be positive")
        if self.separation < 0 or not self.noise > 0 or not self.pad > 0:
            raise ValueError("separation must be >= 0, noise and pad > 0")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    raw = Stream(derive(spec.seed, TAG_DATA, 0)).normal(spec.classes * spec.dim)
    raw = raw.reshape(spec.classes, spec.dim)
    if spec.classes == 1:
        return raw * 0.0
    dmin = min(float(np.linalg.norm(raw[a] - raw[b]))
               for a in range(spec.classes) for b in range(a + 1, spec.classes))
    return raw * (spec.separation / dmin)


def _draw(spec, means, labels, stream_id):
    st = Stream(derive(spec.seed, TAG_DATA, stream_id))
    noise = st.normal(labels.size * spec.dim).reshape(labels.size, spec.dim)
    return means[labels] + spec.noise * noise


def gen_synthetic_dataset(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Train and test splits; the train split has exactly ``per_class`` samples per class."""
    means = class_means(spec)
    n = spec.classes
    test_count = spec.test_count if spec.test_count is not None else max(n, spec.per_class * n // 3)
    train_labels = np.repeat(np.arange(n), spec.per_class)
    test_labels = np.arange(test_count) % n
    train_labels = train_labels[Stream(derive(spec.seed, TAG_DATA, 3)).permutation(train_labels.size)]
    test_labels = test_labels[Stream(derive(spec.seed, TAG_DATA, 4)).permutation(test_labels.size)]
    lo = float(means.min()) - spec.pad * spec.noise
    hi = float(means.max()) + spec.pad * spec.noise
    scale = hi - lo

    def squash(v):
        return np.clip((v - lo) / scale, 0.0, 1.0)

    train = Dataset(squash(_draw(spec, means, train_labels, 1)), train_labels, n, "train")
    test = Dataset(squash(_draw(spec, means, test_labels, 2)), test_labels, n, "test")
    return train, test


@dataclass
class CsvLoadResult:
    dataset: Dataset
    clipped: int


def load_csv_dataset(path, num_classes: int | None = None, split: str = "test") -> CsvLoadResult:
    """Rows of ``l`` floats followed by an integer label; a header row is optional.

    Values outside [0, 1] are clipped and counted.
    """
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row[:-1]]
            except ValueError:
                if r == 0 and not rows:
                    continue  # header
                for c, cell in enumerate(row[:-1]):
                    try:
                        float(cell)
                    except ValueError:
                        raise DatasetFormatError(
                            f"{path}: row {r}, column {c}: not a number: {cell!r}") from None
                raise
            try:
                lab = int(row[-1])
            except ValueError:
                if r == 0 and not rows:
                    continue
                raise DatasetFormatError(
                    f"{path}: row {r}, column {len(row) - 1}: bad label {row[-1]!r}") from None
            if width is None:
                width = len(vals)
            if len(vals) != width or width == 0:
                raise DatasetFormatError(f"{path}: row {r}: expected {width} values, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise DatasetFormatError(f"{path}: row {r}: non-finite value")
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    X = np.array(rows)
    y = np.array(labels)
    n = num_classes if num_classes is not None else int(y.max()) + 1
    bad = np.flatnonzero((y < 0) | (y >= n))
    if bad.size:
        raise DatasetFormatError(f"{path}: label {y[bad[0]]} out of range [0, {n}) (data row {bad[0]})")
    clipped = int(np.sum((X < 0.0) | (X > 1.0)))
    if clipped:
        log.warning("%s: clipped %d values into [0, 1]", path, clipped)
    return CsvLoadResult(Dataset(np.clip(X, 0.0, 1.0), y, n, split), clipped)


def save_csv_dataset(data: Dataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(data.input_dim)] + ["label"])
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
    tmp.replace(path)
