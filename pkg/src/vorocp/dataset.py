"""Learning-set assembly: metric/label tables, feature selection,
outlier removal and train/validation splits.

Features are taken raw (no scaling); the six input columns and their
order are fixed because they define the network's input layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateColumnError, ParseError
from .geometry import MetricVector

FEATURE_COLUMNS = ("ic", "cc", "apr", "er", "mx", "iso")
CSV_HEADER = ("polygon_id", *FEATURE_COLUMNS, "label_c")


@dataclass(frozen=True)
class RawRow:
    polygon_id: int
    metrics: MetricVector
    label_c: float


@dataclass(frozen=True)
class FeatureRow:
    polygon_id: int
    ic: float
    cc: float
    apr: float
    er: float
    mx: float
    iso: float
    label_c: float

    def features(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in FEATURE_COLUMNS])


@dataclass(frozen=True)
class SplitDataset:
    train: list[FeatureRow]
    validation: list[FeatureRow]
    split_seed: int


def build_raw(metrics: Sequence[tuple[int, MetricVector]],
              labels: Sequence[tuple[int, float]]) -> list[RawRow]:
    """Join per-polygon metrics with their computed constants by id."""
    if len(metrics) != len(labels):
        raise ValueError(f"{len(metrics)} metric rows vs {len(labels)} labels")
    label_map = dict(labels)
    if len(label_map) != len(labels):
        raise ValueError("duplicate polygon_id in labels")
    rows = []
    for pid, mv in metrics:
        if pid not in label_map:
            raise ValueError(f"polygon_id {pid} has no label")
        rows.append(RawRow(polygon_id=pid, metrics=mv, label_c=label_map[pid]))
    return rows


def metric_matrix(rows: Sequence[RawRow], columns: Sequence[str]) -> np.ndarray:
    return np.array([[getattr(r.metrics, c) for c in columns] for r in rows])


def pearson_correlation(rows: Sequence[RawRow],
                        columns: Sequence[str] = MetricVector.COLUMNS) -> np.ndarray:
    """Correlation matrix of the selected metric columns."""
    if len(rows) < 3:
        raise ValueError(f"need at least 3 rows, got {len(rows)}")
    x = metric_matrix(rows, columns)
    std = x.std(axis=0)
    for j, name in enumerate(columns):
        if std[j] == 0.0:
            raise DegenerateColumnError(name)
    centered = (x - x.mean(axis=0)) / std
    corr = centered.T @ centered / len(rows)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def select_features(rows: Sequence[RawRow]) -> list[FeatureRow]:
    """Project raw rows onto the six retained features, values untouched."""
    out = []
    for r in rows:
        values = {c: getattr(r.metrics, c) for c in FEATURE_COLUMNS}
        out.append(FeatureRow(polygon_id=r.polygon_id, label_c=r.label_c, **values))
    return out


def remove_outliers(rows: Sequence[FeatureRow], z_threshold: float = 2.0) -> list[FeatureRow]:
    """Drop rows where any feature is z_threshold or more standard
    deviations from the column mean.

    Means and deviations are computed once on the full input; the filter
    is a single pass, not iterated.
    """
    if len(rows) < 3:
        raise ValueError(f"need at least 3 rows, got {len(rows)}")
    x = np.array([r.features() for r in rows])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for j, name in enumerate(FEATURE_COLUMNS):
        if std[j] == 0.0:
            raise DegenerateColumnError(name)
    z = np.abs(x - mean) / std
    keep = (z < z_threshold).all(axis=1)
    return [r for r, k in zip(rows, keep) if k]


def split(rows: Sequence[FeatureRow], validation_fraction: float = 0.3,
          seed: int = 0) -> SplitDataset:
    """Random train/validation partition, deterministic under the seed."""
    if not (0.0 < validation_fraction < 1.0):
        raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction}")
    if len(rows) < 4:
        raise ValueError(f"need at least 4 rows to split, got {len(rows)}")
    n_val = round(validation_fraction * len(rows))
    perm = np.random.default_rng(seed).permutation(len(rows))
    val_idx = sorted(perm[:n_val].tolist())
    train_idx = sorted(perm[n_val:].tolist())
    return SplitDataset(
        train=[rows[i] for i in train_idx],
        validation=[rows[i] for i in val_idx],
        split_seed=seed,
    )


def to_arrays(rows: Sequence[FeatureRow]) -> tuple[np.ndarray, np.ndarray]:
    """(features, labels) arrays in the fixed column order."""
    x = np.array([r.features() for r in rows]).reshape(len(rows), len(FEATURE_COLUMNS))
    y = np.array([r.label_c for r in rows])
    return x, y


def save_csv(rows: Sequence[FeatureRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.polygon_id] + [repr(getattr(r, c)) for c in FEATURE_COLUMNS]
                            + [repr(r.label_c)])


def load_csv(path) -> list[FeatureRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=str(path), line=1) from None
        if tuple(header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}",
                             path=str(path), line=1)
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(CSV_HEADER):
                raise ParseError(f"expected {len(CSV_HEADER)} fields, got {len(record)}",
                                 path=str(path), line=lineno)
            try:
                rows.append(FeatureRow(
                    polygon_id=int(record[0]),
                    **{c: float(record[1 + j]) for j, c in enumerate(FEATURE_COLUMNS)},
                    label_c=float(record[-1]),
                ))
            except ValueError as exc:
                raise ParseError(f"bad value: {exc}", path=str(path), line=lineno) from exc
    return rows


def correlation_csv(matrix: np.ndarray, labels: Sequence[str], path) -> None:
    """Correlation matrix with acronym row and column labels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", *labels])
        for name, row in zip(labels, matrix):
            writer.writerow([name] + [f"{v:.6f}" for v in row])
