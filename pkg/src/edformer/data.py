"""CSV ingestion, chronological splits, train-fit standardization and windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

STD_FLOOR = 1e-8


class DataError(ValueError):
    pass


@dataclass
class RawDataset:
    variate_names: list[str]
    values: np.ndarray  # [T, N]
    timestamps: list[str] | None = None

    @property
    def n_variates(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class WindowPair:
    input: np.ndarray   # [L, N]
    target: np.ndarray  # [H, N]
    t0: int


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path) -> RawDataset:
    """Read a header-row CSV; a non-numeric first column is taken as timestamps."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows")
    has_time = header[0].lower() in ("date", "time", "timestamp") or not _is_number(body[0][0])
    start = 1 if has_time else 0
    names = header[start:]
    if not names:
        raise DataError(f"{path}: no value columns")

    values = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row[start:]):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {cell!r} at row {i + 2}, column {j + start + 1}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    stamps = [row[0] for row in body] if has_time else None
    return RawDataset(names, values, stamps)


def split_chronological(n_steps: int, lookback: int, horizon: int,
                        ratios: Sequence[float] = (0.7, 0.1, 0.2),
                        sizes: Sequence[int] | None = None) -> list[range]:
    """Contiguous train / val / test target ranges.

    Windows built on the val and test ranges take their lookback from the
    preceding split. ``sizes`` overrides ``ratios`` with absolute lengths.
    """
    if sizes is not None:
        lengths = [int(s) for s in sizes]
        if sum(lengths) > n_steps:
            raise DataError(f"split sizes {lengths} exceed series length {n_steps}")
    else:
        if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-12:
            raise DataError(f"invalid split ratios {tuple(ratios)}")
        n_train = int(n_steps * ratios[0])
        n_test = int(round(n_steps * ratios[2]))
        n_val = min(int(round(n_steps * ratios[1])), n_steps - n_train - n_test)
        lengths = [n_train, n_val, n_test]
    need = lookback + horizon
    out, start = [], 0
    for name, n in zip(("train", "val", "test"), lengths):
        if n < need:
            raise DataError(f"{name} split has {n} steps, fewer than lookback+horizon={need}")
        out.append(range(start, start + n))
        start += n
    return out


class SeriesScaler(TransformerMixin, BaseEstimator):
    """Per-column z-score with a floored standard deviation."""

    def __init__(self, std_floor: float = STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.std_floor)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self)
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


def standardize(values: np.ndarray, train_range: range) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(train_range) == 0:
        raise DataError("empty training range")
    scaler = SeriesScaler().fit(values[train_range.start:train_range.stop])
    return scaler.transform(values), scaler.mean_, scaler.scale_


def make_windows(values: np.ndarray, rng: range, lookback: int, horizon: int,
                 stride: int = 1) -> list[WindowPair]:
    """All windows whose target lies inside ``rng``, ordered by origin."""
    first = max(rng.start, lookback)
    last = rng.stop - horizon
    return [WindowPair(values[t0 - lookback:t0], values[t0:t0 + horizon], t0)
            for t0 in range(first, last + 1, stride)]


def stack_windows(pairs: Sequence[WindowPair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise DataError("no windows to stack")
    return np.stack([p.input for p in pairs]), np.stack([p.target for p in pairs])


def make_toy_dataset(n_steps: int = 1000, n_variates: int = 3, period: float = 24.0,
                     slope: float = 0.002, noise: float = 0.05, seed: int = 0) -> RawDataset:
    """Phase-shifted sinusoids on a shared linear trend plus Gaussian noise."""
    t = np.arange(n_steps, dtype=np.float64)
    phases = 2 * math.pi * np.arange(n_variates) / n_variates
    clean = np.sin(2 * math.pi * t[:, None] / period + phases[None, :]) + slope * t[:, None]
    noisy = clean + np.random.default_rng(seed).normal(0.0, noise, clean.shape)
    start = np.datetime64("2020-01-01T00:00")
    stamps = [str(start + np.timedelta64(i, "h")).replace("T", " ") for i in range(n_steps)]
    return RawDataset([f"x{i}" for i in range(n_variates)], noisy, stamps)


def write_csv(ds: RawDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if ds.timestamps is not None:
            w.writerow(["date", *ds.variate_names])
            for stamp, row in zip(ds.timestamps, ds.values):
                w.writerow([stamp, *map(repr, row.tolist())])
        else:
            w.writerow(ds.variate_names)
            for row in ds.values:
                w.writerow(list(map(repr, row.tolist())))
