"""Point-forecast error metrics and cross-horizon aggregation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


@dataclass
class RunSummary:
    per_horizon: list[tuple[int, float, float]]
    mean_mse: float
    mean_mae: float
    std_mse: float
    std_mae: float


def summarize_horizons(entries: Iterable[tuple[int, float, float]]) -> RunSummary:
    """Mean and population std of MSE / MAE over a set of horizons."""
    entries = sorted((int(h), float(m), float(a)) for h, m, a in entries)
    if not entries:
        raise ValueError("summarize_horizons needs at least one entry")
    m = np.array([e[1] for e in entries])
    a = np.array([e[2] for e in entries])
    return RunSummary(entries, float(m.mean()), float(a.mean()), float(m.std()), float(a.std()))


def write_report(path, summary: RunSummary, dataset: str = "") -> None:
    """CSV with one row per horizon followed by mean and std rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "horizon", "mse", "mae"])
        for h, m, a in summary.per_horizon:
            w.writerow([dataset, h, repr(m), repr(a)])
        w.writerow([dataset, "mean", repr(summary.mean_mse), repr(summary.mean_mae)])
        w.writerow([dataset, "std", repr(summary.std_mse), repr(summary.std_mae)])
