"""Metric CSVs and exponentially weighted smoothing."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def read_series(path: str | Path, column: str) -> tuple[np.ndarray, np.ndarray]:
    """(step, value) arrays from a metrics CSV, skipping rows where the column is blank."""
    steps, vals = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if column not in row:
                raise KeyError(f"{path} has no column {column!r}")
            if row[column] == "":
                continue
            steps.append(float(row["step"]))
            vals.append(float(row[column]))
    steps_arr = np.asarray(steps)
    if len(steps_arr) > 1 and np.any(np.diff(steps_arr) < 0):
        raise ValueError(f"{path}: step column is not monotone")
    return steps_arr, np.asarray(vals)


def ewma(x, half_life: float = 100.0) -> np.ndarray:
    """Bias-corrected EWMA with decay 2**(-1/half_life).

    s_t = a s_{t-1} + (1 - a) x_t with s_0 = 0, reported as s_t / (1 - a**t),
    so a constant input is returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("ewma needs a non-empty series")
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    a = 2.0 ** (-1.0 / half_life)
    out = np.empty_like(x)
    s = 0.0
    w = 1.0
    for t, v in enumerate(x):
        s = a * s + (1.0 - a) * v
        w *= a
        out[t] = s / (1.0 - w)
    return out


def mean_and_se(curves: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and standard error across seeds (sample std / sqrt(n))."""
    arr = np.stack(curves)
    n = arr.shape[0]
    se = arr.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(arr.shape[1])
    return arr.mean(0), se
