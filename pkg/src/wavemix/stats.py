"""Small fitting and summary utilities shared across experiment modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float

    def predict(self, x):
        return self.intercept + self.slope * np.asarray(x)


def line_fit(x, y) -> LineFit:
    """Ordinary least squares y = a + b x with R^2 and the slope's standard error."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2:
        raise ValueError("need at least two points to fit a line")
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    dof = max(x.size - 2, 1)
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = math.sqrt(ss_res / dof / sxx) if sxx > 0 else math.inf
    return LineFit(float(coef[1]), float(coef[0]), r2, se)


def log_decay_fit(t, series, floor: float = 0.0) -> LineFit:
    """Fit log(series) = a + b t on the samples exceeding ``floor``."""
    t = np.asarray(t, float)
    s = np.asarray(series, float)
    mask = s > floor
    if mask.sum() < 3:
        raise ValueError("fewer than 3 samples above the floor")
    return line_fit(t[mask], np.log(s[mask]))


def running_trapezoid(t, values) -> np.ndarray:
    """Cumulative trapezoid integral along the last axis, starting at 0."""
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    dt = np.diff(t)
    incr = 0.5 * dt * (v[..., 1:] + v[..., :-1])
    out = np.zeros(v.shape)
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return out


def mean_se(samples, axis=0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along ``axis``."""
    samples = np.asarray(samples, float)
    n = samples.shape[axis]
    m = samples.mean(axis=axis)
    se = samples.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full_like(m, np.inf)
    return m, se


def jackknife_log_mean(values) -> tuple[float, float]:
    """log(mean(values)) with a delete-one jackknife standard error."""
    v = np.asarray(values, float)
    n = v.size
    total = v.sum()
    est = math.log(total / n)
    loo = np.log((total - v) / (n - 1))
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, se


def tail_dominated(values, threshold: float = 0.1) -> bool:
    """True when one summand carries more than ``threshold`` of the total."""
    v = np.asarray(values, float)
    total = v.sum()
    return bool(total > 0 and v.max() > threshold * total)


def kahan_sum(values) -> float:
    """Compensated summation; order-independent reductions for ensemble stats."""
    total = 0.0
    comp = 0.0
    for x in np.asarray(values, float).ravel():
        y = x - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total
