"""Least-squares fits of exponential decay on a log scale."""
import math
from typing import NamedTuple

import numpy as np

from .errors import TooFewPoints


class LogLinearFit(NamedTuple):
    slope: float
    intercept: float
    r2: float
    degenerate: bool  # y is constant, so R^2 is undefined (reported as 0)


def log_linear_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(y) == 0.0:
        return LogLinearFit(0.0, float(y[0]), 0.0, True)
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    return LogLinearFit(float(slope), float(intercept), 1.0 - ss_res / ss_tot, False)


class TailFit(NamedTuple):
    gamma: float
    C: float
    r2: float
    points: int
    degenerate: bool


def fit_exponential_tail(survival, floor=1e-2):
    """Fit s_n ~ C exp(-gamma n) over the points with s_n > floor."""
    pts = [(float(n), float(s)) for n, s in survival if s > floor]
    if len(pts) < 5:
        raise TooFewPoints(f"{len(pts)} points above floor {floor}")
    n, s = np.array(pts).T
    fit = log_linear_fit(n, np.log(s))
    return TailFit(-fit.slope, math.exp(fit.intercept), fit.r2, len(pts), fit.degenerate)
