"""Log-log regression records shared by the dimension and transport estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares slope of log(values) against log(scales).

    ``window_slopes`` are slopes over consecutive windows of ``window``
    points; with ``window == 2`` the global slope always lies between their
    min and max (it is a weighted mean of consecutive slopes).
    """

    scales: tuple[float, ...]
    values: tuple[float, ...]
    fitted: float
    intercept: float
    window: int
    window_slopes: tuple[float, ...]
    residual_rms: float
    gamma_grid: tuple[float, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def slope_min(self) -> float:
        return min(self.window_slopes) if self.window_slopes else self.fitted

    @property
    def slope_max(self) -> float:
        return max(self.window_slopes) if self.window_slopes else self.fitted

    def to_dict(self) -> dict:
        return {"scales": list(self.scales), "values": list(self.values), "fitted": self.fitted,
                "intercept": self.intercept, "window": self.window,
                "window_slopes": list(self.window_slopes), "slope_min": self.slope_min,
                "slope_max": self.slope_max, "residual_rms": self.residual_rms,
                "gamma_grid": list(self.gamma_grid), "extra": self.extra}


def window_slopes(x: np.ndarray, y: np.ndarray, window: int) -> np.ndarray:
    if len(x) < window:
        return np.array([])
    out = []
    for i in range(len(x) - window + 1):
        xs, ys = x[i:i + window], y[i:i + window]
        xc = xs - xs.mean()
        out.append(float((xc * (ys - ys.mean())).sum() / (xc * xc).sum()))
    return np.array(out)


def fit_loglog(scales: Sequence[float], values: Sequence[float], window: int = 2,
               min_points: int = 3) -> ScalingFit:
    """Fit log(values) = fitted * log(scales) + intercept."""
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(s) != len(v):
        raise ValueError("scales and values differ in length")
    if len(s) < max(min_points, window):
        raise InsufficientDataError(f"need at least {max(min_points, window)} points, got {len(s)}")
    if np.any(s <= 0) or np.any(v <= 0):
        raise InsufficientDataError("log-log fit needs positive scales and values")
    x, y = np.log(s), np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    ws = window_slopes(x, y, window)
    return ScalingFit(tuple(float(a) for a in s), tuple(float(b) for b in v), float(slope), float(icpt),
                      int(window), tuple(float(w) for w in ws), float(math.sqrt((res ** 2).mean())))


def geometric_grid(start: float, stop: float, num: int) -> np.ndarray:
    return np.geomspace(start, stop, num)
