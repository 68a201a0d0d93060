"""Additive Holt-Winters smoothing with damped-trend forecasting.

Serves as an independent classical baseline and as the reference for the
level/growth/seasonal decomposition semantics used elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError


@dataclass
class HwParams:
    alpha: float
    beta: float
    gamma: float
    phi: float = 1.0
    period: int = 1

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 < self.phi <= 1.0:
            raise DomainError(f"phi must lie in (0, 1], got {self.phi}")
        if self.period < 1:
            raise DomainError(f"period must be >= 1, got {self.period}")


@dataclass
class HwState:
    """Smoothed series including seeds: level/growth carry index 0 as the seed;
    seasonal carries one full leading period of seeds."""

    level: np.ndarray  # (T+1,)
    growth: np.ndarray  # (T+1,)
    seasonal: np.ndarray  # (T+p,)
    period: int


def default_init(x: np.ndarray, period: int) -> HwState:
    """Level = mean of the first period, growth = 0, seasonal = first-period offsets."""
    x = np.asarray(x, dtype=np.float64)
    if x.size <= period:
        raise DataError(f"series length {x.size} must exceed period {period}")
    e0 = float(x[:period].mean())
    return HwState(
        level=np.array([e0]),
        growth=np.array([0.0]),
        seasonal=x[:period] - e0,
        period=period,
    )


def hw_smooth(x: np.ndarray, params: HwParams, init: HwState | None = None) -> HwState:
    """Run the level, growth, seasonal recurrences over the whole series."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"expected a univariate series, got shape {x.shape}")
    p = params.period
    if x.size <= p:
        raise DataError(f"series length {x.size} must exceed period {p}")
    if init is None:
        init = default_init(x, p)
    T = x.size
    e = np.empty(T + 1)
    b = np.empty(T + 1)
    s = np.empty(T + p)
    e[0], b[0] = init.level[0], init.growth[0]
    s[:p] = init.seasonal[:p]
    a, be, ga = params.alpha, params.beta, params.gamma
    for t in range(1, T + 1):
        xt = x[t - 1]
        s_lag = s[t - 1]  # seasonal index from one period ago
        e[t] = a * (xt - s_lag) + (1.0 - a) * (e[t - 1] + b[t - 1])
        b[t] = be * (e[t] - e[t - 1]) + (1.0 - be) * b[t - 1]
        s[p + t - 1] = ga * (xt - e[t]) + (1.0 - ga) * s_lag
    return HwState(level=e, growth=b, seasonal=s, period=p)


def hw_forecast(state: HwState, params: HwParams, h: int) -> np.ndarray:
    """Damped-trend forecast: level + (phi + ... + phi^k) * growth + seasonal wrap."""
    if h < 1:
        raise DataError(f"forecast horizon must be >= 1, got {h}")
    p = state.period
    T = state.level.size - 1
    e_t, b_t = state.level[-1], state.growth[-1]
    damp = np.cumsum(params.phi ** np.arange(1, h + 1, dtype=np.float64))
    out = np.empty(h)
    for step in range(1, h + 1):
        wrap = T + step - p * math.ceil(step / p)  # most recent estimate of this phase
        out[step - 1] = e_t + damp[step - 1] * b_t + state.seasonal[wrap + p - 1]
    return out


def grid_values(resolution: int) -> dict[str, np.ndarray]:
    """Candidate values per parameter for the exhaustive fit."""
    if resolution < 1:
        raise DataError(f"grid resolution must be >= 1, got {resolution}")
    smooth = np.linspace(0.1, 0.9, resolution)
    phi = np.linspace(0.5, 1.0, resolution)
    return {"alpha": smooth, "beta": smooth, "gamma": smooth, "phi": phi}


@dataclass
class HwFitResult:
    params: HwParams
    val_mse: float
    degenerate: bool  # constant input: every candidate forecasts perfectly


def one_step_errors(x: np.ndarray, params: HwParams, init: HwState | None = None) -> np.ndarray:
    """Errors of the one-step-ahead forecast e_{t-1} + phi*b_{t-1} + s_{t-p}."""
    state = hw_smooth(x, params, init)
    T = len(np.asarray(x))
    t = np.arange(1, T + 1)
    pred = state.level[t - 1] + params.phi * state.growth[t - 1] + state.seasonal[t - 1]
    return np.asarray(x, dtype=np.float64) - pred


def hw_fit_grid(
    x: np.ndarray, period: int, resolution: int, val_fraction: float = 0.25
) -> HwFitResult:
    """Exhaustive grid search minimizing one-step-ahead MSE on a held-out tail.

    The filter runs over the whole series; only errors on the final
    val_fraction of steps count, so the scored forecasts never see their
    targets. Candidates are visited in ascending (alpha, beta, gamma, phi)
    order and replaced only on strict improvement, so ties resolve toward
    smaller values.
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.size
    n_val = max(1, int(round(val_fraction * T)))
    if T - n_val <= period:
        raise DataError(
            f"series length {T} too short: fit part {T - n_val} must exceed period {period}"
        )
    grid = grid_values(resolution)
    best: tuple[float, HwParams] | None = None
    for a in grid["alpha"]:
        for be in grid["beta"]:
            for ga in grid["gamma"]:
                for ph in grid["phi"]:
                    params = HwParams(alpha=a, beta=be, gamma=ga, phi=ph, period=period)
                    errors = one_step_errors(x, params)[T - n_val :]
                    mse = float(np.mean(errors**2))
                    if best is None or mse < best[0]:
                        best = (mse, params)
    return HwFitResult(params=best[1], val_mse=best[0], degenerate=bool(np.ptp(x) == 0.0))
