"""Log-log rate fitting and the non-convex performance metric."""

from __future__ import annotations

import math

import numpy as np

from ..algorithms import eta_at
from ..trace import Trace

DEFAULT_WINDOW_FRACTION = 0.8


def loglog_slope(t, values) -> float:
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(t) < 2:
        raise ValueError("need at least two points to fit a slope")
    if np.any(t <= 0) or np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("log-log fit needs positive, finite values")
    slope, _ = np.polyfit(np.log(t), np.log(v), 1)
    return float(slope)


def grad_metric_series(trace: Trace, etas=None) -> np.ndarray:
    """``G(T) = (1/T) sum_{t<T} eta_t ||grad f(x^t)||^2`` for T = 1..len-1.

    Entry ``T-1`` of the result is ``G(T)``.
    """
    eta = trace.column("eta") if etas is None else np.asarray(etas, dtype=np.float64)
    g = trace.column("grad_norm_sq")
    out = np.empty(len(g) - 1)
    acc = 0.0
    for T in range(1, len(g)):
        acc += eta[T - 1] * g[T - 1]
        out[T - 1] = acc / T
    return out


def grad_metric(trace: Trace, schedule=None, T: int | None = None,
                S: float | None = None, mu: float | None = None, tau_ref: int = 1) -> float:
    """``(1/T) sum_{t<T} eta_t ||grad f(x^t)||^2``.

    The step sizes come from the trace's ``eta`` column unless a schedule
    is given.
    """
    T = len(trace) - 1 if T is None else T
    if T < 1 or T >= len(trace):
        raise ValueError(f"T must lie in [1, {len(trace) - 1}]")
    g = trace.column("grad_norm_sq")
    if schedule is None:
        eta = trace.column("eta")
    else:
        eta = [eta_at(schedule, t, S, mu, tau_ref) for t in range(T)]
    return math.fsum(eta[t] * g[t] for t in range(T)) / T


def default_window(T: int) -> tuple[int, int]:
    return max(1, math.ceil((1.0 - DEFAULT_WINDOW_FRACTION) * T)), T


def fit_rate(trace, metric: str = "loss_gap", window: tuple[int, int] | None = None) -> float:
    """Least-squares slope of ``log(metric)`` against ``log(t)`` over
    ``window`` (inclusive). ``trace`` may also be a ``(t, values)`` pair."""
    if isinstance(trace, Trace):
        if metric == "grad_metric":
            v = grad_metric_series(trace)
            t = np.arange(1, len(v) + 1, dtype=np.float64)
        elif metric in ("loss_gap", "dist_full"):
            t, v = trace.t, trace.column(metric)
        else:
            raise ValueError(f"unknown metric {metric!r}")
    else:
        t, v = (np.asarray(a, dtype=np.float64) for a in trace)
    lo, hi = window if window is not None else default_window(int(t[-1]))
    sel = (t >= lo) & (t <= hi)
    return loglog_slope(t[sel], v[sel])
