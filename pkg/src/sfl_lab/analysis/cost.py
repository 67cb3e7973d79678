"""Communication/latency cost model and the counted wire bytes of a trace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..algorithms import BYTES_PER_SCALAR
from ..trace import Trace

METHODS = ("FL", "SL", "SFL_V1", "SFL_V2")


@dataclass(frozen=True)
class CostInputs:
    """``p``: total data size, ``q_smash``: smashed-layer size per sample,
    ``W``: full model size, ``beta_frac``: client share of ``W``."""
    K: float
    p: float
    q_smash: float
    R: float
    T_fb: float
    T_fedavg: float
    W: float
    beta_frac: float

    def __post_init__(self):
        for name in ("K", "p", "q_smash", "R", "T_fb", "T_fedavg", "W"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.beta_frac <= 1:
            raise ValueError("beta_frac must lie in (0, 1]")


def cost_model(c: CostInputs, method: str) -> dict:
    K, p, q, R, W, b = c.K, c.p, c.q_smash, c.R, c.W, c.beta_frac
    if method == "FL":
        return {"comm_per_client": 2 * W, "total_comm": 2 * K * W,
                "total_time": c.T_fb + 2 * W / R + c.T_fedavg}
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    comm = {"comm_per_client": (2 * p / K) * q + 2 * b * W,
            "total_comm": 2 * p * q + 2 * b * K * W}
    if method == "SL":
        comm["total_time"] = c.T_fb + 2 * p * q / R + 2 * b * W * K / R
    else:
        t = c.T_fb + 2 * p * q / (R * K) + 2 * b * W / R + c.T_fedavg
        comm["total_time"] = t + c.T_fedavg / 2 if method == "SFL_V2" else t
    return comm


def trace_comm_counter(trace: Trace) -> np.ndarray:
    """Bytes moved in each round (differences of the cumulative counter)."""
    return np.diff(trace.column("comm_bytes"))


def sfl_round_inputs(K: int, tau: int, b_s: int, cut_width: int, client_size: int,
                     model_size: int) -> CostInputs:
    """Cost-model symbols for one full-participation SFL round of this simulator:
    ``p`` samples cross the cut, each as ``cut_width`` scalars, and the client
    block is a ``client_size / model_size`` share of the model."""
    return CostInputs(K=K, p=K * tau * b_s, q_smash=cut_width * BYTES_PER_SCALAR,
                      R=1.0, T_fb=1.0, T_fedavg=1.0, W=model_size * BYTES_PER_SCALAR,
                      beta_frac=client_size / model_size)
