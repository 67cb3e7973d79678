"""Per-round run records and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .models import SplitParams

CSV_HEADER = ("t", "loss", "loss_gap", "dist_c", "dist_s", "dist_full",
              "eta", "grad_norm_sq", "comm_bytes", "flops")


@dataclass(frozen=True)
class Reference:
    """The optimum a run is measured against."""
    x_star: SplitParams
    f_star: float


@dataclass
class TraceRow:
    t: int
    loss: float
    loss_gap: float
    dist_c: float
    dist_s: float
    dist_full: float
    eta: float
    grad_norm_sq: float
    comm_bytes: int
    flops: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in CSV_HEADER)


@dataclass
class Trace:
    variant: str
    rows: list[TraceRow] = field(default_factory=list)
    # per-round, per-client sum_i ||x_n^{t,i} - x^t||^2 (None when not recorded)
    drift: list[list[float]] = field(default_factory=list)
    drift_eta: list[float] = field(default_factory=list)
    # largest squared stochastic-gradient norm seen per client
    max_grad_sq: list[float] = field(default_factory=list)
    participants: list[list[int]] = field(default_factory=list)
    # SFL-V1: max_n ||x_{s,n} - x_s||^2 right after each server aggregation
    server_sync_spread: list[float] = field(default_factory=list)
    final: SplitParams | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r.as_tuple()])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isnan(v):
        return "nan"
    return repr(float(v))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_HEADER:
        raise ValueError("unexpected trace header")
    return [{k: (int(v) if k in ("t", "comm_bytes", "flops") else float(v))
             for k, v in r.items()} for r in rows]
