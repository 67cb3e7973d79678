"""Per-row checks on recorded traces."""

from __future__ import annotations

from dataclasses import dataclass

from ..trace import Trace, TraceRow

SMOOTHNESS_SLACK = 1e-9


@dataclass(frozen=True)
class Verdict:
    identity_exact: bool
    smoothness_ok: bool
    gap: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.identity_exact and self.smoothness_ok


def check_decomposition(row: TraceRow, S: float) -> Verdict:
    """Block additivity of the squared distance (exact) and the smoothness
    bound ``loss_gap <= S/2 * dist_full``."""
    identity = row.dist_full == row.dist_c + row.dist_s
    rhs = 0.5 * S * row.dist_full
    return Verdict(identity, row.loss_gap <= rhs + SMOOTHNESS_SLACK, row.loss_gap, rhs)


def check_trace(trace: Trace, S: float | None) -> list[Verdict]:
    """Verdicts for every row; without ``S`` only the identity is meaningful."""
    s = float("inf") if S is None else S
    return [check_decomposition(r, s) for r in trace.rows]
