"""Right-hand sides of the SFL-V1/V2 convergence bounds.

Naming: ``V1``/``V2`` for the algorithm, ``SC``/``GC``/``NC`` for strongly
convex, general convex and non-convex, ``_P`` for partial participation.
"""

from __future__ import annotations

import enum
import math

from ..algorithms import RunConfig, eta_at, gamma_from
from .estimators import Constants


class Theorem(str, enum.Enum):
    V1_SC = "V1_SC"
    V1_GC = "V1_GC"
    V1_NC = "V1_NC"
    V2_SC = "V2_SC"
    V2_GC = "V2_GC"
    V2_NC = "V2_NC"
    V1_SC_P = "V1_SC_P"
    V1_GC_P = "V1_GC_P"
    V1_NC_P = "V1_NC_P"
    V2_SC_P = "V2_SC_P"
    V2_GC_P = "V2_GC_P"
    V2_NC_P = "V2_NC_P"

    @property
    def version(self) -> int:
        return 1 if self.value.startswith("V1") else 2

    @property
    def kind(self) -> str:
        return self.value.split("_")[1]

    @property
    def partial(self) -> bool:
        return self.value.endswith("_P")


class MissingConstant(ValueError):
    pass


def _need(c: Constants, *names):
    for name in names:
        v = getattr(c, name)
        if v is None:
            raise MissingConstant(f"bound needs constant {name!r}")
    if "mu" in names and not c.mu > 0:
        raise MissingConstant("strongly convex bounds need mu > 0")


def _taus(cfg: RunConfig) -> tuple[int, int]:
    tau = cfg.tau
    tau_tilde = cfg.tau_tilde if cfg.tau_tilde is not None else tau
    return tau, tau_tilde


def eval_bound(theorem, c: Constants, cfg: RunConfig, T: int | None = None) -> float:
    """Evaluate one bound for ``T`` rounds (default ``cfg.T``).

    Non-convex bounds sum ``eta_t^2`` over ``t < T`` from ``cfg``'s schedule.
    """
    th = Theorem(theorem)
    T = cfg.T if T is None else T
    N = c.N
    a, q = c.a, c.q
    tau, tau_tilde = _taus(cfg)
    tau_min, tau_max = min(tau, tau_tilde), max(tau, tau_tilde)
    v2 = th.version == 2
    # SFL-V2 replaces a_n^2 by a_n^2 + 1 and a_n by a_n + 1
    a2 = [an * an + 1.0 if v2 else an * an for an in a]
    a1 = [an + 1.0 if v2 else an for an in a]

    if th.kind == "SC":
        _need(c, "S", "mu", "sigma_sq", "G_sq", "I_err")
        S, mu, G2, I = c.S, c.mu, c.G_sq, c.I_err
        gamma = c.gamma if c.gamma is not None else gamma_from(S, mu)
        extra = [G2 / qn if th.partial else 0.0 for qn in q]
        first = math.fsum(a2[n] * (2 * c.sigma_sq[n] + G2 + extra[n]) for n in range(N))
        second = math.fsum(a1[n] * (2 * c.sigma_sq[n] + G2) for n in range(N))
        return (8 * S * N * first / (mu ** 2 * (gamma + T))
                + 768 * S ** 2 * second / (mu ** 3 * (gamma + T) * (gamma + 1))
                + S * (gamma + 1) * I / (2 * (gamma + T)))

    if th.kind == "GC":
        _need(c, "S", "sigma_sq", "G_sq", "I_err")
        S, G2, I = c.S, c.G_sq, c.I_err
        extra = [G2 / qn if th.partial else 0.0 for qn in q]
        first = math.fsum(a2[n] * (2 * c.sigma_sq[n] + G2 + extra[n]) for n in range(N))
        second = math.fsum(a1[n] * (2 * c.sigma_sq[n] + G2) for n in range(N))
        factor = 1.0 if v2 else (tau_tilde ** 2 + tau ** 2) / tau_min ** 2
        return (S * I / (2 * (T + 1))
                + 0.5 * math.sqrt(factor * I * N * first / (T + 1))
                + 0.5 * (24 * factor * S * I * second / (T + 1)) ** (1.0 / 3.0))

    _need(c, "S", "sigma_sq", "eps_sq", "f0_gap")
    S, eps2 = c.S, c.eps_sq
    weights = [a2[n] / q[n] if th.partial else a2[n] for n in range(N)]
    het = math.fsum(weights[n] * (c.sigma_sq[n] + eps2) for n in range(N))
    eta_sq = math.fsum(eta_at(cfg.schedule, t, cfg.S, cfg.mu, cfg.tau_max) ** 2 for t in range(T))
    if v2:
        return 4 / (T * tau) * c.f0_gap + 8 * N * S * tau / T * het * eta_sq
    return (4 / (T * tau_min) * c.f0_gap
            + 8 * N * S * (tau ** 2 + tau_tilde ** 2) / (T * tau_min) * het * eta_sq)


def bound_report(theorem, c: Constants, cfg: RunConfig, T: int | None = None) -> dict:
    return {
        "theorem": Theorem(theorem).value,
        "value": eval_bound(theorem, c, cfg, T),
        "constants": {k: v for k, v in c.to_dict().items() if k != "provenance"},
        "provenance": dict(c.provenance),
    }


def nc_stepsize_cap(theorem, c: Constants, cfg: RunConfig) -> float:
    """Largest step the non-convex results admit."""
    th = Theorem(theorem)
    tau, tau_tilde = _taus(cfg)
    tau_min, tau_max = min(tau, tau_tilde), max(tau, tau_tilde)
    N, S = c.N, c.S
    a2q = math.fsum(an * an / qn if th.partial else an * an for an, qn in zip(c.a, c.q))
    if th.version == 1:
        return min(1 / (16 * S * tau_max), tau_min / (8 * S * N * tau_max ** 2 * a2q))
    if th.partial:
        return min(1 / (16 * S * tau), 1 / (8 * S * N ** 2 * tau * a2q))
    return min(1 / (16 * S * tau), 1 / (8 * S * N ** 2 * tau))
