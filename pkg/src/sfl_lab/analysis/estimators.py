"""Estimators for the constants the convergence bounds are stated in."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import ClientShard, EpochSampler, sample_batch
from ..models import SplitParams, convexity_constants, full_grad, split_grad
from ..numkit import RngStream, sq_dist, weighted_sum
from ..trace import Trace

G_SAFETY = 1.5


@dataclass
class Constants:
    """Problem constants plus where each one came from.

    ``provenance`` maps a field name to ``"exact"``, ``"estimated"`` or
    ``"given"``.
    """
    a: list[float]
    S: float | None = None
    mu: float | None = None
    sigma_sq: list[float] | None = None
    G_sq: float | None = None
    eps_sq: float | None = None
    I_err: float | None = None
    f0_gap: float | None = None
    q: list[float] | None = None
    gamma: float | None = None
    provenance: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("S", "mu", "G_sq", "eps_sq", "I_err", "f0_gap"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.sigma_sq is not None and len(self.sigma_sq) != len(self.a):
            raise ValueError("one sigma_n^2 per client is required")
        if self.q is None:
            self.q = [1.0] * len(self.a)

    @property
    def N(self) -> int:
        return len(self.a)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Constants":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Constants":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def client_constants(obj, shards: list[ClientShard]) -> tuple[float, float]:
    """``(S, mu)`` valid for every client: largest S, smallest mu."""
    pairs = [convexity_constants(obj, s.X) for s in shards]
    return max(p[0] for p in pairs), min(p[1] for p in pairs)


def estimate_smoothness(obj, shards: list[ClientShard], probe_points, rng: RngStream,
                        iters: int = 50, h: float = 1e-5) -> float:
    """Largest curvature magnitude seen at the probe points, over all clients.

    Power iteration on central-difference Hessian-vector products. This is a
    local estimate, not a certified smoothness constant.
    """
    worst = 0.0
    for x in probe_points:
        w = x.concat()
        k = x.client.size
        for shard in shards:
            def hv(v):
                gp = full_grad(obj, SplitParams.from_flat(w + h * v, k), shard.X, shard.y)
                gm = full_grad(obj, SplitParams.from_flat(w - h * v, k), shard.X, shard.y)
                return (gp - gm) / (2 * h)
            v = rng.normal(len(w))
            v = v / np.linalg.norm(v)
            lam = 0.0
            for _ in range(iters):
                u = hv(v)
                norm = float(np.linalg.norm(u))
                if norm == 0.0:
                    break
                lam = norm
                v = u / norm
            worst = max(worst, lam)
    return worst


def estimate_sigma(obj, shard: ClientShard, x: SplitParams, M: int, b_s: int,
                   rng: RngStream, sampling: str = "replacement") -> float:
    """Mean squared deviation of ``M`` mini-batch gradients from the full gradient."""
    if M < 2:
        raise ValueError("need M >= 2 samples")
    g_full = full_grad(obj, x, shard.X, shard.y)
    if sampling == "epoch":
        draw = EpochSampler(shard, b_s, rng).next
    else:
        def draw():
            return sample_batch(shard, b_s, rng)
    total = 0.0
    for _ in range(M):
        total += sq_dist(split_grad(obj, x, draw()), g_full)
    return total / M


def estimate_eps(obj, shards: list[ClientShard], probe_points) -> float:
    """``max_{n, x} ||grad F_n(x) - grad f(x)||^2`` over the probe points."""
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("need at least one probe point")
    a = [s.weight for s in shards]
    worst = 0.0
    for x in probe_points:
        grads = [full_grad(obj, x, s.X, s.y) for s in shards]
        g = weighted_sum(grads, a)
        worst = max(worst, max(sq_dist(gn, g) for gn in grads))
    return worst


def estimate_G_sq(traces, safety: float = G_SAFETY) -> float:
    """Trajectory-restricted surrogate for G^2: ``safety`` times the largest
    squared stochastic-gradient norm observed in the given runs."""
    if isinstance(traces, Trace):
        traces = [traces]
    return safety * max(max(tr.max_grad_sq) for tr in traces)


def drift_bound(tau: int, eta: float, sigma_sq: float, G_sq: float) -> float:
    """Expected local drift allowed after ``tau`` local steps with step ``eta``."""
    return 12.0 * tau ** 3 * eta ** 2 * (2.0 * sigma_sq + G_sq)


def measure_local_drift(trace: Trace, t: int, tau: int | None = None,
                        sigma_sq=None, G_sq: float | None = None):
    """Per-client measured drift ``sum_{i<tau} ||x_n^{t,i} - x^t||^2`` in round ``t``.

    With ``tau``, ``sigma_sq`` and ``G_sq`` also returns the per-client bound.
    """
    if not trace.drift:
        raise ValueError("trace was recorded without drift (set record_drift=True)")
    measured = list(trace.drift[t])
    if tau is None or sigma_sq is None or G_sq is None:
        return measured, None
    eta = trace.drift_eta[t]
    return measured, [drift_bound(tau, eta, s, G_sq) for s in sigma_sq]
