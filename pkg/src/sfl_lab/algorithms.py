"""Training procedures: SFL-V1, SFL-V2 and the FedAvg / SL / mini-batch SGD baselines.

All five share the same gradient routine (``models.split_step``) and the same
named random streams, so differences between traces come from the update
rules alone:

* ``client-batch``/n -- mini-batch draws of client n,
* ``participation``  -- Bernoulli availability draws, one per client per round,
* ``order``          -- server service order (SFL-V2, SL).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ClientShard, EpochSampler, sample_batch
from .models import Batch, SplitParams, split_step
from .numkit import NonFiniteError, RngStream, axpy, derive_stream, sq_dist, weighted_sum
from .trace import Reference, Trace, TraceRow

BYTES_PER_SCALAR = 8
WEIGHT_SUM_TOL = 1e-12


class Variant(str, enum.Enum):
    SFL_V1 = "SFL_V1"
    SFL_V2 = "SFL_V2"
    FEDAVG = "FEDAVG"
    SL = "SL"
    MB_SGD = "MB_SGD"


class StepsizeError(ValueError):
    pass


class StepsizeWarning(UserWarning):
    pass


class AggregationError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, round_index: int, detail: str):
        super().__init__(f"non-finite value in round {round_index}: {detail}")
        self.round_index = round_index


# --------------------------------------------------------------------------
# Step sizes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("step size must be positive")


@dataclass(frozen=True)
class Diminishing:
    """``eta_t = 2 * beta_ss / (tau_ref * (gamma + t))``.

    ``beta_ss`` and ``gamma`` default to ``2/mu`` and ``8S/mu - 1``.
    """
    beta_ss: float | None = None
    gamma: float | None = None
    tau_ref: int | None = None

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")


def gamma_from(S: float, mu: float) -> float:
    return 8.0 * S / mu - 1.0


def stepsize_cap(S: float, tau_max: int) -> float:
    """Largest constant step the strongly/general convex results allow."""
    return 1.0 / (2.0 * S * tau_max)


def eta_at(schedule, t: int, S: float | None = None, mu: float | None = None,
           tau_ref: int | None = None) -> float:
    if t < 0:
        raise ValueError("round index must be non-negative")
    if isinstance(schedule, Constant):
        return schedule.eta
    beta_ss, gamma = schedule.beta_ss, schedule.gamma
    if beta_ss is None or gamma is None:
        if S is None or not mu:
            raise ValueError("diminishing schedule needs S and mu > 0 to fill beta and gamma")
        beta_ss = 2.0 / mu if beta_ss is None else beta_ss
        gamma = gamma_from(S, mu) if gamma is None else gamma
    tau = schedule.tau_ref if schedule.tau_ref is not None else tau_ref
    if tau is None:
        tau = 1
    return 2.0 * beta_ss / (tau * (gamma + t))


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    variant: Variant
    T: int
    tau: int = 1
    b_s: int = 1
    schedule: Constant | Diminishing = field(default_factory=lambda: Constant(0.01))
    tau_tilde: int | None = None
    q: tuple[float, ...] | None = None
    root_seed: int = 0
    S: float | None = None
    mu: float | None = None
    # "delta": x + sum a/q (x_n - x)   "model": sum a/q x_n
    partial_form: str = "delta"
    # SFL-V2 server step weight: "unit" (1 or 1/q_n) or "weighted" (a_n or a_n/q_n)
    server_weighting: str = "unit"
    v2_order: str = "client_major"
    redraw_order: bool = True
    sampling: str = "replacement"
    client_taus: tuple[int, ...] | None = None
    strict_stepsize: bool = False
    record_drift: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.T < 1 or self.tau < 1 or self.b_s < 1:
            raise ValueError("T, tau and b_s must be >= 1")
        if self.variant is Variant.SFL_V1:
            if self.tau_tilde is None:
                object.__setattr__(self, "tau_tilde", self.tau)
            elif self.tau_tilde < 1:
                raise ValueError("tau_tilde must be >= 1")
            if self.client_taus is not None:
                raise ValueError("SFL-V1 runs on a shared iteration clock; client_taus is not supported")
        elif self.tau_tilde is not None:
            raise ValueError("tau_tilde only applies to SFL_V1")
        if self.q is not None:
            if any(not 0.0 < qn <= 1.0 for qn in self.q):
                raise ValueError("participation probabilities must lie in (0, 1]")
            object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        if self.partial_form not in ("delta", "model"):
            raise ValueError("partial_form must be 'delta' or 'model'")
        if self.server_weighting not in ("unit", "weighted"):
            raise ValueError("server_weighting must be 'unit' or 'weighted'")
        if self.v2_order not in ("client_major", "iteration_major"):
            raise ValueError("v2_order must be 'client_major' or 'iteration_major'")
        if self.sampling not in ("replacement", "epoch"):
            raise ValueError("sampling must be 'replacement' or 'epoch'")
        if self.client_taus is not None and self.variant is Variant.MB_SGD:
            raise ValueError("MB_SGD takes one step per round; client_taus does not apply")

    @property
    def tau_max(self) -> int:
        if self.variant is Variant.SFL_V1:
            return max(self.tau, self.tau_tilde)
        if self.client_taus:
            return max(self.client_taus)
        return self.tau

    @property
    def tau_min(self) -> int:
        if self.variant is Variant.SFL_V1:
            return min(self.tau, self.tau_tilde)
        return self.tau

    def eta(self, t: int) -> float:
        return eta_at(self.schedule, t, self.S, self.mu, tau_ref=self.tau_max)


# --------------------------------------------------------------------------
# Aggregation and participation
# --------------------------------------------------------------------------

def aggregate_full(models, weights) -> np.ndarray:
    """``sum_n a_n x_n`` in ascending client order."""
    if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise AggregationError(f"weights sum to {math.fsum(weights)!r}, not 1")
    return weighted_sum(list(models), list(weights))


def aggregate_partial(models: dict[int, np.ndarray], weights, probs,
                      previous_global: np.ndarray, form: str = "model") -> np.ndarray:
    """Bias-corrected aggregation over the participating clients.

    ``models`` maps client index to its local model. ``form="model"`` returns
    ``sum_{n in P} (a_n/q_n) x_n``; ``form="delta"`` applies the same weights
    to the updates, ``x + sum_{n in P} (a_n/q_n)(x_n - x)``. Both have
    expectation ``sum_n a_n x_n`` over the Bernoulli masks. An empty set
    returns ``previous_global``.
    """
    P = sorted(models)
    if not P:
        return previous_global
    for n in P:
        if not probs[n] > 0:
            raise AggregationError(f"client {n} participates with q_n = {probs[n]}")
    coef = [weights[n] / probs[n] for n in P]
    if form == "model":
        return weighted_sum([models[n] for n in P], coef)
    if form == "delta":
        step = weighted_sum([models[n] - previous_global for n in P], coef)
        return axpy(1.0, step, previous_global)
    raise ValueError(f"unknown aggregation form {form!r}")


def sample_participation(q, rng: RngStream) -> list[int]:
    """Independent Bernoulli(q_n) draws; returns participating indices in ascending order."""
    u = rng.random(len(q))
    return [n for n in range(len(q)) if u[n] < q[n]]


# --------------------------------------------------------------------------
# Shared run machinery
# --------------------------------------------------------------------------

class _Run:
    def __init__(self, cfg: RunConfig, shards: list[ClientShard], obj, x0: SplitParams,
                 reference: Reference | None):
        self.cfg = cfg
        self.shards = shards
        self.obj = obj
        self.N = len(shards)
        self.a = [s.weight for s in shards]
        if abs(math.fsum(self.a) - 1.0) > WEIGHT_SUM_TOL:
            raise AggregationError("client weights do not sum to 1")
        if cfg.q is not None:
            if len(cfg.q) != self.N:
                raise ValueError("one participation probability per client is required")
            self.q = list(cfg.q)
        else:
            self.q = [s.q for s in shards]
        self.full = all(qn == 1.0 for qn in self.q)
        self.reference = reference
        if x0.client.size != obj.client_size or x0.server.size != obj.server_size:
            raise ValueError("initial parameters do not match the objective's blocks")
        self.x0 = x0
        seed = cfg.root_seed
        streams = [derive_stream(seed, "client-batch", n) for n in range(self.N)]
        if cfg.sampling == "replacement":
            self._draw = [self._replacement(s, r) for s, r in zip(shards, streams)]
        else:
            self._draw = [EpochSampler(s, cfg.b_s, r).next for s, r in zip(shards, streams)]
        self.part_rng = derive_stream(seed, "participation", 0)
        self.order_rng = derive_stream(seed, "order", 0)
        self.X_all = np.concatenate([s.X for s in shards])
        self.y_all = np.concatenate([s.y for s in shards])
        self.trace = Trace(cfg.variant.value)
        self.trace.max_grad_sq = [0.0] * self.N
        self.comm = 0
        self.flops = 0
        self.fps = obj.flops_per_sample()
        self._check_stepsize()

    def _replacement(self, shard, rng):
        b_s = self.cfg.b_s
        return lambda: sample_batch(shard, b_s, rng)

    def _check_stepsize(self):
        cfg = self.cfg
        if cfg.S is None:
            return
        cap = stepsize_cap(cfg.S, cfg.tau_max)
        eta0 = cfg.eta(0)
        if eta0 > cap * (1.0 + 1e-12):
            msg = f"eta_0 = {eta0:.6g} exceeds 1/(2 S tau_max) = {cap:.6g}"
            if cfg.strict_stepsize:
                raise StepsizeError(msg)
            warnings.warn(msg, StepsizeWarning, stacklevel=3)

    def tau_of(self, n: int) -> int:
        return self.cfg.client_taus[n] if self.cfg.client_taus else self.cfg.tau

    def batch(self, n: int) -> Batch:
        return self._draw[n]()

    def participants(self) -> list[int]:
        if self.full:
            return list(range(self.N))
        return sample_participation(self.q, self.part_rng)

    def step(self, n: int, x_c, x_s, batch, across_cut: bool = True):
        """Gradient for client n with wire and flop accounting.

        ``across_cut=False`` is for the monolithic baselines, where nothing
        crosses a client/server boundary per iteration.
        """
        loss, g_c, g_s, act, cut_grad = split_step(self.obj, x_c, x_s, batch)
        if across_cut:
            self.comm += (act.size + cut_grad.size) * BYTES_PER_SCALAR
        self.flops += self.fps * batch.size
        gsq = float(g_c @ g_c) + float(g_s @ g_s)
        if gsq > self.trace.max_grad_sq[n]:
            self.trace.max_grad_sq[n] = gsq
        return g_c, g_s

    def count_model_transfer(self, n_scalars: int, clients: int) -> None:
        # one download plus one upload per client
        self.comm += 2 * n_scalars * BYTES_PER_SCALAR * clients

    def client_aggregate(self, local: dict[int, np.ndarray], previous: np.ndarray) -> np.ndarray:
        if self.full:
            return aggregate_full([local[n] for n in range(self.N)], self.a)
        return aggregate_partial(local, self.a, self.q, previous, self.cfg.partial_form)

    def record(self, t: int, x_c: np.ndarray, x_s: np.ndarray) -> None:
        x = SplitParams(x_c, x_s)
        try:
            loss, grad = self.obj.loss_and_grad(x, Batch(self.X_all, self.y_all))
        except NonFiniteError as exc:
            raise DivergenceError(t, str(exc)) from None
        eta = self.cfg.eta(t)
        if self.reference is not None:
            xs_ = self.reference.x_star
            gap = loss - self.reference.f_star
            dc = sq_dist(x_c, xs_.client)
            ds = sq_dist(x_s, xs_.server)
            dfull = sq_dist(x.concat(), xs_.concat(), split=x_c.size)
        else:
            gap = dc = ds = dfull = math.nan
        self.trace.rows.append(TraceRow(
            t=t, loss=loss, loss_gap=gap, dist_c=dc, dist_s=ds, dist_full=dfull,
            eta=eta, grad_norm_sq=float(grad @ grad), comm_bytes=self.comm, flops=self.flops))

    def run_rounds(self, body, x_c, x_s) -> Trace:
        self.record(0, x_c, x_s)
        for t in range(self.cfg.T):
            try:
                x_c, x_s = body(t, self.cfg.eta(t), x_c, x_s)
            except NonFiniteError as exc:
                raise DivergenceError(t, str(exc)) from None
            self.record(t + 1, x_c, x_s)
        self.trace.final = SplitParams(x_c, x_s)
        return self.trace

    def service_order(self, P: list[int]) -> list[int]:
        if self.cfg.redraw_order:
            return self.order_rng.permutation(P)
        if not hasattr(self, "_fixed_order"):
            self._fixed_order = self.order_rng.permutation(range(self.N))
        members = set(P)
        return [n for n in self._fixed_order if n in members]


# --------------------------------------------------------------------------
# SFL-V1
# --------------------------------------------------------------------------

def run_sfl_v1(cfg: RunConfig, shards, obj, x0: SplitParams,
               reference: Reference | None = None) -> Trace:
    """SFL-V1: one server block per client, client blocks averaged every
    ``tau`` iterations and server blocks every ``tau_tilde`` iterations on a
    global iteration clock. A round is the window between client
    aggregations.
    """
    if cfg.variant is not Variant.SFL_V1:
        raise ValueError("run_sfl_v1 needs variant SFL_V1")
    run = _Run(cfg, shards, obj, x0, reference)
    N, tau, tau_tilde = run.N, cfg.tau, cfg.tau_tilde
    xs_n = [x0.server] * N
    clock = [0]

    def virtual_server(xs_local):
        if all(v is xs_local[0] for v in xs_local):
            return xs_local[0]
        return aggregate_full(xs_local, run.a)

    state = {"xs": x0.server}

    def body(t, eta, x_c, _x_s):
        nonlocal xs_n
        P = run.participants()
        run.trace.participants.append(P)
        run.count_model_transfer(obj.client_size, len(P))
        xc_n = {n: x_c for n in P}
        x_start = np.concatenate([x_c, _x_s]) if cfg.record_drift else None
        drift = {n: 0.0 for n in P}
        for i in range(tau):
            for n in P:
                if x_start is not None:
                    drift[n] += sq_dist(np.concatenate([xc_n[n], xs_n[n]]), x_start)
                g_c, g_s = run.step(n, xc_n[n], xs_n[n], run.batch(n))
                xs_n[n] = axpy(-eta, g_s, xs_n[n])
                xc_n[n] = axpy(-eta, g_c, xc_n[n])
            clock[0] += 1
            if clock[0] % tau_tilde == 0:
                if run.full:
                    xs = aggregate_full(xs_n, run.a)
                else:
                    xs = aggregate_partial({n: xs_n[n] for n in P}, run.a, run.q,
                                           state["xs"], cfg.partial_form)
                state["xs"] = xs
                xs_n = [xs] * N
                run.trace.server_sync_spread.append(max(sq_dist(v, xs) for v in xs_n))
        if cfg.record_drift:
            run.trace.drift.append([drift.get(n, math.nan) for n in range(N)])
            run.trace.drift_eta.append(eta)
        x_c = run.client_aggregate(xc_n, x_c)
        return x_c, virtual_server(xs_n)

    return run.run_rounds(body, x0.client, x0.server)


# --------------------------------------------------------------------------
# SFL-V2
# --------------------------------------------------------------------------

def run_sfl_v2(cfg: RunConfig, shards, obj, x0: SplitParams,
               reference: Reference | None = None) -> Trace:
    """SFL-V2: a single server block updated in place, clients served in a
    random order each round; client blocks averaged at round end."""
    if cfg.variant is not Variant.SFL_V2:
        raise ValueError("run_sfl_v2 needs variant SFL_V2")
    run = _Run(cfg, shards, obj, x0, reference)

    def server_weight(n):
        w = run.a[n] if cfg.server_weighting == "weighted" else 1.0
        return w if run.full else w / run.q[n]

    def body(t, eta, x_c, x_s):
        P = run.participants()
        run.trace.participants.append(P)
        run.count_model_transfer(obj.client_size, len(P))
        order = run.service_order(P)
        xc_n = {n: x_c for n in P}
        if cfg.v2_order == "client_major":
            for n in order:
                w = server_weight(n)
                for _ in range(run.tau_of(n)):
                    g_c, g_s = run.step(n, xc_n[n], x_s, run.batch(n))
                    x_s = axpy(-eta * w, g_s, x_s)
                    xc_n[n] = axpy(-eta, g_c, xc_n[n])
        else:
            for i in range(run.cfg.tau_max):
                for n in order:
                    if i >= run.tau_of(n):
                        continue
                    g_c, g_s = run.step(n, xc_n[n], x_s, run.batch(n))
                    x_s = axpy(-eta * server_weight(n), g_s, x_s)
                    xc_n[n] = axpy(-eta, g_c, xc_n[n])
        return run.client_aggregate(xc_n, x_c), x_s

    return run.run_rounds(body, x0.client, x0.server)


# --------------------------------------------------------------------------
# Baselines
# --------------------------------------------------------------------------

def run_fedavg(cfg: RunConfig, shards, obj, x0: SplitParams,
               reference: Reference | None = None) -> Trace:
    """Local SGD on the whole model with periodic weighted averaging."""
    if cfg.variant is not Variant.FEDAVG:
        raise ValueError("run_fedavg needs variant FEDAVG")
    run = _Run(cfg, shards, obj, x0, reference)
    k = obj.client_size

    def body(t, eta, x_c, x_s):
        x = np.concatenate([x_c, x_s])
        P = run.participants()
        run.trace.participants.append(P)
        run.count_model_transfer(obj.size, len(P))
        local = {}
        drift = {}
        for n in P:
            x_n = x
            d = 0.0
            for _ in range(run.tau_of(n)):
                if cfg.record_drift:
                    d += sq_dist(x_n, x)
                # fresh copies keep memory layout identical to the split runs
                g_c, g_s = run.step(n, x_n[:k].copy(), x_n[k:].copy(), run.batch(n),
                                    across_cut=False)
                x_n = axpy(-eta, np.concatenate([g_c, g_s]), x_n)
            local[n] = x_n
            drift[n] = d
        if cfg.record_drift:
            run.trace.drift.append([drift.get(n, math.nan) for n in range(run.N)])
            run.trace.drift_eta.append(eta)
        x = run.client_aggregate(local, x)
        return x[:k].copy(), x[k:].copy()

    return run.run_rounds(body, x0.client, x0.server)


def run_sl(cfg: RunConfig, shards, obj, x0: SplitParams,
           reference: Reference | None = None) -> Trace:
    """Sequential split learning: one model, clients served one after another
    and the client block handed from client to client."""
    if cfg.variant is not Variant.SL:
        raise ValueError("run_sl needs variant SL")
    run = _Run(cfg, shards, obj, x0, reference)

    def body(t, eta, x_c, x_s):
        P = run.participants()
        run.trace.participants.append(P)
        run.count_model_transfer(obj.client_size, len(P))
        for n in run.service_order(P):
            for _ in range(run.tau_of(n)):
                g_c, g_s = run.step(n, x_c, x_s, run.batch(n))
                x_s = axpy(-eta, g_s, x_s)
                x_c = axpy(-eta, g_c, x_c)
        return x_c, x_s

    return run.run_rounds(body, x0.client, x0.server)


def run_mb_sgd(cfg: RunConfig, shards, obj, x0: SplitParams,
               reference: Reference | None = None) -> Trace:
    """One global step per round on the weighted average of client mini-batch gradients."""
    if cfg.variant is not Variant.MB_SGD:
        raise ValueError("run_mb_sgd needs variant MB_SGD")
    run = _Run(cfg, shards, obj, x0, reference)

    def body(t, eta, x_c, x_s):
        P = run.participants()
        run.trace.participants.append(P)
        run.count_model_transfer(obj.size, len(P))
        if not P:
            return x_c, x_s
        grads = []
        for n in P:
            g_c, g_s = run.step(n, x_c, x_s, run.batch(n), across_cut=False)
            grads.append(np.concatenate([g_c, g_s]))
        if run.full:
            g = aggregate_full(grads, run.a)
        else:
            g = weighted_sum(grads, [run.a[n] / run.q[n] for n in P])
        x = axpy(-eta, g, np.concatenate([x_c, x_s]))
        k = obj.client_size
        return x[:k].copy(), x[k:].copy()

    return run.run_rounds(body, x0.client, x0.server)


RUNNERS = {
    Variant.SFL_V1: run_sfl_v1,
    Variant.SFL_V2: run_sfl_v2,
    Variant.FEDAVG: run_fedavg,
    Variant.SL: run_sl,
    Variant.MB_SGD: run_mb_sgd,
}


def run(cfg: RunConfig, shards, obj, x0: SplitParams,
        reference: Reference | None = None) -> Trace:
    return RUNNERS[cfg.variant](cfg, shards, obj, x0, reference)
