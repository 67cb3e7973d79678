"""Fast invariant checks runnable from the command line."""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..algorithms import RunConfig, aggregate_full, aggregate_partial, run
from ..analysis import CostInputs, check_trace, cost_model
from ..data import build_shards, dirichlet_partition, make_classification, make_regression_targets, PartitionSpec
from ..models import Batch, SplitLogistic, SplitMLP, SplitParams, SplitRidge
from ..numkit import derive_stream


def _ridge_setup(seed: int = 0, N: int = 5):
    spec = PartitionSpec(N=N, beta=0.5, classes=4, samples_per_class=20, dim=6)
    X, labels = make_classification(spec, derive_stream(seed, "data"))
    y, _ = make_regression_targets(X, labels, derive_stream(seed, "targets"))
    shards = build_shards(X, y, dirichlet_partition(labels, N, 0.5, derive_stream(seed, "partition")))
    obj = SplitRidge(6, 2, lam=0.1)
    return obj, shards, obj.init_params()


def check_v1_matches_fedavg() -> tuple[bool, str]:
    obj, shards, x0 = _ridge_setup()
    t1 = run(RunConfig("SFL_V1", T=20, tau=3, b_s=4, root_seed=1), shards, obj, x0)
    t2 = run(RunConfig("FEDAVG", T=20, tau=3, b_s=4, root_seed=1), shards, obj, x0)
    same = all(a.loss == b.loss for a, b in zip(t1.rows, t2.rows))
    same &= np.array_equal(t1.final.concat(), t2.final.concat())
    return same, "SFL-V1 (tau_tilde = tau) vs FedAvg, 20 rounds"


def check_unbiased_aggregation() -> tuple[bool, str]:
    rng = derive_stream(0, "selftest")
    N = 3
    prev = rng.normal(4)
    models = [rng.normal(4) for _ in range(N)]
    a = [0.2, 0.3, 0.5]
    q = [0.3, 0.6, 0.9]
    expect = np.zeros(4)
    for mask in itertools.product([0, 1], repeat=N):
        p = math.prod(q[n] if m else 1 - q[n] for n, m in enumerate(mask))
        part = {n: models[n] for n in range(N) if mask[n]}
        expect = expect + p * aggregate_partial(part, a, q, prev, form="delta")
    err = float(np.max(np.abs(expect - aggregate_full(models, a))))
    return err <= 1e-12, f"exhaustive-mask expectation error {err:.2e}"


def check_decomposition_rows() -> tuple[bool, str]:
    obj, shards, x0 = _ridge_setup()
    from ..analysis import client_constants, optimum_oracle
    from ..trace import Reference
    X = np.concatenate([s.X for s in shards])
    y = np.concatenate([s.y for s in shards])
    ref = Reference(*optimum_oracle(obj, X, y))
    S, _ = client_constants(obj, shards)
    tr = run(RunConfig("SFL_V2", T=30, tau=2, b_s=4), shards, obj, x0, ref)
    verdicts = check_trace(tr, S)
    return all(v.ok for v in verdicts), f"{len(verdicts)} rows checked"


def _fd_rel_error(obj, x: SplitParams, batch: Batch, h: float = 1e-6) -> float:
    k = obj.client_size
    w = x.concat()
    _, g = obj.loss_and_grad(x, batch)
    fd = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        fp = obj.loss_and_grad(SplitParams.from_flat(w + e, k), batch)[0]
        fm = obj.loss_and_grad(SplitParams.from_flat(w - e, k), batch)[0]
        fd[i] = (fp - fm) / (2 * h)
    return float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))


def check_gradients() -> tuple[bool, str]:
    rng = derive_stream(0, "selftest-fd")
    X = rng.normal((12, 5))
    worst = 0.0
    for obj, y in ((SplitRidge(5, 2, 0.1), rng.normal(12)),
                   (SplitLogistic(5, 2, 0.1), (rng.random(12) > 0.5).astype(float)),
                   (SplitMLP([5, 4, 3], 1, 0.1), rng.integers(3, 12).astype(float))):
        x = obj.init_params(rng, 0.5)
        worst = max(worst, _fd_rel_error(obj, x, Batch(X, y)))
    return worst < 1e-5, f"worst relative finite-difference error {worst:.2e}"


def check_cost_spot() -> tuple[bool, str]:
    c = cost_model(CostInputs(K=10, p=1, q_smash=1, R=1, T_fb=1, T_fedavg=1, W=3, beta_frac=0.5), "FL")
    return c["total_comm"] == 60, f"FL total_comm = {c['total_comm']}"


def check_determinism() -> tuple[bool, str]:
    obj, shards, x0 = _ridge_setup()
    cfg = RunConfig("SFL_V2", T=10, tau=2, b_s=4, q=(0.5,) * len(shards), root_seed=7)
    return run(cfg, shards, obj, x0).to_csv() == run(cfg, shards, obj, x0).to_csv(), \
        "repeat run gives identical CSV"


CHECKS = {
    "v1_equals_fedavg": check_v1_matches_fedavg,
    "unbiased_partial_aggregation": check_unbiased_aggregation,
    "decomposition_rows": check_decomposition_rows,
    "gradients_finite_difference": check_gradients,
    "cost_model_spot": check_cost_spot,
    "determinism": check_determinism,
}


def run_selftest() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn()
        out.append((name, bool(ok), detail))
    return out
