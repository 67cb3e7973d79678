"""Turn an experiment config plus a seed into data, objective and run settings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..algorithms import Constant, Diminishing, RunConfig
from ..analysis import client_constants, optimum_oracle
from ..data import (ClientShard, PartitionSpec, balanced_dirichlet_partition, build_shards,
                    dirichlet_partition, make_binary_targets, make_classification,
                    make_regression_targets, shared_tau)
from ..models import SplitLogistic, SplitMLP, SplitParams, SplitRidge
from ..numkit import derive_stream
from ..trace import Reference
from .config import ExperimentConfig


@dataclass
class Problem:
    obj: object
    shards: list[ClientShard]
    X: np.ndarray
    y: np.ndarray
    x0: SplitParams
    reference: Reference | None
    S: float | None
    mu: float | None
    seed: int

    @property
    def convex(self) -> bool:
        return self.reference is not None


def make_objective(cfg: ExperimentConfig):
    o, d = cfg.objective, cfg.data
    if o.kind == "ridge":
        return SplitRidge(d.dim, o.n_client_features, lam=o.lam)
    if o.kind == "logistic":
        return SplitLogistic(d.dim, o.n_client_features, lam=o.lam)
    return SplitMLP(o.widths, o.cut, lam=o.lam)


def make_data(cfg: ExperimentConfig, seed: int):
    """``(X, y, parts)``. Data, targets and partition use separate streams,
    so changing ``beta`` or ``N`` leaves the pooled dataset unchanged."""
    d = cfg.data
    spec = PartitionSpec(N=d.N, beta=d.beta, classes=d.classes, samples_per_class=d.samples_per_class,
                         dim=d.dim, margin=d.margin, blob_std=d.blob_std)
    X, labels = make_classification(spec, derive_stream(seed, "data"))
    kind = cfg.objective.kind
    if kind == "ridge":
        y, _ = make_regression_targets(X, labels, derive_stream(seed, "targets"),
                                       noise=d.target_noise, label_shift=d.label_shift)
    elif kind == "logistic":
        y = make_binary_targets(labels, d.classes)
    else:
        y = labels.astype(np.float64)
    partition = balanced_dirichlet_partition if d.balanced else dirichlet_partition
    parts = partition(labels, d.N, d.beta, derive_stream(seed, "partition"))
    return X, y, parts


def build_problem(cfg: ExperimentConfig, seed: int) -> Problem:
    X, y, parts = make_data(cfg, seed)
    q = cfg.q if cfg.q is not None else None
    shards = build_shards(X, y, parts, q=q)
    obj = make_objective(cfg)
    if cfg.objective.kind == "mlp":
        x0 = obj.init_params(derive_stream(seed, "init"), scale=cfg.objective.init_scale or 0.5)
        return Problem(obj, shards, X, y, x0, None, None, None, seed)
    init = derive_stream(seed, "init") if cfg.objective.init_scale > 0 else None
    x0 = obj.init_params(init, scale=cfg.objective.init_scale)
    if len(X) == sum(s.size for s in shards):
        X_used, y_used = X, y
    else:
        # balanced partitions drop the remainder; the optimum is over what clients hold
        X_used = np.concatenate([s.X for s in shards])
        y_used = np.concatenate([s.y for s in shards])
    x_star, f_star = optimum_oracle(obj, X_used, y_used)
    S, mu = client_constants(obj, shards)
    return Problem(obj, shards, X_used, y_used, x0, Reference(x_star, f_star), S, mu, seed)


def local_iterations(cfg: ExperimentConfig, problem: Problem) -> int:
    if cfg.tau is not None:
        return cfg.tau
    return shared_tau([s.size for s in problem.shards], cfg.b_s, cfg.E)


def run_config(cfg: ExperimentConfig, problem: Problem, strict: bool | None = None) -> RunConfig:
    s = cfg.schedule
    if s.kind == "constant":
        schedule = Constant(s.eta)
    else:
        schedule = Diminishing(beta_ss=s.beta_ss, gamma=s.gamma, tau_ref=s.tau_ref)
    return RunConfig(
        variant=cfg.variant, T=cfg.T, tau=local_iterations(cfg, problem), b_s=cfg.b_s,
        schedule=schedule, tau_tilde=cfg.tau_tilde, root_seed=problem.seed,
        S=problem.S, mu=problem.mu, partial_form=cfg.partial_form,
        server_weighting=cfg.server_weighting, v2_order=cfg.v2_order,
        redraw_order=cfg.redraw_order, sampling=cfg.sampling,
        strict_stepsize=cfg.strict_stepsize if strict is None else strict,
        record_drift=cfg.record_drift)
