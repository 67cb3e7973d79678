"""Run orchestration: single runs, seed sweeps, grids and method comparisons."""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..algorithms import RunConfig, Variant, run
from ..analysis import (Constants, Theorem, bound_report, check_trace, estimate_eps,
                        estimate_G_sq, estimate_sigma, estimate_smoothness, fit_rate, grad_metric)
from ..models import full_loss
from ..numkit import derive_stream, sq_dist
from ..trace import Trace
from .config import ExperimentConfig
from .problem import Problem, build_problem, run_config

SUMMARY_SCHEMA_VERSION = 1
SUMMARY_METRICS = ("final_loss", "final_loss_gap", "final_grad_norm_sq", "grad_metric",
                   "comm_bytes", "flops")


@dataclass
class RunResult:
    seed: int
    problem: Problem
    run_cfg: RunConfig
    trace: Trace
    constants: Constants | None = None
    bounds: list[dict] = field(default_factory=list)


def resolve_seeds(cfg: ExperimentConfig, cli_seed: int | None = None,
                  env_seed: str | None = None) -> list[int]:
    """``--seed`` wins, then the config's seed list, then ``SFL_LAB_SEED``, then 0."""
    if cli_seed is not None:
        return [cli_seed]
    if cfg.seeds:
        return list(cfg.seeds)
    if env_seed:
        return [int(env_seed)]
    return [0]


def estimate_constants(cfg: ExperimentConfig, problem: Problem, run_cfg: RunConfig,
                       trace: Trace) -> Constants:
    """Exact constants where the problem provides them, estimates otherwise."""
    obj, shards, x0 = problem.obj, problem.shards, problem.x0
    probes = [x0, trace.final]
    if problem.convex:
        probes.append(problem.reference.x_star)
    sigma_sq = []
    for n, shard in enumerate(shards):
        rng = derive_stream(problem.seed, "sigma", n)
        sigma_sq.append(max(estimate_sigma(obj, shard, x, cfg.sigma_samples, run_cfg.b_s, rng,
                                           run_cfg.sampling) for x in probes))
    prov = {"a": "exact", "q": "given", "sigma_sq": "estimated", "G_sq": "estimated",
            "eps_sq": "estimated"}
    f0 = full_loss(obj, x0, problem.X, problem.y)
    kw = {}
    if problem.convex:
        ref = problem.reference
        kw.update(S=problem.S, mu=problem.mu, I_err=sq_dist(x0.concat(), ref.x_star.concat()),
                  f0_gap=max(f0 - ref.f_star, 0.0))
        prov.update(S="exact", mu="exact", I_err="exact", f0_gap="exact")
    else:
        # cross-entropy plus an L2 term is non-negative, so f(x0) bounds f(x0) - f*
        S_hat = estimate_smoothness(obj, shards, probes, derive_stream(problem.seed, "smoothness"))
        kw.update(S=S_hat, f0_gap=f0)
        prov.update(S="estimated", f0_gap="upper bound")
    q = list(run_cfg.q) if run_cfg.q is not None else [s.q for s in shards]
    return Constants(a=[s.weight for s in shards], sigma_sq=sigma_sq, G_sq=estimate_G_sq(trace),
                     eps_sq=estimate_eps(obj, shards, probes), q=q, provenance=prov, **kw)


def applicable_theorems(run_cfg: RunConfig, problem: Problem, constants: Constants) -> list[Theorem]:
    if run_cfg.variant is Variant.SFL_V1:
        prefix = "V1"
    elif run_cfg.variant is Variant.SFL_V2:
        prefix = "V2"
    else:
        return []
    suffix = "_P" if any(qn < 1.0 for qn in constants.q) else ""
    kinds = ["NC"]
    if problem.convex:
        kinds = ["SC", "GC", "NC"] if problem.mu and problem.mu > 0 else ["GC", "NC"]
    return [Theorem(f"{prefix}_{k}{suffix}") for k in kinds]


def run_one(cfg: ExperimentConfig, seed: int, strict: bool | None = None,
            with_bounds: bool = True) -> RunResult:
    problem = build_problem(cfg, seed)
    rc = run_config(cfg, problem, strict)
    trace = run(rc, problem.shards, problem.obj, problem.x0, problem.reference)
    result = RunResult(seed, problem, rc, trace)
    if with_bounds:
        result.constants = estimate_constants(cfg, problem, rc, trace)
        result.bounds = [bound_report(th, result.constants, rc)
                         for th in applicable_theorems(rc, problem, result.constants)]
    return result


def run_seeds(cfg: ExperimentConfig, seeds, threads: int = 1, strict: bool | None = None,
              with_bounds: bool = True) -> list[RunResult]:
    """Independent runs; results come back in seed order whatever ``threads`` is."""
    def job(s):
        return run_one(cfg, s, strict, with_bounds)
    if threads <= 1:
        return [job(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, seeds))


def seed_metrics(r: RunResult) -> dict:
    last = r.trace.rows[-1]
    return {
        "seed": r.seed,
        "final_loss": last.loss,
        "final_loss_gap": last.loss_gap if r.problem.convex else None,
        "final_grad_norm_sq": last.grad_norm_sq,
        "grad_metric": grad_metric(r.trace),
        "comm_bytes": last.comm_bytes,
        "flops": last.flops,
    }


def mean_stderr(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if len(v) == 0:
        return {"mean": None, "stderr": None}
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "stderr": se}


def _safe_slope(t, values):
    try:
        return fit_rate((t, values))
    except ValueError:
        return None


def checks(results: list[RunResult]) -> dict:
    """Hard checks (block additivity, smoothness) plus the soft bound check."""
    identity = smooth = True
    violations = []
    for r in results:
        if r.problem.convex:
            # without an optimum the distance columns are NaN and nothing is checked
            verdicts = check_trace(r.trace, r.problem.S)
            identity &= all(v.identity_exact for v in verdicts)
            smooth &= all(v.smoothness_ok for v in verdicts)
        for b in r.bounds:
            if not b["theorem"].startswith(("V1_SC", "V2_SC")):
                continue
            gap = r.trace.rows[-1].loss_gap
            if gap > b["value"]:
                violations.append({"seed": r.seed, "theorem": b["theorem"], "loss_gap": gap,
                                   "bound": b["value"], "constants": b["constants"]})
    return {"decomposition_identity": identity, "smoothness_bound": smooth,
            "bound_violations": violations}


def summarize(cfg: ExperimentConfig, results: list[RunResult], extra: dict | None = None) -> dict:
    per_seed = [seed_metrics(r) for r in results]
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "name": cfg.name,
        "variant": cfg.variant.value,
        "seeds": [r.seed for r in results],
        "per_seed": per_seed,
        "aggregate": {k: mean_stderr(m[k] for m in per_seed) for k in SUMMARY_METRICS},
        "slopes": {},
        "bounds": [{"seed": r.seed, **{k: b[k] for k in ("theorem", "value")}}
                   for r in results for b in r.bounds],
        "checks": checks(results),
    }
    t = results[0].trace.t
    if all(r.problem.convex for r in results):
        mean_gap = np.mean([r.trace.column("loss_gap") for r in results], axis=0)
        summary["slopes"]["loss_gap"] = _safe_slope(t, mean_gap)
    summary["slopes"]["grad_norm_sq"] = _safe_slope(
        t, np.mean([r.trace.column("grad_norm_sq") for r in results], axis=0))
    if extra:
        summary.update(extra)
    return summary


def checks_passed(summary: dict) -> bool:
    c = summary["checks"]
    return c["decomposition_identity"] and c["smoothness_bound"]


def write_outputs(cfg: ExperimentConfig, results: list[RunResult], out_dir, summary: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        if cfg.emit.trace_csv:
            r.trace.write_csv(out / f"trace_{r.trace.variant}_seed{r.seed}.csv")
    if cfg.emit.bounds_json:
        reports = [{"seed": r.seed, **b} for r in results for b in r.bounds]
        _dump(out / "bounds.json", reports)
    if cfg.emit.summary_json:
        _dump(out / "summary.json", summary)


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def grid_points(sweep: dict[str, list]) -> list[dict]:
    keys = sorted(sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(sweep[k] for k in keys))]


def point_label(point: dict) -> str:
    return "_".join(f"{k.split('.')[-1]}={v}" for k, v in point.items()) or "base"


COMPARE_VARIANTS = (Variant.SFL_V1, Variant.SFL_V2, Variant.FEDAVG, Variant.SL, Variant.MB_SGD)


def variant_config(cfg: ExperimentConfig, variant: Variant) -> ExperimentConfig:
    """Same setup under another method; ``tau_tilde`` is dropped off SFL-V1."""
    updates = {"variant": variant.value}
    if variant is not Variant.SFL_V1:
        updates["tau_tilde"] = None
    return cfg.with_updates(updates)
