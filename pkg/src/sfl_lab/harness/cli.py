"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from ..algorithms import Constant, Diminishing, RunConfig, StepsizeError, Variant
from ..analysis import Constants, CostInputs, MissingConstant, Theorem, bound_report, cost_model
from ..analysis.cost import METHODS
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import (COMPARE_VARIANTS, checks_passed, grid_points, point_label, resolve_seeds,
                         run_seeds, summarize, variant_config, write_outputs)
from .selftest import run_selftest

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="run this seed only")
    p.add_argument("--out", help="output directory (overrides the config's out_dir)")
    p.add_argument("--strict-stepsize", action="store_true",
                   help="reject step sizes above the convergence cap instead of warning")
    p.add_argument("--threads", type=int, default=1, help="concurrent runs within a sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sfl-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="one config, every seed: trace CSVs and summary JSON"))
    _common(sub.add_parser("sweep", help="grid over the config's 'sweep' entries times seeds"))
    _common(sub.add_parser("compare", help="all five methods on one shared setup"))
    b = sub.add_parser("bounds", help="evaluate the convergence bounds for a config and constants")
    _common(b)
    b.add_argument("--constants", required=True, help="constants JSON")
    b.add_argument("--theorem", action="append", choices=[t.value for t in Theorem],
                   help="repeatable; default: every bound for the config's variant")
    c = sub.add_parser("cost", help="communication and latency cost model")
    c.add_argument("--method", default="all", choices=(*METHODS, "all"))
    for name in ("K", "p", "q-smash", "R", "T-fb", "T-fedavg", "W", "beta-frac"):
        c.add_argument(f"--{name}", type=float, default=1.0)
    sub.add_parser("selftest", help="fast invariant checks")
    return parser


def _load(args) -> ExperimentConfig:
    return load_config(args.config)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out if args.out else cfg.out_dir)


def _seeds(args, cfg):
    return resolve_seeds(cfg, args.seed, os.environ.get("SFL_LAB_SEED"))


def _strict(args):
    return True if args.strict_stepsize else None


def cmd_run(args) -> int:
    cfg = _load(args)
    results = run_seeds(cfg, _seeds(args, cfg), args.threads, _strict(args))
    summary = summarize(cfg, results)
    write_outputs(cfg, results, _out_dir(args, cfg), summary)
    _print_summary(summary)
    return EXIT_OK if checks_passed(summary) else EXIT_CHECK_FAILED


def cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = _seeds(args, cfg)
    out = _out_dir(args, cfg)
    ok = True
    index = []
    for point in grid_points(cfg.sweep):
        sub_cfg = cfg.with_updates(point)
        results = run_seeds(sub_cfg, seeds, args.threads, _strict(args))
        summary = summarize(sub_cfg, results, {"grid_point": point})
        write_outputs(sub_cfg, results, out / point_label(point), summary)
        ok &= checks_passed(summary)
        index.append({"grid_point": point, "dir": point_label(point),
                      "final_loss": summary["aggregate"]["final_loss"]})
        _print_summary(summary, prefix=point_label(point))
    _write_json(out / "sweep.json", index)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_compare(args) -> int:
    cfg = _load(args)
    seeds = _seeds(args, cfg)
    out = _out_dir(args, cfg)
    ok = True
    table = {}
    for variant in COMPARE_VARIANTS:
        v_cfg = variant_config(cfg, variant)
        results = run_seeds(v_cfg, seeds, args.threads, _strict(args))
        summary = summarize(v_cfg, results)
        write_outputs(v_cfg, results, out / variant.value, summary)
        ok &= checks_passed(summary)
        table[variant.value] = summary["aggregate"]
        _print_summary(summary, prefix=variant.value)
    _write_json(out / "compare.json", table)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def bounds_run_config(cfg: ExperimentConfig, c: Constants, T: int | None = None) -> RunConfig:
    if cfg.tau is None:
        raise ConfigError(["tau: the bounds command needs an explicit tau"])
    s = cfg.schedule
    schedule = Constant(s.eta) if s.kind == "constant" else Diminishing(s.beta_ss, s.gamma, s.tau_ref)
    return RunConfig(variant=cfg.variant, T=T or cfg.T, tau=cfg.tau, b_s=cfg.b_s,
                     schedule=schedule, tau_tilde=cfg.tau_tilde, S=c.S, mu=c.mu)


def cmd_bounds(args) -> int:
    cfg = _load(args)
    try:
        c = Constants.load(args.constants)
    except (OSError, TypeError, ValueError) as err:
        raise ConfigError([f"{args.constants}: {err}"]) from None
    rc = bounds_run_config(cfg, c)
    if args.theorem:
        theorems = [Theorem(t) for t in args.theorem]
    else:
        prefix = {Variant.SFL_V1: "V1", Variant.SFL_V2: "V2"}.get(cfg.variant)
        if prefix is None:
            raise ConfigError(["variant: bounds exist for SFL_V1 and SFL_V2 only"])
        suffix = "_P" if any(qn < 1.0 for qn in c.q) else ""
        theorems = [Theorem(f"{prefix}_{k}{suffix}") for k in ("SC", "GC", "NC")]
    reports = []
    for th in theorems:
        try:
            reports.append(bound_report(th, c, rc))
        except MissingConstant as err:
            reports.append({"theorem": th.value, "value": None, "error": str(err)})
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "bounds.json", reports)
    print(json.dumps(reports, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_cost(args) -> int:
    try:
        inputs = CostInputs(K=args.K, p=args.p, q_smash=args.q_smash, R=args.R, T_fb=args.T_fb,
                            T_fedavg=args.T_fedavg, W=args.W, beta_frac=args.beta_frac)
    except ValueError as err:
        raise ConfigError([str(err)]) from None
    methods = METHODS if args.method == "all" else (args.method,)
    print(json.dumps({m: cost_model(inputs, m) for m in methods}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK_FAILED


def _print_summary(summary: dict, prefix: str = "") -> None:
    agg = summary["aggregate"]["final_loss"]
    label = f"[{prefix}] " if prefix else ""
    verdict = "ok" if checks_passed(summary) else "CHECK FAILED"
    print(f"{label}{summary['variant']} seeds={len(summary['seeds'])} "
          f"final_loss={agg['mean']:.6g} +/- {agg['stderr']:.2g} checks={verdict}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare,
            "bounds": cmd_bounds, "cost": cmd_cost, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except ConfigError as err:
        for line in err.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StepsizeError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
