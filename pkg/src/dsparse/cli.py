"""Command-line entry point ``dsparse``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds
from .dsrip import dsrip_delta_exact, dsrip_delta_mc, row_norm_diagnostic
from .exceptions import DsparseError, TooLarge
from .harness import (ExperimentConfig, MethodSettings, emit_report,
                      run_experiment, stage1_config, stage2_mu)
from .metrics import append_metrics, metrics_row, recovery_report
from .model import (Coefficients, GroupStructure, generate_signal_uniform, load_instance,
                    make_instance, save_instance)
from .solver import TwoStageConfig, dsiht_fit, two_stage_fit
from .threshold import ThresholdParams
from .tuning import build_grid, cv_select, refit_full

log = logging.getLogger("dsparse")


def _read_json(path):
    return json.loads(Path(path).read_text()) if path else {}


def cmd_simulate(args):
    data = _read_json(args.config)
    if args.experiment:
        data["experiment"] = args.experiment
    config = ExperimentConfig.from_dict(data)
    start = time.perf_counter()
    table = run_experiment(config, args.threads)
    files = emit_report(table, args.out)
    log.info("%d rows in %.1fs", len(table), time.perf_counter() - start)
    for f in files:
        print(f)


def _budgets(instance, args):
    s = args.s if args.s is not None else instance.meta.get("s")
    s0 = args.s0 if args.s0 is not None else instance.meta.get("s0")
    if s is None or s0 is None:
        raise SystemExit("sparsity budgets unknown: pass --s and --s0 or use a generated instance")
    return int(s), int(s0)


def cmd_fit(args):
    instance = load_instance(args.instance)
    s, s0 = _budgets(instance, args)
    settings = MethodSettings(**_read_json(args.settings))
    out = Path(args.out or args.instance)
    start = time.perf_counter()
    first = dsiht_fit(instance, stage1_config(s, s0, instance.sigma, settings))
    st = instance.structure
    if args.method == "dsiht":
        fit = first
    elif args.method == "ts_dsiht_true":
        mu = stage2_mu(instance.n, st.m, st.d, s, s0, instance.sigma, settings)
        fit = two_stage_fit(instance, first.beta_hat,
                            TwoStageConfig(ThresholdParams.scaled(mu, s0),
                                           step=settings.step_stage2),
                            reference=instance.beta_true)
    else:
        result = cv_select(instance, lambda sub: dsiht_fit(
            sub, stage1_config(s, s0, sub.sigma, settings)),
            build_grid(instance.n, settings.grid_L), settings.cv_folds, args.seed,
            step=settings.step_stage2)
        result.save(out)
        fit = refit_full(instance, first.beta_hat, result.best, step=settings.step_stage2,
                         reference=instance.beta_true)
    runtime = (time.perf_counter() - start) * 1e3
    fit.save(out)
    if instance.beta_true is not None:
        st = instance.structure
        report = recovery_report(Coefficients(fit.beta_hat, st),
                                 Coefficients(instance.beta_true, st))
        append_metrics(out / "metrics.csv",
                       [metrics_row(report, args.seed, instance.meta.get("k", ""),
                                    args.method, runtime)])
    print(out / "fit.json")


def cmd_bounds(args):
    cfg = _read_json(args.config)
    keys = ("n", "m", "d", "s", "s0", "sigma", "kappa", "delta")
    kwargs = {k: cfg[k] for k in keys if k in cfg}
    report = bounds.evaluate_bounds(**kwargs).as_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bounds.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(out / "bounds.json")


def cmd_dsrip(args):
    instance = load_instance(args.instance)
    st = instance.structure
    try:
        report = dsrip_delta_exact(instance.X, st, args.as_budget, args.bs0)
    except TooLarge as exc:
        log.warning("%s", exc)
        report = dsrip_delta_mc(instance.X, st, args.as_budget, args.bs0, args.trials,
                                args.seed)
    payload = report.as_dict()
    if instance.beta_true is not None and np.any(instance.beta_true):
        payload["row_norm"] = row_norm_diagnostic(instance.X, instance.beta_true != 0)
    out = Path(args.out or args.instance)
    out.mkdir(parents=True, exist_ok=True)
    (out / "isometry.json").write_text(json.dumps(payload, indent=2))
    print(out / "isometry.json")


def cmd_generate(args):
    st = GroupStructure(args.m, args.d)
    beta = generate_signal_uniform(st, args.s, args.s0, args.k, args.sigma, args.n, args.seed)
    meta = {"s": args.s, "s0": args.s0, "k": args.k, "seed": args.seed, "noise": args.noise}
    inst = make_instance(args.n, st, beta, args.sigma, args.noise, args.seed + 1, meta)
    print(save_instance(inst, args.out))


def build_parser():
    parser = argparse.ArgumentParser(prog="dsparse",
                                     description="Double sparse IHT experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte-Carlo experiment")
    p.add_argument("--experiment", choices=["signal_sweep", "sparsity_cases", "normality"])
    p.add_argument("--config", help="experiment JSON (see docs/config.md)")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes; DSPARSE_THREADS overrides")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one method to a saved instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", choices=["dsiht", "ts_dsiht_true", "ts_dsiht_cv"],
                   default="ts_dsiht_cv")
    p.add_argument("--s", type=int)
    p.add_argument("--s0", type=int)
    p.add_argument("--seed", type=int, default=0, help="fold-assignment seed")
    p.add_argument("--settings", help="JSON with method settings overrides")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bounds", help="evaluate theory constants and lower bounds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("dsrip-check", help="isometry constant of a saved design")
    p.add_argument("--instance", required=True)
    p.add_argument("--as", dest="as_budget", type=int, required=True)
    p.add_argument("--bs0", type=int, required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dsrip)

    p = sub.add_parser("generate", help="draw a synthetic instance")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--s0", type=int, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--k", type=float, default=3.9, help="signal multiplier")
    p.add_argument("--noise", choices=["gaussian", "rademacher"], default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DsparseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
