"""Monte-Carlo experiment driver: signal sweeps, sparsity cases and the normality study.

Every replication is an independent task with seed ``root + counter``. Tasks can
run on a process pool; rows are sorted by ``(case, grid, seed, method)`` before
they are written, so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bounds
from .exceptions import DsparseError
from .metrics import coordinate_contrast, normality_diagnostic, recovery_report
from .model import (CASES, Coefficients, GroupStructure, ProblemInstance, check_rng,
                    generate_case_signal, generate_gaussian_design,
                    generate_signal_uniform, make_instance, signal_scale,
                    synthesize_response)
from .solver import DsihtConfig, TwoStageConfig, dsiht_fit, oracle_ols, two_stage_fit
from .threshold import ThresholdParams
from .tuning import build_grid, cv_select, refit_full

EXPERIMENTS = ("signal_sweep", "sparsity_cases", "normality")
METHODS = ("dsiht", "ts_dsiht_true", "ts_dsiht_cv", "iht_element", "oracle")
RESULT_COLUMNS = ["experiment", "case", "grid", "signal", "group_signal", "seed", "method",
                  "status", "hamming_elem", "hamming_group", "mcc_elem", "mcc_group",
                  "l2_rate", "exact", "sign_consistent", "iterations", "runtime_ms",
                  "stat_0", "stat_1"]
SUMMARY_METRICS = ["hamming_elem", "hamming_group", "mcc_elem", "mcc_group", "l2_rate",
                   "exact", "runtime_ms"]
THREADS_ENV = "DSPARSE_THREADS"


@dataclass
class MethodSettings:
    """Tuning constants shared by the fitting methods.

    ``lambda_inf_constant`` and ``mu_constant`` multiply the rates
    ``sigma sqrt(Delta / n)`` and ``sqrt(sigma^2/n (log(em)/s0 + log(esd)))``.
    Setting either to ``None`` switches to the worst-case theory constant.
    """

    kappa: float = 0.9
    delta: float = 0.3
    lambda_inf_constant: float | None = 1.5
    mu_constant: float | None = math.sqrt(2.0)
    step_stage1: float = 0.8
    step_stage2: float = 0.8
    cv_folds: int = 5
    grid_L: int = 10


@dataclass
class ExperimentConfig:
    experiment: str = "signal_sweep"
    n: int = 300
    m: int = 50
    d: int = 40
    s: int = 5
    s0: int = 5
    sigma: float = 1.0
    grid: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    replications: int = 100
    methods: list = field(default_factory=lambda: ["dsiht", "ts_dsiht_true", "oracle"])
    seed: int = 0
    noise: str = "gaussian"
    cases: list = field(default_factory=lambda: ["A", "B", "C"])
    settings: MethodSettings = field(default_factory=MethodSettings)

    def __post_init__(self):
        if isinstance(self.settings, dict):
            self.settings = MethodSettings(**self.settings)
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.grid:
            raise ValueError("grid must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        bad_cases = set(self.cases) - set(CASES)
        if bad_cases:
            raise ValueError(f"unknown cases {sorted(bad_cases)}")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return asdict(self)

    @property
    def structure(self):
        return GroupStructure(self.m, self.d)


# ----------------------------------------------------------------- methods

def stage1_config(s, s0, sigma, settings):
    return DsihtConfig(s0=s0, sigma=sigma, kappa=settings.kappa, delta=settings.delta, s=s,
                       lambda_inf_constant=settings.lambda_inf_constant,
                       step=settings.step_stage1)


def stage2_mu(n, m, d, s, s0, sigma, settings):
    if settings.mu_constant is None:
        return bounds.theoretical_mu(n, m, d, s, s0, sigma, settings.kappa, settings.delta)
    return settings.mu_constant * bounds.mu_rate(n, m, d, s, s0, sigma)


def _stage1(instance, s, s0, settings):
    return dsiht_fit(instance, stage1_config(s, s0, instance.sigma, settings))


def _cv_initializer(s, s0, settings):
    return lambda sub: _stage1(sub, s, s0, settings)


def fit_method(method, instance, s, s0, settings, seed=None, cv_pair=None):
    """Fit one method and return ``(beta_hat, iterations)``.

    ``s`` and ``s0`` are the true budgets (used by the stage-one floor and the
    known-parameter threshold). ``cv_pair`` skips cross-validation and refits
    with a fixed absolute pair.
    """
    st = instance.structure
    if method == "oracle":
        return oracle_ols(instance, instance.beta_true != 0), 0
    if method == "iht_element":
        flat = ProblemInstance(instance.X, instance.Y, instance.sigma,
                               GroupStructure(st.p, 1), instance.beta_true)
        fit = _stage1(flat, s * s0, 1, settings)
        return fit.beta_hat, fit.iterations
    first = _stage1(instance, s, s0, settings)
    if method == "dsiht":
        return first.beta_hat, first.iterations
    if method == "ts_dsiht_true":
        mu = stage2_mu(instance.n, st.m, st.d, s, s0, instance.sigma, settings)
        fit = two_stage_fit(instance, first.beta_hat,
                            TwoStageConfig(ThresholdParams.scaled(mu, s0),
                                           step=settings.step_stage2))
        return fit.beta_hat, first.iterations + fit.iterations
    if method == "ts_dsiht_cv":
        if cv_pair is None:
            cv_pair = cv_select(instance, _cv_initializer(s, s0, settings),
                                build_grid(instance.n, settings.grid_L), settings.cv_folds,
                                seed, step=settings.step_stage2).best
        fit = refit_full(instance, first.beta_hat, cv_pair, step=settings.step_stage2)
        return fit.beta_hat, first.iterations + fit.iterations
    raise ValueError(f"unknown method {method!r}")


def _row(base, method, instance, s, s0, settings, seed, contrast=None, cv_pair=None):
    row = dict(base, method=method, seed=seed)
    start = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            beta_hat, iters = fit_method(method, instance, s, s0, settings, seed, cv_pair)
        status = "ok"
    except (DsparseError, FloatingPointError, np.linalg.LinAlgError) as exc:
        beta_hat, iters, status = None, 0, f"error:{type(exc).__name__}"
    row["runtime_ms"] = (time.perf_counter() - start) * 1e3
    row["status"] = status
    row["iterations"] = iters
    if beta_hat is None:
        for key in ("hamming_elem", "hamming_group", "mcc_elem", "mcc_group", "l2_rate",
                    "exact", "sign_consistent", "stat_0", "stat_1"):
            row[key] = math.nan
        return row, None
    st = instance.structure
    rep = recovery_report(Coefficients(beta_hat, st), Coefficients(instance.beta_true, st))
    if not np.isfinite(rep.l2_error_rate):
        row["status"] = "diverged"
    row.update(hamming_elem=rep.hamming_elem, hamming_group=rep.hamming_group,
               mcc_elem=rep.mcc_elem, mcc_group=rep.mcc_group, l2_rate=rep.l2_error_rate,
               exact=int(rep.exact_recovery), sign_consistent=int(rep.sign_consistent))
    if contrast is not None:
        idx, A = contrast
        stat = math.sqrt(instance.n) * A @ (beta_hat[idx] - instance.beta_true[idx])
        row["stat_0"], row["stat_1"] = float(stat[0]), float(stat[1])
    else:
        row["stat_0"] = row["stat_1"] = math.nan
    return row, beta_hat


# ------------------------------------------------------------------- tasks

def _sweep_task(args):
    cfg, k, seed = args
    rng = check_rng(seed)
    st = cfg.structure
    beta = generate_signal_uniform(st, cfg.s, cfg.s0, k, cfg.sigma, cfg.n, rng)
    inst = make_instance(cfg.n, st, beta, cfg.sigma, cfg.noise, rng)
    a = k * signal_scale(st, cfg.s, cfg.s0, cfg.sigma, cfg.n)
    base = {"experiment": "signal_sweep", "case": "", "grid": k, "signal": a,
            "group_signal": a * math.sqrt(cfg.s0)}
    return [_row(base, meth, inst, cfg.s, cfg.s0, cfg.settings, seed)[0]
            for meth in cfg.methods]


def _case_task(args):
    cfg, case, a, seed = args
    rng = check_rng(seed)
    st = cfg.structure
    s, s0 = CASES[case]
    beta = generate_case_signal(st, case, a, rng)
    inst = make_instance(cfg.n, st, beta, cfg.sigma, cfg.noise, rng)
    base = {"experiment": "sparsity_cases", "case": case, "grid": a, "signal": a,
            "group_signal": a * math.sqrt(s0)}
    return [_row(base, meth, inst, s, s0, cfg.settings, seed)[0] for meth in cfg.methods]


def resolve_threads(threads=None):
    env = os.environ.get(THREADS_ENV)
    if env:
        threads = int(env)
    threads = 1 if threads is None else int(threads)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    return threads


def _run_tasks(fn, tasks, threads):
    threads = resolve_threads(threads)
    if threads == 1 or len(tasks) <= 1:
        return [row for task in tasks for row in fn(task)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, len(tasks) // (4 * threads))
        return [row for rows in pool.map(fn, tasks, chunksize=chunk) for row in rows]


def _sort_rows(rows):
    return sorted(rows, key=lambda r: (r["experiment"], r["case"], r["grid"], r["seed"],
                                       r["method"]))


@dataclass
class ResultTable:
    rows: list
    config: ExperimentConfig | None = None
    reports: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def select(self, **match):
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def run_signal_sweep(config, threads=None):
    tasks = [(config, k, config.seed + gi * config.replications + r)
             for gi, k in enumerate(config.grid) for r in range(config.replications)]
    return ResultTable(_sort_rows(_run_tasks(_sweep_task, tasks, threads)), config)


def run_sparsity_cases(config, threads=None):
    per_case = len(config.grid) * config.replications
    tasks = [(config, case, a, config.seed + ci * per_case + gi * config.replications + r)
             for ci, case in enumerate(config.cases)
             for gi, a in enumerate(config.grid) for r in range(config.replications)]
    return ResultTable(_sort_rows(_run_tasks(_case_task, tasks, threads)), config)


def normality_signal(structure, s, s0, k, sigma, n, seed):
    """Fixed signal on the leading ``s0`` coordinates of the leading ``s`` groups.

    Values are Uniform(a, 2a). A deterministic support keeps coordinate (0, 0)
    and group 2 active, which the two tracked contrasts need.
    """
    if s < 3:
        raise ValueError("the normality study tracks group 2 and needs s >= 3")
    rng = check_rng(seed)
    a = k * signal_scale(structure, s, s0, sigma, n)
    beta = np.zeros(structure.p)
    for j in range(s):
        beta[structure.group_slice(j)][:s0] = rng.uniform(a, 2 * a, size=s0)
    return beta


def normality_contrast(structure, beta):
    """Support indices and the two contrast rows: coordinate (0, 0) and the sum over group 2."""
    support = beta != 0
    s0 = int(np.count_nonzero(beta[structure.group_slice(2)]))
    A = np.vstack([coordinate_contrast(structure, support, [(0, 0)]),
                   coordinate_contrast(structure, support, [(i, 2) for i in range(s0)])])
    return np.flatnonzero(support), A


def _frozen_design(n, structure, seed):
    X = generate_gaussian_design(n, structure, seed)
    X.setflags(write=False)
    return X


def _normality_task(args):
    cfg, gi, n, k, seed_base, cv_pair = args
    st = cfg.structure
    X = _frozen_design(n, st, seed_base)
    beta = normality_signal(st, cfg.s, cfg.s0, k, cfg.sigma, n, seed_base + 1)
    contrast = normality_contrast(st, beta)
    rows = []
    fits = {}
    for r in range(cfg.replications):
        seed = seed_base + 2 + r
        Y = synthesize_response(X, beta, cfg.sigma, cfg.noise, seed)
        inst = ProblemInstance(X, Y, cfg.sigma, st, beta)
        base = {"experiment": "normality", "case": "", "grid": n,
                "signal": k * signal_scale(st, cfg.s, cfg.s0, cfg.sigma, n),
                "group_signal": math.nan}
        for meth in cfg.methods:
            row, bh = _row(base, meth, inst, cfg.s, cfg.s0, cfg.settings, seed, contrast,
                           cv_pair)
            rows.append(row)
            fits.setdefault(meth, []).append(bh)
    return rows, (n, X, beta, contrast, fits)


def _normality_reports(n, X, beta, contrast, fits, sigma, c_xi=1.0):
    idx, A = contrast
    needed = idx[np.any(A != 0, axis=0)]
    out = {}
    for meth, fs in fits.items():
        usable = [f for f in fs if f is not None and np.all(f[needed] != 0)]
        entry = {"n_reps": len(fs), "n_covering": len(usable)}
        if len(usable) >= 2:
            rep = normality_diagnostic(usable, beta, X, beta != 0, sigma, A, c_xi)
            d = rep.as_dict()
            d.pop("statistics")
            d["histograms"] = [np.histogram(rep.statistics[:, c], bins=20)[0].tolist()
                               for c in range(A.shape[0])]
            entry.update(d)
        out[meth] = entry
    return out


def run_normality(config, threads=None, k=2.7, cv_pilot=True):
    """Fixed design and signal per ``n`` (the grid); noise redrawn per replication.

    With ``ts_dsiht_cv`` among the methods and ``cv_pilot`` set, the threshold
    pair is cross-validated once per ``n`` on a pilot response and then held
    fixed, so every replication uses the same estimator.
    """
    stride = config.replications + 3
    tasks = []
    for gi, n in enumerate(config.grid):
        n = int(n)
        seed_base = config.seed + gi * stride
        pair = None
        if "ts_dsiht_cv" in config.methods and cv_pilot:
            st = config.structure
            X = _frozen_design(n, st, seed_base)
            beta = normality_signal(st, config.s, config.s0, k, config.sigma, n, seed_base + 1)
            Y = synthesize_response(X, beta, config.sigma, config.noise,
                                    seed_base + 2 + config.replications)
            pilot = ProblemInstance(X, Y, config.sigma, st, beta)
            pair = cv_select(pilot, _cv_initializer(config.s, config.s0, config.settings),
                             build_grid(n, config.settings.grid_L), config.settings.cv_folds,
                             seed_base, step=config.settings.step_stage2).best
        tasks.append((config, gi, n, k, seed_base, pair))
    threads = resolve_threads(threads)
    if threads == 1 or len(tasks) <= 1:
        outs = [_normality_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(_normality_task, tasks))
    rows, reports = [], {}
    for task, (task_rows, (n, X, beta, contrast, fits)) in zip(tasks, outs):
        rows.extend(task_rows)
        reports[str(n)] = _normality_reports(n, X, beta, contrast, fits, config.sigma)
        pair = task[5]
        if pair is not None:
            reports[str(n)]["cv_pair"] = {"mu_e": pair.mu_e, "mu_g": pair.mu_g}
    return ResultTable(_sort_rows(rows), config, reports)


def run_experiment(config, threads=None):
    runner = {"signal_sweep": run_signal_sweep, "sparsity_cases": run_sparsity_cases,
              "normality": run_normality}[config.experiment]
    return runner(config, threads)


# ------------------------------------------------------------------ output

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def summarize(rows):
    """Mean and sample sd of each metric per (experiment, case, grid, method)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["experiment"], r["case"], r["grid"], r["method"]), []).append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        entry = dict(zip(("experiment", "case", "grid", "method"), key))
        entry["count"] = len(rs)
        entry["group_signal"] = rs[0]["group_signal"]
        entry["signal"] = rs[0]["signal"]
        for metric in SUMMARY_METRICS:
            vals = np.array([r[metric] for r in rs], dtype=float)
            vals = vals[np.isfinite(vals)]
            entry[f"{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
            entry[f"{metric}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
        out.append(entry)
    return out


def summary_columns():
    cols = ["experiment", "case", "grid", "method", "count", "signal", "group_signal"]
    for metric in SUMMARY_METRICS:
        cols += [f"{metric}_mean", f"{metric}_sd"]
    return cols


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])


def _plot(summary, metric, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dsparse"
    series = {}
    for e in summary:
        label = e["method"] if not e["case"] else f"{e['method']} case {e['case']}"
        series.setdefault(label, []).append((e["grid"], e[f"{metric}_mean"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(series):
        pts = sorted(series[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("grid value")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_report(table, outdir):
    """Write results.csv, summary.csv, config.json and one SVG per summary metric."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(outdir / "results.csv", RESULT_COLUMNS, table.rows)
    summary = summarize(table.rows)
    _write_csv(outdir / "summary.csv", summary_columns(), summary)
    cfg = table.config.to_dict() if table.config is not None else {}
    (outdir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    if table.reports:
        (outdir / "normality.json").write_text(json.dumps(table.reports, indent=2,
                                                          sort_keys=True))
    written = [outdir / "results.csv", outdir / "summary.csv", outdir / "config.json"]
    if summary:
        for metric in ("mcc_elem", "mcc_group", "hamming_elem", "hamming_group", "l2_rate",
                       "exact"):
            path = outdir / f"{metric}.svg"
            _plot(summary, metric, path)
            written.append(path)
    return written
