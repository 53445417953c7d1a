"""Support recovery and estimation metrics, plus the asymptotic-normality check."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .exceptions import StructureMismatch, SupportMismatch
from .model import Coefficients

METRIC_COLUMNS = ["seed", "k", "method", "hamming_elem", "hamming_group", "mcc_elem",
                  "mcc_group", "l2_rate", "exact", "runtime_ms"]


def _pair(beta_hat, beta_true):
    if isinstance(beta_hat, Coefficients) and isinstance(beta_true, Coefficients):
        if beta_hat.structure != beta_true.structure:
            raise StructureMismatch(
                f"structures differ: {beta_hat.structure} vs {beta_true.structure}")
        return beta_hat, beta_true
    structure = getattr(beta_hat, "structure", None) or getattr(beta_true, "structure", None)
    if structure is None:
        raise StructureMismatch("at least one argument must carry a group structure")
    try:
        return Coefficients(getattr(beta_hat, "values", beta_hat), structure), \
            Coefficients(getattr(beta_true, "values", beta_true), structure)
    except ValueError as exc:
        raise StructureMismatch(str(exc)) from exc


def hamming_losses(beta_hat, beta_true):
    """Symmetric-difference sizes of the element and group supports."""
    hat, true = _pair(beta_hat, beta_true)
    elem = int(np.count_nonzero(hat.support() != true.support()))
    group = int(np.count_nonzero(hat.group_support() != true.group_support()))
    return elem, group


def _mcc_from_masks(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = float(np.sum(pred & truth))
    tn = float(np.sum(~pred & ~truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc(beta_hat, beta_true, level="elem"):
    """Matthews correlation of the support indicators; 0 when a marginal is degenerate."""
    hat, true = _pair(beta_hat, beta_true)
    if level == "elem":
        return _mcc_from_masks(hat.support(), true.support())
    if level == "group":
        return _mcc_from_masks(hat.group_support(), true.group_support())
    raise ValueError(f"level must be 'elem' or 'group', got {level!r}")


@dataclass
class RecoveryReport:
    hamming_elem: int
    hamming_group: int
    mcc_elem: float
    mcc_group: float
    l2_error_rate: float
    sign_consistent: bool
    exact_recovery: bool

    def as_dict(self):
        return asdict(self)


def l2_error_rate(beta_hat, beta_true):
    b = np.asarray(getattr(beta_true, "values", beta_true), dtype=float)
    h = np.asarray(getattr(beta_hat, "values", beta_hat), dtype=float)
    norm = np.linalg.norm(b)
    if norm == 0:
        return 0.0 if not np.any(h) else math.inf
    return float(np.linalg.norm(h - b) / norm)


def recovery_report(beta_hat, beta_true):
    hat, true = _pair(beta_hat, beta_true)
    elem, group = hamming_losses(hat, true)
    return RecoveryReport(
        hamming_elem=elem,
        hamming_group=group,
        mcc_elem=mcc(hat, true, "elem"),
        mcc_group=mcc(hat, true, "group"),
        l2_error_rate=l2_error_rate(hat, true),
        sign_consistent=bool(np.array_equal(np.sign(hat.values), np.sign(true.values))),
        exact_recovery=elem == 0,
    )


def metrics_row(report, seed, k, method, runtime_ms):
    return {"seed": seed, "k": k, "method": method,
            "hamming_elem": report.hamming_elem, "hamming_group": report.hamming_group,
            "mcc_elem": report.mcc_elem, "mcc_group": report.mcc_group,
            "l2_rate": report.l2_error_rate, "exact": int(report.exact_recovery),
            "runtime_ms": runtime_ms}


def append_metrics(path, rows):
    """Append rows to ``metrics.csv``, writing the header if the file is new."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in METRIC_COLUMNS})
    return path


def coordinate_contrast(structure, support, pairs):
    """Contrast row over ``support`` summing the listed ``(i, j)`` coordinates."""
    support = np.flatnonzero(np.asarray(support))
    pos = {int(k): r for r, k in enumerate(support)}
    row = np.zeros(support.size)
    for i, j in pairs:
        flat = int(structure.to_flat(i, j))
        if flat not in pos:
            raise SupportMismatch(f"coordinate ({i}, {j}) is not in the support")
        row[pos[flat]] = 1.0
    return row


@dataclass
class NormalityReport:
    n_reps: int
    empirical_cov: np.ndarray
    theoretical_cov: np.ndarray
    frobenius_rel_error: float
    variance_ratio: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    statistics: np.ndarray

    def as_dict(self):
        out = {}
        for key, val in asdict(self).items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def normality_diagnostic(fits, beta_true, X, support, sigma, contrast, c_xi=1.0):
    """Compare ``sqrt(n) A (beta_hat_S - beta_S)`` across replications with its limit.

    The limit is ``N(0, c_xi sigma^2 A (X_S^T X_S / n)^{-1} A^T)``. ``contrast`` has
    one row per statistic and one column per support coordinate (in flat order).
    Each statistic is compared with its own normal marginal via Kolmogorov-Smirnov.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    idx = np.flatnonzero(np.asarray(support))
    A = np.atleast_2d(np.asarray(contrast, dtype=float))
    if A.shape[1] != idx.size:
        raise ValueError(f"contrast has {A.shape[1]} columns for a support of size {idx.size}")
    if len(fits) < 2:
        raise ValueError("need at least two replications")
    beta_s = np.asarray(getattr(beta_true, "values", beta_true), dtype=float)[idx]
    used = np.any(A != 0, axis=0)
    stats_rows = []
    for fit in fits:
        vals = np.asarray(getattr(fit, "values", getattr(fit, "beta_hat", fit)), dtype=float)
        est = vals[idx]
        if np.any(est[used] == 0):
            raise SupportMismatch("a fit omits a support coordinate used by the contrast")
        stats_rows.append(math.sqrt(n) * A @ (est - beta_s))
    Z = np.array(stats_rows)
    XS = X[:, idx]
    theory = c_xi * sigma ** 2 * A @ np.linalg.solve(XS.T @ XS / n, A.T)
    emp = np.atleast_2d(np.cov(Z, rowvar=False))
    sd = np.sqrt(np.diag(theory))
    ks = [stats.kstest(Z[:, r] / sd[r], "norm") for r in range(A.shape[0])]
    return NormalityReport(
        n_reps=len(fits),
        empirical_cov=emp,
        theoretical_cov=theory,
        frobenius_rel_error=float(np.linalg.norm(emp - theory) / np.linalg.norm(theory)),
        variance_ratio=np.diag(emp) / np.diag(theory),
        skewness=stats.skew(Z, axis=0),
        excess_kurtosis=stats.kurtosis(Z, axis=0),
        ks_statistic=np.array([r.statistic for r in ks]),
        ks_pvalue=np.array([r.pvalue for r in ks]),
        statistics=Z,
    )
