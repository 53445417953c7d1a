"""Cross-validated choice of the second-stage threshold pair.

Candidate pairs come from the geometric grid ``mu = n^{-(l-1)/(2(L-1))}`` with
``1 <= l2 < l1 <= L`` (element index ``l1``, group index ``l2``), so that every
pair has ``mu_e < mu_g``. Each pair is scored by k-fold held-out prediction
error using the absolute group rule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DsparseError
from .model import check_rng
from .solver import TwoStageConfig, two_stage_fit
from .threshold import ThresholdParams


@dataclass(frozen=True)
class GridPair:
    l1: int
    l2: int
    mu_e: float
    mu_g: float

    @property
    def params(self):
        return ThresholdParams.absolute(self.mu_e, self.mu_g)


@dataclass(frozen=True)
class ThresholdGrid:
    n: int
    L: int
    pairs: tuple


def _grid_value(n, level, L):
    return n ** (-(level - 1) / (2 * (L - 1)))


def build_grid(n, L=10):
    """All ``L(L-1)/2`` pairs, ordered by ``l1`` then ``l2``."""
    if L < 2:
        raise ValueError("L must be at least 2")
    if n < 2:
        raise ValueError("n must be at least 2")
    pairs = tuple(GridPair(l1, l2, _grid_value(n, l1, L), _grid_value(n, l2, L))
                  for l1 in range(2, L + 1) for l2 in range(1, l1))
    return ThresholdGrid(n, L, pairs)


@dataclass(frozen=True)
class CvPlan:
    """Fold labels ``0..k-1`` for ``n`` observations; fold sizes differ by at most one."""

    k: int
    labels: np.ndarray
    seed: object = None

    @classmethod
    def make(cls, n, k=5, seed=None):
        if k < 2:
            raise ValueError("need at least two folds")
        if n < k:
            raise ValueError(f"n={n} is smaller than the fold count k={k}")
        labels = np.arange(n) % k
        check_rng(seed).shuffle(labels)
        labels.setflags(write=False)
        return cls(k, labels, seed)

    def split(self, fold):
        return np.flatnonzero(self.labels != fold), np.flatnonzero(self.labels == fold)


@dataclass
class CvResult:
    best: GridPair
    scores: list  # one dict per pair: l1, l2, mu_e, mu_g, mean_mspe, n_failed_folds

    def save(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / "cv_scores.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["l1", "l2", "mu_e", "mu_g", "mean_mspe", "n_failed_folds"])
            for row in self.scores:
                writer.writerow([row["l1"], row["l2"], repr(row["mu_e"]), repr(row["mu_g"]),
                                 repr(row["mean_mspe"]), row["n_failed_folds"]])
        return path


def _fold_initial(initial, sub, scale):
    # A callable is refit on the training fold; an array is carried over to the
    # fold's rescaled columns.
    if callable(initial):
        return _values(initial(sub))
    return _values(initial) / scale


def _values(obj):
    return np.asarray(getattr(obj, "beta_hat", getattr(obj, "values", obj)), dtype=float)


def cv_select(instance, initial, grid, k=5, seed=None, max_iters=None, step=1.0):
    """Pick the pair with the smallest mean held-out squared prediction error.

    ``initial`` is either a fixed starting vector or a callable mapping a
    training-fold instance to a starting estimate (re-run per fold). Ties go to
    the smaller ``mu_e`` and then the smaller ``mu_g``; any failed fold scores
    the pair as ``+inf``.
    """
    plan = CvPlan.make(instance.n, k, seed)
    n_pairs = len(grid.pairs)
    sums = np.zeros(n_pairs)
    failed = np.zeros(n_pairs, dtype=int)
    for fold in range(plan.k):
        train, valid = plan.split(fold)
        sub, scale = instance.subset(train)
        try:
            start = _fold_initial(initial, sub, scale)
        except (DsparseError, FloatingPointError, np.linalg.LinAlgError):
            failed += 1
            continue
        Xv, Yv = instance.X[valid], instance.Y[valid]
        for idx, pair in enumerate(grid.pairs):
            cfg = TwoStageConfig(pair.params, max_iters=max_iters, step=step)
            try:
                fit = two_stage_fit(sub, start, cfg)
            except (DsparseError, FloatingPointError, np.linalg.LinAlgError):
                failed[idx] += 1
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                err = float(np.mean((Yv - Xv @ (fit.beta_hat * scale)) ** 2))
            if not math.isfinite(err):
                failed[idx] += 1
            else:
                sums[idx] += err
    means = np.where(failed > 0, np.inf, sums / plan.k)
    scores = [{"l1": p.l1, "l2": p.l2, "mu_e": p.mu_e, "mu_g": p.mu_g,
               "mean_mspe": float(means[i]), "n_failed_folds": int(failed[i])}
              for i, p in enumerate(grid.pairs)]
    order = sorted(range(n_pairs),
                   key=lambda i: (means[i], grid.pairs[i].mu_e, grid.pairs[i].mu_g))
    return CvResult(grid.pairs[order[0]], scores)


def refit_full(instance, initial, pair, max_iters=None, step=1.0, reference=None):
    """Second stage on all rows with the chosen absolute thresholds."""
    params = pair.params if isinstance(pair, GridPair) else ThresholdParams.absolute(*pair)
    return two_stage_fit(instance, _values(initial),
                         TwoStageConfig(params, max_iters=max_iters, step=step),
                         reference=reference)
