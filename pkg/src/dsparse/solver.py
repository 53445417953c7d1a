"""One-stage and two-stage double sparse iterative hard thresholding.

Both stages iterate ``beta <- T(beta + (gamma/n) X^T (Y - X beta))`` with the
element-then-group operator ``T``. Stage one decays its threshold geometrically
from a data-driven start down to a floor; stage two holds a fixed threshold and
contracts towards the least-squares fit on the selected support (the oracle
estimator once that support is the true one).
"""
from __future__ import annotations

import csv
import json
import math
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bounds
from .exceptions import InvalidSchedule, NonFiniteIterate, SingularGram
from .model import Coefficients
from .threshold import ThresholdParams, apply_double

GRAM_COND_MAX = 1e12


class _GramCache:
    """Lazily computed, cached Gram columns ``X^T X[:, k] / n`` of one design.

    Iterates are sparse, so ``X^T X beta / n`` only needs the Gram columns on the
    current support. Columns are kept once computed, which makes repeated fits on
    the same design (threshold grids, cross-validation, fixed-design Monte Carlo)
    cheap.
    """

    def __init__(self, shape):
        self.n, self.p = shape
        self._slot = np.full(self.p, -1, dtype=np.intp)
        self._cols = np.empty((self.p, 0))
        self._used = 0

    def _ensure(self, X, idx):
        missing = idx[self._slot[idx] < 0]
        if missing.size == 0:
            return
        need = self._used + missing.size
        if need > self._cols.shape[1]:
            grown = np.empty((self.p, max(need, 2 * self._cols.shape[1], 32)))
            grown[:, :self._used] = self._cols[:, :self._used]
            self._cols = grown
        self._cols[:, self._used:need] = X.T @ X[:, missing] / self.n
        self._slot[missing] = np.arange(self._used, need)
        self._used = need

    def gradient(self, X, beta, xty):
        """``X^T (Y - X beta) / n`` given ``xty = X^T Y / n``."""
        idx = np.flatnonzero(beta)
        if idx.size == 0:
            return xty.copy()
        if idx.size > 2 * self.n:
            return xty - X.T @ (X @ beta) / self.n
        self._ensure(X, idx)
        return xty - self._cols[:, self._slot[idx]] @ beta[idx]


# Keyed by id(X); a finalizer drops the entry when the design is collected.
_CACHES = {}


def _cache_for(X):
    key = id(X)
    entry = _CACHES.get(key)
    if entry is not None and entry[0]() is X:
        return entry[1]
    cache = _GramCache(X.shape)
    _CACHES[key] = (weakref.ref(X), cache)
    weakref.finalize(X, _CACHES.pop, key, None)
    return cache


class _Gradient:
    def __init__(self, instance):
        self.X = instance.X
        self.cache = _cache_for(self.X)
        self.xty = self.X.T @ instance.Y / instance.n

    def __call__(self, beta):
        return self.cache.gradient(self.X, beta, self.xty)


@dataclass(frozen=True)
class DsihtConfig:
    """Settings of the first stage.

    ``lambda_inf`` may be given directly. Otherwise it is
    ``lambda_inf_constant * sigma * sqrt(Delta(s, s0) / n)``, where the constant
    defaults to the theory value ``C_lambda(kappa, delta)`` and ``s`` must be set.
    """

    s0: int
    sigma: float
    kappa: float = 0.9
    delta: float = 0.3
    lambda_inf: float | None = None
    s: int | None = None
    lambda_inf_constant: float | None = None
    step: float = 1.0

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.lambda_inf is not None and not self.lambda_inf > 0:
            raise ValueError("lambda_inf must be positive")

    def resolve_lambda_inf(self, n, m, d):
        if self.lambda_inf is not None:
            return self.lambda_inf
        if self.s is None:
            raise ValueError("either lambda_inf or the group budget s is required")
        const = self.lambda_inf_constant
        if const is None:
            const = bounds.constants(self.kappa, self.delta).C_lambda
        return const * self.sigma * math.sqrt(bounds.delta_rate(self.s, self.s0, m, d) / n)


@dataclass(frozen=True)
class TwoStageConfig:
    """Fixed threshold and stopping rule of the second stage.

    ``max_iters=None`` means ``ceil(log(n^2) / log(1/sqrt(5/6)))``; iterations also
    stop once successive iterates differ by less than ``tol * (1 + ||beta||)``.
    """

    mu: ThresholdParams
    max_iters: int | None = None
    tol: float = 1e-10
    step: float = 1.0

    def __post_init__(self):
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol >= 0:
            raise ValueError("tol must be nonnegative")

    def resolve_max_iters(self, n):
        if self.max_iters is not None:
            return self.max_iters
        return default_max_iters(n)


def default_max_iters(n):
    return max(1, math.ceil(math.log(n ** 2) / -math.log(bounds.SQRT_5_6)))


@dataclass
class TraceRecord:
    t: int
    threshold: float
    n_groups: int
    n_elems: int
    dist_to_reference: float | None = None


@dataclass
class FitResult:
    beta_hat: np.ndarray
    structure: object
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    config: dict = field(default_factory=dict)

    @property
    def coefficients(self):
        return Coefficients(self.beta_hat, self.structure)

    def to_dict(self):
        idx = np.flatnonzero(self.beta_hat)
        i, j = self.structure.to_double(idx)
        return {
            "m": self.structure.m,
            "d": self.structure.d,
            "beta_hat": [[int(a), int(b), float(v)]
                         for a, b, v in zip(i, j, self.beta_hat[idx])],
            "iterations": self.iterations,
            "converged": self.converged,
            "config": self.config,
        }

    def save(self, outdir):
        """Write ``fit.json`` and ``trace.csv`` into ``outdir``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "fit.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(outdir / "trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "threshold", "n_groups", "n_elems", "dist_to_reference"])
            for rec in self.trace:
                dist = "" if rec.dist_to_reference is None else repr(rec.dist_to_reference)
                writer.writerow([rec.t, repr(rec.threshold), rec.n_groups, rec.n_elems, dist])
        return outdir


def lambda_schedule(lambda0, kappa, lambda_inf):
    """Thresholds ``max(kappa^t lambda0, lambda_inf)`` for ``t = 0..T``.

    ``T = ceil(log(lambda_inf / lambda0) / log(kappa))``. Returns the list of
    thresholds (length ``T + 1``) and ``T``.
    """
    if not 0 < kappa < 1:
        raise InvalidSchedule("kappa must lie in (0, 1)")
    if not lambda_inf > 0:
        raise InvalidSchedule("lambda_inf must be positive")
    if not lambda0 >= lambda_inf:
        raise InvalidSchedule(f"lambda0={lambda0} is below lambda_inf={lambda_inf}")
    T = math.ceil(math.log(lambda_inf / lambda0) / math.log(kappa))
    lams = [lambda0]
    for _ in range(T):
        lams.append(max(kappa * lams[-1], lambda_inf))
    return lams, T


def initial_lambda(X, Y, sigma, kappa):
    """Starting threshold (||X^T Y / n||_inf + sqrt(10 sigma^2 log p / n)) / (sqrt(2) kappa)."""
    n, p = X.shape
    corr = np.max(np.abs(X.T @ Y)) / n
    return (corr + math.sqrt(10.0 * sigma ** 2 * math.log(p) / n)) / (math.sqrt(2.0) * kappa)


def _record(t, lam, beta, d, reference):
    nz = beta != 0
    dist = None if reference is None else float(np.linalg.norm(beta - reference))
    return TraceRecord(t, float(lam), int(np.any(nz.reshape(-1, d), axis=1).sum()),
                       int(nz.sum()), dist)


def _check_finite(beta, t):
    if not np.all(np.isfinite(beta)):
        raise NonFiniteIterate(f"iterate {t} contains NaN or Inf")


def dsiht_fit(instance, config, reference=None):
    """First-stage DSIHT with a geometrically decaying threshold.

    Runs one gradient-and-threshold update per scheduled threshold and returns
    the final iterate. When the starting threshold already lies below the floor
    the schedule is empty and the zero vector is returned.
    """
    X, Y = instance.X, instance.Y
    n = instance.n
    structure = instance.structure
    d = structure.d
    lam_inf = config.resolve_lambda_inf(n, structure.m, d)
    lam0 = initial_lambda(X, Y, config.sigma, config.kappa)
    if not lam0 > 0:
        raise InvalidSchedule("initial threshold is zero (zero response and sigma = 0)")
    echo = {"stage": "dsiht", "lambda0": lam0, "lambda_inf": lam_inf, **asdict(config)}
    beta = np.zeros(structure.p)
    if lam0 < lam_inf:
        return FitResult(beta, structure, [], 0, True, echo)
    lams, _ = lambda_schedule(lam0, config.kappa, lam_inf)
    grad = _Gradient(instance)
    trace = []
    for t, lam in enumerate(lams):
        beta = apply_double(beta + config.step * grad(beta), d,
                            ThresholdParams.scaled(lam, config.s0))
        _check_finite(beta, t)
        trace.append(_record(t + 1, lam, beta, d, reference))
    return FitResult(beta, structure, trace, len(lams), True, echo)


def two_stage_fit(instance, initial, config, reference=None):
    """Fixed-threshold refinement starting from any initial estimate."""
    structure = instance.structure
    d = structure.d
    beta = np.array(getattr(initial, "values", initial), dtype=float)
    if beta.shape != (structure.p,):
        raise ValueError("initial estimate has the wrong length")
    reference = None if reference is None else np.asarray(getattr(reference, "values", reference))
    max_iters = config.resolve_max_iters(instance.n)
    grad = _Gradient(instance)
    trace = []
    converged = False
    t = 0
    while t < max_iters:
        new = apply_double(beta + config.step * grad(beta), d, config.mu)
        _check_finite(new, t)
        t += 1
        trace.append(_record(t, config.mu.lambda_elem, new, d, reference))
        change = np.linalg.norm(new - beta)
        beta = new
        if change <= config.tol * (1.0 + np.linalg.norm(beta)):
            converged = True
            break
    echo = {"stage": "two_stage", "mu": config.mu.as_dict(), "max_iters": max_iters,
            "tol": config.tol, "step": config.step}
    return FitResult(beta, structure, trace, t, converged, echo)


def oracle_ols(instance, support):
    """Least squares on ``support`` (boolean mask or index array), zero elsewhere."""
    p = instance.structure.p
    support = np.asarray(support)
    idx = np.flatnonzero(support) if support.dtype == bool else np.unique(support)
    beta = np.zeros(p)
    if idx.size == 0:
        return beta
    if idx.size > instance.n:
        raise SingularGram(f"support size {idx.size} exceeds n={instance.n}")
    XS = instance.X[:, idx]
    U, sv, Vt = np.linalg.svd(XS, full_matrices=False)
    if sv[-1] == 0 or (sv[0] / sv[-1]) ** 2 > GRAM_COND_MAX:
        raise SingularGram("Gram matrix on the support is numerically singular")
    beta[idx] = Vt.T @ ((U.T @ instance.Y) / sv)
    return beta


def theoretical_mu(n, m, d, s, s0, sigma, kappa=0.9, delta=0.3):
    return bounds.theoretical_mu(n, m, d, s, s0, sigma, kappa, delta)
