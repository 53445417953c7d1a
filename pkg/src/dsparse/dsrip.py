"""Restricted isometry checks over double sparse supports.

A design satisfies the double sparse isometry with constant ``delta`` on budget
``(as, bs0)`` when every support of at most ``as`` groups with at most ``bs0``
entries per group has ``(1/n) X_S^T X_S`` eigenvalues inside ``[1-delta, 1+delta]``.
By eigenvalue interlacing the extremes are attained on maximal supports, so
only those are enumerated.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import bounds
from .exceptions import DimensionMismatch, TooLarge
from .model import check_rng

ENUMERATION_CAP = 10 ** 7
_BATCH = 4096


@dataclass
class IsometryReport:
    delta_exact: float | None
    delta_lower_mc: float | None
    c_upper: float
    c_lower: float
    supports_checked: int
    exhaustive: bool
    as_budget: int
    bs0_budget: int

    @property
    def delta(self):
        return self.delta_exact if self.delta_exact is not None else self.delta_lower_mc

    def riesz_consistent(self, tol=1e-12):
        """DSRIP(delta) implies the Riesz bounds ``1 - delta <= c_lower <= c_upper <= 1 + delta``."""
        d = self.delta
        return (self.c_lower >= 1 - d - tol and self.c_upper <= 1 + d + tol
                and self.c_lower <= self.c_upper)

    def as_dict(self):
        out = asdict(self)
        out["riesz_consistent"] = self.riesz_consistent()
        return out

    def save(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / "isometry.json"
        path.write_text(json.dumps(self.as_dict(), indent=2))
        return path


def _clamp(structure, as_budget, bs0_budget):
    if as_budget < 1 or bs0_budget < 1:
        raise ValueError("budgets must be positive")
    return min(as_budget, structure.m), min(bs0_budget, structure.d)


def enumeration_size(structure, as_budget, bs0_budget):
    """Cap-check count ``C(m, as) * C(as d, as bs0)`` (an upper bound on the work)."""
    g, e = _clamp(structure, as_budget, bs0_budget)
    return math.comb(structure.m, g) * math.comb(g * structure.d, g * e)


def _gram(X, structure):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != structure.p:
        raise DimensionMismatch(f"X must have {structure.p} columns")
    return X.T @ X / X.shape[0]


def _extremes(G, supports):
    sub = G[supports[:, :, None], supports[:, None, :]]
    eig = np.linalg.eigvalsh(sub)
    return eig[:, 0], eig[:, -1]


def _maximal_supports(structure, g, e):
    within = np.array(list(itertools.combinations(range(structure.d), e)))
    for groups in itertools.combinations(range(structure.m), g):
        offsets = np.array(groups) * structure.d
        # every way of picking e entries in each chosen group
        for choice in itertools.product(range(len(within)), repeat=g):
            yield np.concatenate([within[c] + off for c, off in zip(choice, offsets)])


def dsrip_delta_exact(X, structure, as_budget, bs0_budget, cap=ENUMERATION_CAP):
    """Smallest certified ``delta`` by enumerating every maximal support."""
    size = enumeration_size(structure, as_budget, bs0_budget)
    if size > cap:
        raise TooLarge(f"{size} candidate supports exceed the cap {cap}; "
                       "use dsrip_delta_mc for a Monte-Carlo lower estimate")
    g, e = _clamp(structure, as_budget, bs0_budget)
    G = _gram(X, structure)
    lo, hi, count = math.inf, -math.inf, 0
    stream = _maximal_supports(structure, g, e)
    while True:
        batch = list(itertools.islice(stream, _BATCH))
        if not batch:
            break
        mins, maxs = _extremes(G, np.array(batch))
        lo, hi = min(lo, float(mins.min())), max(hi, float(maxs.max()))
        count += len(batch)
    delta = max(1.0 - lo, hi - 1.0)
    return IsometryReport(delta, None, hi, lo, count, True, g, e)


def _random_support(structure, g, e, rng):
    groups = rng.choice(structure.m, size=g, replace=False)
    return np.concatenate([j * structure.d + rng.choice(structure.d, size=e, replace=False)
                           for j in groups])


def dsrip_delta_mc(X, structure, as_budget, bs0_budget, trials=1000, seed=None):
    """Largest deviation seen on random maximal supports: a lower estimate of ``delta``.

    Supports are drawn sequentially from one stream, so with a fixed seed the
    first ``t`` draws do not depend on ``trials`` and the estimate can only grow.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    g, e = _clamp(structure, as_budget, bs0_budget)
    G = _gram(X, structure)
    rng = check_rng(seed)
    supports = np.array([_random_support(structure, g, e, rng) for _ in range(trials)])
    lo, hi = np.inf, -np.inf
    for start in range(0, trials, _BATCH):
        mins, maxs = _extremes(G, supports[start:start + _BATCH])
        lo, hi = min(lo, float(mins.min())), max(hi, float(maxs.max()))
    return IsometryReport(None, max(1.0 - lo, hi - 1.0), hi, lo, trials, False, g, e)


def dsrc_sample_size(m, d, s, s0, kappa, CL_prime, CU_prime, C_abs=1.0, c_abs=1.0,
                     delta_target=None):
    """Sample size at which a sub-Gaussian design meets the double sparse Riesz condition.

    ``n >= ((C + sqrt(2/c)) / min(1, CL'/2))^2 * {(2A+1) s log(em/s) + (4A+1) s s0 log(ed/s0)}``
    with ``A = 8 delta^2 / (kappa - delta)^2`` and, unless ``delta_target`` is given,
    ``delta = CU' / (CU' + CL')``.
    """
    if min(CL_prime, CU_prime, C_abs, c_abs) <= 0:
        raise ValueError("constants must be positive")
    delta = CU_prime / (CU_prime + CL_prime) if delta_target is None else delta_target
    if not 0 < delta < kappa < 1:
        raise ValueError(f"need 0 < delta < kappa < 1, got delta={delta}, kappa={kappa}")
    A = bounds.constants(kappa, delta).A
    lead = ((C_abs + math.sqrt(2.0 / c_abs)) / min(1.0, CL_prime / 2.0)) ** 2
    bracket = ((2 * A + 1) * s * math.log(math.e * m / s)
               + (4 * A + 1) * s * s0 * math.log(math.e * d / s0))
    return {"n_required": lead * bracket, "delta": delta, "A": A, "lead": lead,
            "bracket": bracket, "C_U": CU_prime + CL_prime / 2, "C_L": CL_prime / 2}


def toeplitz_riesz(rho):
    """``(CL', CU')`` for an exponential-decay Toeplitz covariance with parameter ``rho``."""
    if not 0 <= rho < 1:
        raise ValueError("rho must lie in [0, 1)")
    return (1 - rho) / (1 + rho), (1 + rho) / (1 - rho)


def row_norm_diagnostic(X, support):
    """Largest row norm ``B`` of ``X`` on the support columns, and ``B^3 / sqrt(n)``."""
    X = np.asarray(X, dtype=float)
    support = np.asarray(support)
    idx = np.flatnonzero(support) if support.dtype == bool else np.unique(support)
    if idx.size == 0:
        raise ValueError("support must be nonempty")
    B = float(np.max(np.linalg.norm(X[:, idx], axis=1)))
    return {"B": B, "B3_over_sqrt_n": B ** 3 / math.sqrt(X.shape[0])}
