"""Group structure, double sparse coefficients and synthetic data generation.

Indices are 0-based throughout. Coordinate ``(i, j)`` is the ``i``-th variable of
group ``j`` and lives at flat position ``j * d + i``; groups are contiguous
blocks of equal size ``d``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DimensionMismatch, InvalidBudget, ZeroColumn

STANDARDIZE_RTOL = 1e-10

# Simulation 2 sparsity cases, (s, s0) with s * s0 = 48.
CASES = {"A": (12, 4), "B": (6, 8), "C": (4, 12)}


def check_rng(seed):
    """Turn ``seed`` into a ``numpy.random.Generator`` backed by Philox.

    ``None`` gives fresh entropy, an int seeds a counter-based Philox stream and
    an existing ``Generator`` is passed through so callers can chain draws.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class GroupStructure:
    """``m`` contiguous, non-overlapping groups of ``d`` coordinates each."""

    m: int
    d: int

    def __post_init__(self):
        if int(self.m) != self.m or int(self.d) != self.d or self.m < 1 or self.d < 1:
            raise ValueError(f"m and d must be positive integers, got m={self.m}, d={self.d}")

    @property
    def p(self):
        return self.m * self.d

    def to_flat(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 0) | (i >= self.d) | (j < 0) | (j >= self.m)):
            raise IndexError("double index out of range")
        return j * self.d + i

    def to_double(self, k):
        k = np.asarray(k)
        if np.any((k < 0) | (k >= self.p)):
            raise IndexError("flat index out of range")
        return k % self.d, k // self.d

    def group_slice(self, j):
        return slice(j * self.d, (j + 1) * self.d)

    def group_of(self, k):
        return np.asarray(k) // self.d

    def as_blocks(self, v):
        """View a length-``p`` vector as an ``(m, d)`` array, one row per group."""
        v = np.asarray(v)
        if v.shape[-1] != self.p:
            raise DimensionMismatch(f"expected length {self.p}, got {v.shape[-1]}")
        return v.reshape(v.shape[:-1] + (self.m, self.d))


@dataclass(frozen=True)
class SparsityBudget:
    s: int
    s0: int

    def validate(self, structure):
        if not (1 <= self.s <= structure.m):
            raise InvalidBudget(f"need 1 <= s <= m, got s={self.s}, m={structure.m}")
        if not (1 <= self.s0 <= structure.d):
            raise InvalidBudget(f"need 1 <= s0 <= d, got s0={self.s0}, d={structure.d}")
        return self


@dataclass(frozen=True)
class Coefficients:
    """A length-``p`` coefficient vector with group-aware support queries."""

    values: np.ndarray
    structure: GroupStructure

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.structure.p,):
            raise DimensionMismatch(
                f"coefficients must have shape ({self.structure.p},), got {values.shape}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def blocks(self):
        return self.structure.as_blocks(self.values)

    def support(self):
        """Boolean mask of nonzero coordinates."""
        return self.values != 0

    def group_support(self):
        """Boolean mask over the ``m`` groups with at least one nonzero entry."""
        return np.any(self.blocks != 0, axis=1)

    def support_pairs(self):
        i, j = self.structure.to_double(np.flatnonzero(self.values))
        return list(zip(i.tolist(), j.tolist()))

    def group_norms(self):
        return np.linalg.norm(self.blocks, axis=1)

    def is_double_sparse(self, s, s0):
        return (self.group_support().sum() <= s
                and self.support().sum() <= s * s0)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Design, response and noise level of one regression problem.

    The design must already be column-standardized to norm ``sqrt(n)``. Arrays are
    stored read-only; a writeable input is copied first, while an already
    read-only design (for example ``other.X``) is shared, so instances built on
    the same design reuse its cached Gram columns.
    """

    X: np.ndarray
    Y: np.ndarray
    sigma: float
    structure: GroupStructure
    beta_true: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.structure.p:
            raise DimensionMismatch(f"X must be n x {self.structure.p}, got {X.shape}")
        if Y.shape != (X.shape[0],):
            raise DimensionMismatch(f"Y must have length {X.shape[0]}, got {Y.shape}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not is_standardized(X):
            raise ValueError("design columns must have Euclidean norm sqrt(n)")
        if self.beta_true is not None:
            beta = np.asarray(self.beta_true, dtype=float)
            if beta.shape != (self.structure.p,):
                raise DimensionMismatch("beta_true has the wrong length")
            object.__setattr__(self, "beta_true", beta)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))

    @property
    def n(self):
        return self.X.shape[0]

    def subset(self, rows):
        """Instance restricted to ``rows``, re-standardized on those rows.

        Also returns the column scale factors; a coefficient vector fitted on the
        subset maps back to the original columns as ``beta * scale``.
        """
        Xs, scale = standardize_columns(self.X[rows])
        sub = ProblemInstance(Xs, self.Y[rows], self.sigma, self.structure,
                              None, dict(self.meta))
        return sub, scale


def _frozen(a):
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


def is_standardized(X, rtol=STANDARDIZE_RTOL):
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=0)
    return bool(np.all(np.abs(norms - math.sqrt(n)) <= rtol * math.sqrt(n)))


def standardize_columns(X):
    """Scale every column of ``X`` to Euclidean norm ``sqrt(n)``.

    Returns the standardized matrix and the per-column scale factors applied.
    Columns already within relative tolerance 1e-10 are left untouched, which
    makes the operation idempotent.
    """
    X = np.array(X, dtype=float)
    n = X.shape[0]
    norms = np.linalg.norm(X, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroColumn(int(zero[0]))
    target = math.sqrt(n)
    scale = target / norms
    scale[np.abs(norms - target) <= STANDARDIZE_RTOL * target] = 1.0
    return X * scale, scale


def generate_gaussian_design(n, structure, seed=None):
    """Draw an ``n x p`` i.i.d. N(0, 1) design and standardize its columns."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = check_rng(seed)
    X = rng.standard_normal((n, structure.p))
    return standardize_columns(X)[0]


def signal_scale(structure, s, s0, sigma, n):
    """Radical sqrt((sigma^2/n) (log(m/s)/s0 + log(d/s0))) multiplying ``k``."""
    m, d = structure.m, structure.d
    return math.sqrt(sigma ** 2 / n * (math.log(m / s) / s0 + math.log(d / s0)))


def _draw_support(structure, s, s0, rng):
    groups = np.sort(rng.choice(structure.m, size=s, replace=False))
    idx = [j * structure.d + np.sort(rng.choice(structure.d, size=s0, replace=False))
           for j in groups]
    return np.concatenate(idx)


def generate_signal_uniform(structure, s, s0, k, sigma, n, seed=None):
    """Double sparse signal with entries drawn from Uniform(a, 2a).

    Exactly ``s`` groups and ``s0`` entries per group are active, and
    ``a = k * signal_scale(...)``. Entries are positive (no random signs).
    """
    SparsityBudget(s, s0).validate(structure)
    if not k > 0:
        raise InvalidBudget(f"signal multiplier k must be positive, got {k}")
    rng = check_rng(seed)
    a = k * signal_scale(structure, s, s0, sigma, n)
    idx = _draw_support(structure, s, s0, rng)
    beta = np.zeros(structure.p)
    beta[idx] = rng.uniform(a, 2 * a, size=idx.size)
    return Coefficients(beta, structure)


def generate_case_signal(structure, case, a, seed=None):
    """Equal-magnitude signal ``beta_ij = a`` for sparsity case A, B or C."""
    if case not in CASES:
        raise InvalidBudget(f"unknown case {case!r}; expected one of {sorted(CASES)}")
    if not a > 0:
        raise InvalidBudget("a must be positive")
    s, s0 = CASES[case]
    SparsityBudget(s, s0).validate(structure)
    rng = check_rng(seed)
    beta = np.zeros(structure.p)
    beta[_draw_support(structure, s, s0, rng)] = a
    return Coefficients(beta, structure)


def synthesize_response(X, beta, sigma, noise="gaussian", seed=None):
    """Return ``Y = X beta + sigma * xi`` with unit-variance noise ``xi``."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(getattr(beta, "values", beta), dtype=float)
    if X.ndim != 2 or beta.shape != (X.shape[1],):
        raise DimensionMismatch(f"X {X.shape} and beta {beta.shape} do not agree")
    rng = check_rng(seed)
    n = X.shape[0]
    if noise == "gaussian":
        xi = rng.standard_normal(n)
    elif noise == "rademacher":
        xi = rng.choice([-1.0, 1.0], size=n)
    else:
        raise ValueError(f"unknown noise law {noise!r}")
    return X @ beta + sigma * xi


def make_instance(n, structure, beta, sigma, noise="gaussian", seed=None, meta=None):
    """Draw a design and response around a given ``beta`` using one stream."""
    rng = check_rng(seed)
    X = generate_gaussian_design(n, structure, rng)
    beta = np.asarray(getattr(beta, "values", beta), dtype=float)
    Y = synthesize_response(X, beta, sigma, noise, rng)
    return ProblemInstance(X, Y, sigma, structure, beta, dict(meta or {}))


def save_instance(instance, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    np.savetxt(outdir / "design.csv", instance.X, delimiter=",", fmt="%.17g")
    np.savetxt(outdir / "response.csv", instance.Y, delimiter=",", fmt="%.17g")
    if instance.beta_true is not None:
        np.savetxt(outdir / "beta_true.csv", instance.beta_true, delimiter=",", fmt="%.17g")
    meta = {"n": instance.n, "m": instance.structure.m, "d": instance.structure.d,
            "sigma": instance.sigma}
    meta.update(instance.meta)
    (outdir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return outdir


def load_instance(indir):
    indir = Path(indir)
    meta = json.loads((indir / "meta.json").read_text())
    structure = GroupStructure(int(meta["m"]), int(meta["d"]))
    X = np.loadtxt(indir / "design.csv", delimiter=",", ndmin=2)
    Y = np.loadtxt(indir / "response.csv", delimiter=",", ndmin=1)
    beta_path = indir / "beta_true.csv"
    beta = np.loadtxt(beta_path, delimiter=",", ndmin=1) if beta_path.exists() else None
    extra = {k: v for k, v in meta.items() if k not in ("n", "m", "d", "sigma")}
    return ProblemInstance(X, Y, float(meta["sigma"]), structure, beta, extra)
