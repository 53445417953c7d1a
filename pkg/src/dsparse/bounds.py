"""Closed-form constants, signal thresholds and support-recovery lower bounds.

Every function here is a deterministic scalar evaluator. Normal tail
probabilities go through ``scipy.special.ndtr``, which is accurate to a few
ulps over the whole real line, so Gaussian tails far below 1e-300 are still
represented with full relative precision.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .exceptions import InvalidRegime

SQRT_5_6 = math.sqrt(5.0 / 6.0)


def normal_cdf(x):
    return ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _check_kappa_delta(kappa, delta):
    if not 0 < delta < kappa < 1:
        raise ValueError(f"need 0 < delta < kappa < 1, got kappa={kappa}, delta={delta}")


def delta_rate(s, s0, m, d):
    """Estimation complexity (1/s0) log(e m / s) + log(e d / s0), natural logs."""
    if not (1 <= s <= m and 1 <= s0 <= d):
        raise ValueError("need 1 <= s <= m and 1 <= s0 <= d")
    return (1.0 + math.log(m / s)) / s0 + 1.0 + math.log(d / s0)


@dataclass(frozen=True)
class Constants:
    C_lambda: float
    A: float
    rho: float


def constants(kappa, delta):
    """Threshold constant, support inflation factor and contraction factor."""
    _check_kappa_delta(kappa, delta)
    C_lambda = math.sqrt(40.0) * (kappa + (math.sqrt(3.0) - 1.0) * delta) / (kappa - delta)
    A = 8.0 * delta ** 2 / (kappa - delta) ** 2
    return Constants(C_lambda, A, contraction_factor(delta))


def contraction_factor(delta):
    return SQRT_5_6 + (1.0 - SQRT_5_6) * delta


def lambda_inf_theory(sigma, n, s, s0, m, d, kappa, delta):
    """Terminal first-stage threshold C_lambda * sigma * sqrt(Delta(s, s0) / n)."""
    return constants(kappa, delta).C_lambda * sigma * math.sqrt(delta_rate(s, s0, m, d) / n)


def mu_rate(n, m, d, s, s0, sigma):
    """The radical sqrt((sigma^2/n) {log(e m)/s0 + log(e s d)})."""
    return sigma * math.sqrt(((1.0 + math.log(m)) / s0 + 1.0 + math.log(s * d)) / n)


def mu_constant(kappa, delta):
    _check_kappa_delta(kappa, delta)
    C_lambda = constants(kappa, delta).C_lambda
    return max(kappa * C_lambda / delta,
               math.sqrt(40.0 + 120.0 * delta ** 2 / (1.0 - delta) ** 2))


def theoretical_mu(n, m, d, s, s0, sigma, kappa, delta):
    """Fixed second-stage threshold: constant(kappa, delta) times :func:`mu_rate`."""
    return mu_constant(kappa, delta) * mu_rate(n, m, d, s, s0, sigma)


def betamin_factor(delta):
    return 2.0 + math.sqrt(6.0) * delta / (1.0 - delta)


def betamin_thresholds(delta, mu, s0):
    """Minimum element magnitude and minimum group norm needed for recovery."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    elem = betamin_factor(delta) * mu
    return elem, elem * math.sqrt(s0)


def _psi_general(total, k, signal, sigma):
    """``(total-k) Phi(-t/sigma) + k Phi(-(signal-t)/sigma)`` and its ``t``.

    ``signal`` is the mean shift of the sufficient statistic, ``a sqrt(n)`` for a
    single coordinate or ``a ||sum_i X_(ij)||`` for a whole group.
    """
    t = signal / 2.0 + sigma ** 2 / signal * math.log((total - k) / k)
    psi = (total - k) * normal_cdf(-t / sigma) + k * normal_cdf(-(signal - t) / sigma)
    return t, float(psi)


def psi_t(d, s0, a, sigma, n):
    """Return ``(t, psi)`` for ``d`` candidates of which ``s0`` carry signal ``a``."""
    if not 0 < s0 < d:
        raise InvalidRegime(f"need 0 < s0 < d, got s0={s0}, d={d}")
    if not (a > 0 and sigma > 0 and n > 0):
        raise ValueError("a, sigma and n must be positive")
    return _psi_general(d, s0, a * math.sqrt(n), sigma)


def bayes_selector(z, d, s0, signal, sigma):
    """Posterior probability that a coordinate is active given statistic ``z``.

    Prior weight ``s0/d`` on mean ``signal``, ``1 - s0/d`` on mean zero, Gaussian
    noise with scale ``sigma``. Thresholding at 1/2 gives the Bayes selector.
    """
    z = np.asarray(z, dtype=float)
    # log of phi_0(z) / phi_signal(z)
    log_lr = (signal ** 2 - 2.0 * signal * z) / (2.0 * sigma ** 2)
    return 1.0 / (1.0 + (d - s0) / s0 * np.exp(log_lr))


@dataclass(frozen=True)
class LowerBound:
    value: float
    bayes_part: float
    penalty: float

    @property
    def vacuous(self):
        return self.value <= 0


def element_risk_lb(m, d, s, s0, s0_prime, a, sigma, n):
    """Element-wise Hamming risk lower bound over signals with min magnitude ``a``.

    Returned raw; a nonpositive value (``vacuous``) carries no information.
    """
    if not 0 < s0_prime < s0:
        raise InvalidRegime("need 0 < s0' < s0")
    if not (s < m and s0 < d):
        raise InvalidRegime("need s < m and s0 < d")
    _, psi = psi_t(d, s0, a, sigma, n)
    bayes = s * s0_prime / (2.0 * s0) * psi
    penalty = 2.0 * s * (s0 + s0_prime) * math.exp(
        -3.0 * s * (s0 - s0_prime) ** 2 / (2.0 * (s0 + 2.0 * s0_prime)))
    return LowerBound(bayes - penalty, bayes, penalty)


def group_risk_lb(m, d, s, s0, s_prime, a, sigma, col_sum_norm):
    """Group-wise Hamming risk lower bound.

    ``col_sum_norm`` is ``||sum_{i < s0} X_(ij)||_2`` for the design at hand; it
    equals ``sqrt(n * s0)`` for orthogonal columns of norm ``sqrt(n)``.
    """
    if not 0 < s_prime < s:
        raise InvalidRegime("need 0 < s' < s")
    if not (s < m and s0 < d):
        raise InvalidRegime("need s < m and s0 < d")
    if not (a > 0 and sigma > 0 and col_sum_norm > 0):
        raise ValueError("a, sigma and col_sum_norm must be positive")
    _, psi = _psi_general(m, s, a * col_sum_norm, sigma)
    bayes = s_prime / (2.0 * s) * psi
    penalty = 2.0 * (s + s_prime) * math.exp(
        -3.0 * (s - s_prime) ** 2 / (2.0 * (s + 2.0 * s_prime)))
    return LowerBound(bayes - penalty, bayes, penalty)


def element_lb_preset(m, d, s, s0, sigma, n):
    """Element bound at s0' = s0/2 and a^2 = sigma^2 log(d s - s s0) / (5 n)."""
    a = math.sqrt(sigma ** 2 * math.log(d * s - s * s0) / (5.0 * n))
    return element_risk_lb(m, d, s, s0, s0 / 2.0, a, sigma, n)


def group_lb_preset(m, d, s, s0, sigma, n, delta):
    """Group bound at s' = s/2, group strength b^2 = sigma^2 log(m-s) / (5(1+delta)n).

    Uses the DSRIP worst case ``col_sum_norm = sqrt((1+delta) n s0)`` for the
    summed support columns and element magnitude ``a = b / sqrt(s0)``.
    """
    b = math.sqrt(sigma ** 2 * math.log(m - s) / (5.0 * (1.0 + delta) * n))
    a = b / math.sqrt(s0)
    col_sum_norm = math.sqrt((1.0 + delta) * n * s0)
    return group_risk_lb(m, d, s, s0, s / 2.0, a, sigma, col_sum_norm)


def separation_thresholds(n, m, d, s, s0, sigma, delta):
    """Necessary (squared) and sufficient (rate-only, C = 1) signal thresholds."""
    in_regime = s < m / 2 and s0 < d / 2
    log_ms = math.log(m - s) if m > s else float("nan")
    log_sd = math.log(s * d - s * s0) if d > s0 else float("nan")
    elem_nec2 = sigma ** 2 / (10.0 * n) * (log_ms / (s0 * (1.0 + delta)) + log_sd)
    group_nec2 = sigma ** 2 / (10.0 * n) * (log_ms / (1.0 + delta) + s0 / 20.0 * log_sd)
    elem_suf = sigma * math.sqrt((math.log(m) / s0 + math.log(s * d)) / n)
    group_suf = sigma * math.sqrt((math.log(m) + s0 * math.log(s * d)) / n)
    return {
        "elem_necessary_sq": elem_nec2,
        "group_necessary_sq": group_nec2,
        "elem_sufficient_rate": elem_suf,
        "group_sufficient_rate": group_suf,
        "rate_only": True,
        "in_regime": in_regime,
    }


def psi_monotonicity_check(d, a, sigma, n, r_grid):
    """Check that psi(d, r)/r decreases in r and the density identity behind it.

    The identity is ``((d-r)/r) phi(-t/sigma) = phi(-(a sqrt(n) - t)/sigma)``; the
    analytic derivative of ``psi(d, r)/r`` is ``-(d/r^2) Phi(-t/sigma)``.
    """
    r_grid = np.asarray(sorted(r_grid), dtype=float)
    if np.any((r_grid <= 0) | (r_grid >= d)):
        raise InvalidRegime("r_grid must lie strictly inside (0, d)")
    shift = a * math.sqrt(n)
    ratios, rel_err, deriv = [], [], []
    for r in r_grid:
        t, psi = _psi_general(d, r, shift, sigma)
        ratios.append(psi / r)
        lhs = (d - r) / r * normal_pdf(-t / sigma)
        rhs = normal_pdf(-(shift - t) / sigma)
        rel_err.append(abs(lhs - rhs) / abs(rhs))
        deriv.append(-d / r ** 2 * normal_cdf(-t / sigma))
    ratios = np.array(ratios)
    rel_err = np.array(rel_err)
    return {
        "r": r_grid.tolist(),
        "ratio": ratios.tolist(),
        "strictly_decreasing": bool(np.all(np.diff(ratios) < 0)),
        "identity_max_rel_error": float(rel_err.max()),
        "identity_holds": bool(rel_err.max() <= 1e-12),
        "derivative": [float(v) for v in deriv],
    }


@dataclass(frozen=True)
class BoundReport:
    inputs: dict
    Delta: float
    C_lambda: float
    A: float
    rho: float
    lambda_inf: float
    mu: float
    betamin_elem: float
    betamin_group: float
    separation: dict
    element_lb: dict | None
    group_lb: dict | None

    def as_dict(self):
        return asdict(self)


def _lb_dict(lb):
    return {"value": lb.value, "bayes_part": lb.bayes_part,
            "penalty": lb.penalty, "vacuous": lb.vacuous}


def evaluate_bounds(n, m, d, s, s0, sigma, kappa=0.9, delta=0.3):
    """Evaluate every constant and bound for one configuration."""
    c = constants(kappa, delta)
    mu = theoretical_mu(n, m, d, s, s0, sigma, kappa, delta)
    elem_min, group_min = betamin_thresholds(delta, mu, s0)
    elem_lb = group_lb = None
    if s < m and 2 <= s0 < d and d * s > s * s0:
        elem_lb = _lb_dict(element_lb_preset(m, d, s, s0, sigma, n))
    if 2 <= s < m and s0 < d:
        group_lb = _lb_dict(group_lb_preset(m, d, s, s0, sigma, n, delta))
    return BoundReport(
        inputs=dict(n=n, m=m, d=d, s=s, s0=s0, sigma=sigma, kappa=kappa, delta=delta),
        Delta=delta_rate(s, s0, m, d),
        C_lambda=c.C_lambda, A=c.A, rho=c.rho,
        lambda_inf=lambda_inf_theory(sigma, n, s, s0, m, d, kappa, delta),
        mu=mu, betamin_elem=elem_min, betamin_group=group_min,
        separation=separation_thresholds(n, m, d, s, s0, sigma, delta),
        element_lb=elem_lb, group_lb=group_lb,
    )
