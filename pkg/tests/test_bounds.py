import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsparse import bounds
from dsparse.exceptions import InvalidRegime

from oracles import bayes_risk_per_coordinate, phi_quad

# frozen from independent 50-digit evaluations
DELTA_41 = 3.73995856027864
C_LAMBDA_09_03 = 11.8017808953884
MU_THEORY_41 = 5.51563346937593
MU_RATE_41 = 0.155785343423075
LAMBDA_INF_41 = 1.31771143654911
T_8_2 = 2.71972245773362
PSI_8_2 = 0.0421922519587225
RHO_03 = 0.939009650422694
ELEM_NEC2_41 = 0.00191680878565503
GROUP_NEC2_41 = 0.00140646613622961


def test_delta_rate():
    assert bounds.delta_rate(5, 5, 50, 40) == pytest.approx(DELTA_41, rel=1e-13)
    assert bounds.delta_rate(50, 40, 50, 40) == pytest.approx(1 / 40 + 1, rel=1e-15)
    assert bounds.delta_rate(1, 5, 50, 40) == pytest.approx(
        math.log(50 * math.e) / 5 + math.log(8 * math.e), rel=1e-15)
    with pytest.raises(ValueError):
        bounds.delta_rate(0, 1, 3, 3)


def test_constants():
    c = bounds.constants(0.9, 0.3)
    assert c.A == pytest.approx(2.0, rel=1e-14)
    assert c.C_lambda == pytest.approx(C_LAMBDA_09_03, rel=1e-13)
    assert c.rho == pytest.approx(RHO_03, rel=1e-14)
    assert bounds.contraction_factor(0.0) == pytest.approx(math.sqrt(5 / 6), rel=1e-15)
    near = bounds.constants(0.9, 0.9 - 1e-9)
    assert near.A > 1e15 and near.C_lambda > 1e8
    with pytest.raises(ValueError):
        bounds.constants(0.3, 0.3)


def test_theory_values_in_default_setting():
    assert bounds.theoretical_mu(300, 50, 40, 5, 5, 1.0, 0.9, 0.3) == pytest.approx(
        MU_THEORY_41, rel=1e-13)
    assert bounds.mu_rate(300, 50, 40, 5, 5, 1.0) == pytest.approx(MU_RATE_41, rel=1e-13)
    assert bounds.lambda_inf_theory(1.0, 300, 5, 5, 50, 40, 0.9, 0.3) == pytest.approx(
        LAMBDA_INF_41, rel=1e-13)


def test_mu_limits_and_homogeneity():
    small = bounds.mu_constant(0.9, 1e-6)
    assert small == pytest.approx(0.9 * bounds.constants(0.9, 1e-6).C_lambda / 1e-6)
    a = bounds.theoretical_mu(300, 50, 40, 5, 5, 1.0, 0.9, 0.3)
    b = bounds.theoretical_mu(300, 50, 40, 5, 5, 2.5, 0.9, 0.3)
    assert b == pytest.approx(2.5 * a, rel=1e-14)


def test_betamin():
    elem, group = bounds.betamin_thresholds(0.3, 0.1, 4)
    assert elem == pytest.approx(0.304978131833565, rel=1e-13)
    assert group / elem == pytest.approx(2.0, rel=1e-15)
    assert bounds.betamin_thresholds(0.0, 0.2, 9) == pytest.approx((0.4, 1.2))


def test_psi_against_quadrature():
    t, psi = bounds.psi_t(8, 2, 0.5, 1.0, 100)
    assert t == pytest.approx(T_8_2, rel=1e-13)
    assert psi == pytest.approx(PSI_8_2, rel=1e-12)
    ref = 6 * phi_quad(-t) + 2 * phi_quad(-(5.0 - t))
    assert psi == pytest.approx(ref, abs=1e-12)


def test_psi_symmetric_and_limits():
    t, psi = bounds.psi_t(6, 3, 0.4, 1.0, 25)
    assert t == pytest.approx(1.0)
    assert psi == pytest.approx(6 * phi_quad(-1.0), abs=1e-13)
    assert bounds.psi_t(6, 2, 50.0, 1.0, 100)[1] < 1e-300
    with pytest.raises(InvalidRegime):
        bounds.psi_t(4, 4, 0.5, 1.0, 10)


@given(st.integers(3, 30), st.floats(0.05, 1.0), st.floats(0.5, 2.0))
def test_psi_decreasing_in_a(d, a, sigma):
    s0 = d // 3 or 1
    lo = bounds.psi_t(d, s0, a, sigma, 50)[1]
    hi = bounds.psi_t(d, s0, a * 1.1, sigma, 50)[1]
    assert hi < lo or lo == 0.0


def test_normal_cdf_tail_accuracy():
    # relative accuracy deep in the tail, checked against a quadrature of the density
    for x in (-1.0, -5.0, -10.0):
        assert float(bounds.normal_cdf(x)) == pytest.approx(phi_quad(x), rel=1e-10)


def test_bayes_selector_threshold_matches_t():
    d, s0, a, n = 8, 2, 0.5, 100
    t, _ = bounds.psi_t(d, s0, a, 1.0, n)
    assert float(bounds.bayes_selector(t, d, s0, a * math.sqrt(n), 1.0)) == pytest.approx(0.5)


def test_per_coordinate_term_is_bayes_risk():
    d, s0p, a, sigma, n = 10, 3, 0.3, 1.2, 80
    _, psi = bounds.psi_t(d, s0p, a, sigma, n)
    assert psi / d == pytest.approx(bayes_risk_per_coordinate(d, s0p, a, sigma, n), abs=1e-10)


def test_element_lb_vacuous_for_large_signal():
    lb = bounds.element_risk_lb(50, 40, 5, 4, 2, 100.0, 1.0, 300)
    assert lb.vacuous and lb.value == pytest.approx(-lb.penalty)


def test_lower_bounds_nonincreasing_in_a():
    grid = np.linspace(0.01, 1.0, 30)
    elem = [bounds.element_risk_lb(50, 40, 30, 10, 5, a, 1.0, 300).value for a in grid]
    group = [bounds.group_risk_lb(100, 10, 30, 4, 15, a, 1.0, math.sqrt(1200)).value
             for a in grid]
    assert np.all(np.diff(elem) <= 1e-12) and np.all(np.diff(group) <= 1e-12)


def test_group_lb_tiny_signal_finite():
    lb = bounds.group_risk_lb(50, 40, 10, 5, 5, 1e-8, 1.0, math.sqrt(300 * 5))
    assert math.isfinite(lb.value)
    # at a -> 0, t -> +inf, so the psi part tends to (s'/2s) * s
    assert lb.bayes_part == pytest.approx(5 / 20 * 10, rel=1e-6)


def test_lb_regime_errors():
    with pytest.raises(InvalidRegime):
        bounds.element_risk_lb(50, 40, 5, 4, 4, 0.3, 1.0, 100)
    with pytest.raises(InvalidRegime):
        bounds.group_risk_lb(50, 40, 5, 4, 5, 0.3, 1.0, 10.0)


def test_separation_values_and_homogeneity():
    sep = bounds.separation_thresholds(300, 50, 40, 5, 5, 1.0, 0.3)
    assert sep["elem_necessary_sq"] == pytest.approx(ELEM_NEC2_41, rel=1e-13)
    assert sep["group_necessary_sq"] == pytest.approx(GROUP_NEC2_41, rel=1e-13)
    assert sep["rate_only"] and sep["in_regime"]
    sep2 = bounds.separation_thresholds(300, 50, 40, 5, 5, 2.0, 0.3)
    assert sep2["elem_necessary_sq"] == pytest.approx(4 * sep["elem_necessary_sq"])
    assert sep2["group_necessary_sq"] == pytest.approx(4 * sep["group_necessary_sq"])
    assert sep2["elem_sufficient_rate"] == pytest.approx(2 * sep["elem_sufficient_rate"])
    assert sep2["group_sufficient_rate"] == pytest.approx(2 * sep["group_sufficient_rate"])
    assert not bounds.separation_thresholds(300, 10, 40, 6, 5, 1.0, 0.3)["in_regime"]


def test_separation_sandwich_on_grid():
    for n in (100, 300, 1000):
        for m in (20, 50):
            for d in (10, 40):
                for s in (2, 5, 9):
                    for s0 in (1, 3, 4):
                        sep = bounds.separation_thresholds(n, m, d, s, s0, 1.0, 0.3)
                        assert sep["elem_necessary_sq"] < sep["elem_sufficient_rate"] ** 2


def test_psi_monotonicity_check_example():
    rep = bounds.psi_monotonicity_check(10, 0.3, 1.0, 100, range(1, 10))
    assert rep["strictly_decreasing"] and rep["identity_holds"]
    sym = bounds.psi_monotonicity_check(10, 0.3, 1.0, 100, [5])
    assert sym["identity_max_rel_error"] <= 1e-14
    with pytest.raises(InvalidRegime):
        bounds.psi_monotonicity_check(10, 0.3, 1.0, 100, [0, 3])


def test_evaluate_bounds_report():
    rep = bounds.evaluate_bounds(300, 50, 40, 5, 5, 1.0).as_dict()
    assert rep["A"] == pytest.approx(2.0)
    assert rep["mu"] == pytest.approx(MU_THEORY_41, rel=1e-13)
    assert rep["element_lb"] is not None and rep["group_lb"] is not None
    assert bounds.evaluate_bounds(300, 50, 40, 5, 5, 1.0).as_dict() == rep
