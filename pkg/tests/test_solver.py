import csv
import gc
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hadamard

from dsparse import solver
from dsparse.exceptions import InvalidSchedule, NonFiniteIterate, SingularGram
from dsparse.model import (GroupStructure, ProblemInstance, generate_gaussian_design,
                           generate_signal_uniform, make_instance)
from dsparse.solver import (DsihtConfig, TwoStageConfig, default_max_iters, dsiht_fit,
                            initial_lambda, lambda_schedule, oracle_ols, two_stage_fit)
from dsparse.threshold import ThresholdParams

LAMBDA0_EXAMPLE = 0.788307921263477  # (0.5 + sqrt(10 log 2000 / 300)) / (sqrt 2 * 0.9)


def orthogonal_instance(beta, m, d, sigma=0.0):
    n = m * d
    X = hadamard(n).astype(float)
    return ProblemInstance(X, X @ beta, sigma, GroupStructure(m, d), beta)


def test_schedule_examples():
    lams, T = lambda_schedule(1.0, 0.5, 0.3)
    assert T == 2 and lams == pytest.approx([1.0, 0.5, 0.3])
    assert lambda_schedule(0.3, 0.5, 0.3) == ([0.3], 0)
    lams, T = lambda_schedule(1.0, 0.5, 0.25)
    assert T == 2 and lams[-1] == 0.25
    with pytest.raises(InvalidSchedule):
        lambda_schedule(0.2, 0.5, 0.3)


@given(st.floats(0.01, 100), st.floats(0.05, 0.95), st.floats(0.01, 1.0))
def test_schedule_properties(lam0, kappa, frac):
    lam_inf = lam0 * frac
    lams, T = lambda_schedule(lam0, kappa, lam_inf)
    assert len(lams) == T + 1
    assert lams[-1] == pytest.approx(lam_inf, rel=1e-9)
    assert all(a >= b for a, b in zip(lams, lams[1:]))
    assert min(lams) >= lam_inf


def test_initial_lambda_example():
    X = generate_gaussian_design(300, GroupStructure(50, 40), 0)
    Y = 0.5 * X[:, 0]  # X_0^T Y / n = 0.5; other correlations are far smaller
    assert np.max(np.abs(X.T @ Y)) / 300 == pytest.approx(0.5, rel=1e-14)
    assert initial_lambda(X, Y, 1.0, 0.9) == pytest.approx(LAMBDA0_EXAMPLE, rel=1e-13)
    expected = math.sqrt(10 * math.log(2000) / 300) / (math.sqrt(2) * 0.9)
    assert initial_lambda(X, np.zeros(300), 1.0, 0.9) == pytest.approx(expected, rel=1e-14)


def test_zero_schedule_flagged():
    inst = orthogonal_instance(np.zeros(16), 4, 4)
    with pytest.raises(InvalidSchedule):
        dsiht_fit(inst, DsihtConfig(s0=2, sigma=0.0, lambda_inf=0.1))


def test_dsiht_orthogonal_noiseless_exact():
    beta = np.zeros(16)
    beta[[0, 1, 8, 9]] = [1.0, -0.7, 2.0, 0.5]
    fit = dsiht_fit(orthogonal_instance(beta, 4, 4), DsihtConfig(s0=2, sigma=0.0, lambda_inf=0.2))
    np.testing.assert_allclose(fit.beta_hat, beta, atol=1e-12)
    assert fit.iterations == len(fit.trace) >= 1


def test_dsiht_null_signal_theory_floor():
    st_ = GroupStructure(50, 40)
    zeros = 0
    for seed in range(100):
        inst = make_instance(300, st_, np.zeros(2000), 1.0, seed=seed)
        fit = dsiht_fit(inst, DsihtConfig(s0=5, sigma=1.0, s=5))
        zeros += not np.any(fit.beta_hat)
    assert zeros >= 99


def test_dsiht_needs_budget_or_floor():
    with pytest.raises(ValueError):
        DsihtConfig(s0=1, sigma=1.0).resolve_lambda_inf(10, 2, 2)
    with pytest.raises(ValueError):
        DsihtConfig(s0=1, sigma=1.0, kappa=1.0)


def test_dsiht_non_finite_detected():
    beta = np.zeros(16)
    beta[0] = 1.0
    with np.errstate(all="ignore"), pytest.raises(NonFiniteIterate):
        dsiht_fit(orthogonal_instance(beta, 4, 4),
                  DsihtConfig(s0=1, sigma=0.0, lambda_inf=1e-3, step=1e308 * 10))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.5, 3.0), st.sampled_from([1, 2, 3]))
def test_dsiht_output_double_sparse(seed, c, s0):
    st_ = GroupStructure(8, 5)
    beta = generate_signal_uniform(st_, 2, s0, 4.0, 1.0, 60, seed).values
    inst = make_instance(60, st_, beta, 1.0, seed=seed + 1)
    cfg = DsihtConfig(s0=s0, sigma=1.0, s=2, lambda_inf_constant=c, step=0.8)
    fit = dsiht_fit(inst, cfg)
    lam = cfg.resolve_lambda_inf(60, 8, 5)
    out = fit.beta_hat.reshape(8, 5)
    kept = out != 0
    assert np.all(np.abs(out[kept]) >= lam)
    energy = (out ** 2).sum(axis=1)
    assert np.all((energy == 0) | (energy >= s0 * lam ** 2))


def test_oracle_examples():
    X = 2.0 * np.eye(4)
    inst = ProblemInstance(X, np.array([2.0, 0, 0, 0]), 1.0, GroupStructure(2, 2))
    np.testing.assert_allclose(oracle_ols(inst, [0]), [1.0, 0, 0, 0])
    np.testing.assert_array_equal(oracle_ols(inst, np.zeros(4, dtype=bool)), np.zeros(4))
    st_ = GroupStructure(10, 4)
    beta = generate_signal_uniform(st_, 3, 2, 4.0, 1.0, 50, 1).values
    noiseless = make_instance(50, st_, beta, 0.0, seed=2)
    np.testing.assert_allclose(oracle_ols(noiseless, beta != 0), beta, atol=1e-8)


def test_oracle_singular():
    col = np.array([1.0, -1.0, 1.0, -1.0])
    X = np.column_stack([col, col])
    inst = ProblemInstance(X, col, 1.0, GroupStructure(2, 1))
    with pytest.raises(SingularGram):
        oracle_ols(inst, [0, 1])


def test_two_stage_fixed_point_noiseless():
    st_ = GroupStructure(10, 4)
    beta = generate_signal_uniform(st_, 3, 2, 6.0, 1.0, 50, 3).values
    inst = make_instance(50, st_, beta, 0.0, seed=4)
    start = oracle_ols(inst, beta != 0)
    fit = two_stage_fit(inst, start, TwoStageConfig(ThresholdParams.scaled(0.05, 2)))
    assert fit.iterations == 1 and fit.converged
    np.testing.assert_allclose(fit.beta_hat, beta, atol=1e-10)


def test_two_stage_noiseless_converges_from_zero():
    st_ = GroupStructure(10, 5)
    beta = np.zeros(50)
    beta[[0, 1, 20, 21]] = [1.0, -1.2, 0.9, 1.1]
    inst = make_instance(200, st_, beta, 0.0, seed=5)
    fit = two_stage_fit(inst, np.zeros(50),
                        TwoStageConfig(ThresholdParams.scaled(0.3, 2), max_iters=500))
    assert fit.converged
    np.testing.assert_allclose(inst.Y - inst.X @ fit.beta_hat, 0.0, atol=1e-8)


def test_two_stage_contraction_strong_signal():
    st_ = GroupStructure(20, 10)
    good = 0
    for seed in range(40):
        beta = generate_signal_uniform(st_, 3, 3, 8.0, 1.0, 200, seed).values
        inst = make_instance(200, st_, beta, 1.0, seed=seed + 100)
        ref = oracle_ols(inst, beta != 0)
        mu = 1.5 * math.sqrt((math.log(20) / 3 + math.log(30)) / 200)
        first = dsiht_fit(inst, DsihtConfig(s0=3, sigma=1.0, s=3, lambda_inf_constant=1.5,
                                            step=0.8))
        fit = two_stage_fit(inst, first.beta_hat,
                            TwoStageConfig(ThresholdParams.scaled(mu, 3), step=0.8),
                            reference=ref)
        dist = [r.dist_to_reference for r in fit.trace]
        good += all(b <= a + 1e-12 for a, b in zip(dist[1:], dist[2:]))
    assert good >= 38


def test_default_max_iters():
    assert default_max_iters(300) == 126
    assert TwoStageConfig(ThresholdParams.scaled(0.1, 1)).resolve_max_iters(300) == 126
    with pytest.raises(ValueError):
        TwoStageConfig(ThresholdParams.scaled(0.1, 1), max_iters=0)


def test_two_stage_rejects_bad_initial():
    inst = orthogonal_instance(np.zeros(16), 4, 4)
    with pytest.raises(ValueError):
        two_stage_fit(inst, np.zeros(3), TwoStageConfig(ThresholdParams.scaled(0.1, 1)))


def test_fit_result_serialization(tmp_path):
    beta = np.zeros(16)
    beta[[5, 9]] = [1.5, -2.0]
    inst = orthogonal_instance(beta, 4, 4)
    fit = two_stage_fit(inst, np.zeros(16), TwoStageConfig(ThresholdParams.scaled(0.5, 1)),
                        reference=beta)
    fit.save(tmp_path)
    data = json.loads((tmp_path / "fit.json").read_text())
    assert data["beta_hat"] == [[1, 1, 1.5], [1, 2, -2.0]]
    assert data["iterations"] == fit.iterations and data["converged"]
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    assert len(rows) == fit.iterations
    assert set(rows[0]) == {"t", "threshold", "n_groups", "n_elems", "dist_to_reference"}
    assert float(rows[-1]["dist_to_reference"]) == 0.0


def test_cached_gradient_matches_dense(rng):
    st_ = GroupStructure(6, 5)
    inst = make_instance(40, st_, np.zeros(30), 1.0, seed=6)
    grad = solver._Gradient(inst)
    for size in (0, 3, 30):
        beta = np.zeros(30)
        beta[rng.choice(30, size, replace=False)] = rng.normal(size=size)
        dense = inst.X.T @ (inst.Y - inst.X @ beta) / 40
        np.testing.assert_allclose(grad(beta), dense, rtol=1e-12, atol=1e-12)


def test_cache_released_with_design():
    inst = make_instance(30, GroupStructure(3, 3), np.zeros(9), 1.0, seed=7)
    key = id(inst.X)
    solver._Gradient(inst)(np.ones(9))
    assert key in solver._CACHES
    del inst
    gc.collect()
    assert key not in solver._CACHES
