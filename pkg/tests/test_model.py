import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsparse.exceptions import DimensionMismatch, InvalidBudget, ZeroColumn
from dsparse.model import (CASES, Coefficients, GroupStructure, ProblemInstance,
                           SparsityBudget, generate_case_signal, generate_gaussian_design,
                           generate_signal_uniform, is_standardized, load_instance,
                           make_instance, save_instance, signal_scale,
                           standardize_columns, synthesize_response)

# independent high-precision value of sqrt((1/300)(log(10)/5 + log 8))
SIGNAL_RADICAL_41 = 0.0920137410078633321559502193905


@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_index_bijection(m, d, data):
    gs = GroupStructure(m, d)
    k = data.draw(st.integers(0, gs.p - 1))
    i, j = gs.to_double(k)
    assert gs.to_flat(i, j) == k
    assert gs.group_of(k) == j


def test_index_bounds():
    gs = GroupStructure(3, 2)
    with pytest.raises(IndexError):
        gs.to_flat(2, 0)
    with pytest.raises(IndexError):
        gs.to_double(6)


def test_structure_rejects_bad_sizes():
    with pytest.raises(ValueError):
        GroupStructure(0, 3)


def test_budget_validation():
    gs = GroupStructure(4, 3)
    SparsityBudget(4, 3).validate(gs)
    with pytest.raises(InvalidBudget):
        SparsityBudget(5, 1).validate(gs)
    with pytest.raises(InvalidBudget):
        SparsityBudget(1, 4).validate(gs)


def test_coefficients_queries():
    gs = GroupStructure(3, 2)
    c = Coefficients([0, 1.0, 0, 0, -2.0, 3.0], gs)
    assert c.support().tolist() == [False, True, False, False, True, True]
    assert c.group_support().tolist() == [True, False, True]
    assert c.support_pairs() == [(1, 0), (0, 2), (1, 2)]
    np.testing.assert_allclose(c.group_norms(), [1.0, 0.0, math.sqrt(13)])
    assert c.is_double_sparse(2, 2) and not c.is_double_sparse(1, 2)
    with pytest.raises(ValueError):
        c.values[0] = 5.0
    with pytest.raises(DimensionMismatch):
        Coefficients([1.0, 2.0], gs)


def test_standardize_examples():
    X = np.array([[1.0, 2.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    Xs, scale = standardize_columns(X)
    np.testing.assert_array_equal(Xs, X)
    np.testing.assert_array_equal(scale, [1.0, 1.0])
    Xs, scale = standardize_columns(np.array([[1.0], [2.0], [2.0]]))
    assert scale[0] == pytest.approx(math.sqrt(3) / 3, rel=1e-15)
    assert np.linalg.norm(Xs) == pytest.approx(math.sqrt(3), rel=1e-15)


def test_standardize_zero_column():
    with pytest.raises(ZeroColumn) as err:
        standardize_columns(np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert err.value.column == 1


@given(st.integers(2, 20), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_standardize_idempotent(n, p, seed):
    X = np.random.Generator(np.random.Philox(seed)).normal(size=(n, p)) * 3.0
    once, _ = standardize_columns(X)
    twice, scale = standardize_columns(once)
    np.testing.assert_array_equal(once, twice)
    np.testing.assert_array_equal(scale, np.ones(p))
    assert is_standardized(once)


def test_gaussian_design_shape_and_determinism():
    gs = GroupStructure(50, 40)
    X = generate_gaussian_design(300, gs, 1)
    assert X.shape == (300, 2000)
    np.testing.assert_allclose(np.linalg.norm(X, axis=0), math.sqrt(300), rtol=1e-12)
    small = GroupStructure(1, 1)
    np.testing.assert_array_equal(generate_gaussian_design(4, small, 9),
                                  generate_gaussian_design(4, small, 9))


def test_gaussian_design_column_means():
    X = generate_gaussian_design(100, GroupStructure(2, 3), 5)
    assert np.all(np.abs(X.mean(axis=0)) <= 5 / math.sqrt(100))


def test_signal_radical_matches_high_precision():
    gs = GroupStructure(50, 40)
    assert signal_scale(gs, 5, 5, 1.0, 300) == pytest.approx(SIGNAL_RADICAL_41, rel=1e-14)


def test_uniform_signal_support_and_range():
    gs = GroupStructure(50, 40)
    beta = generate_signal_uniform(gs, 5, 5, 1.0, 1.0, 300, 3)
    nz = beta.values[beta.values != 0]
    assert nz.size == 25
    assert np.all((nz >= SIGNAL_RADICAL_41) & (nz <= 2 * SIGNAL_RADICAL_41))
    assert beta.is_double_sparse(5, 5)
    assert beta.group_support().sum() == 5
    with pytest.raises(InvalidBudget):
        generate_signal_uniform(gs, 5, 5, 0.0, 1.0, 300, 3)
    with pytest.raises(InvalidBudget):
        generate_signal_uniform(gs, 51, 5, 1.0, 1.0, 300, 3)


@pytest.mark.parametrize("case", sorted(CASES))
def test_case_signal(case):
    gs = GroupStructure(50, 40)
    s, s0 = CASES[case]
    beta = generate_case_signal(gs, case, 0.5, 4)
    assert np.count_nonzero(beta.values) == 48 == s * s0
    assert beta.group_support().sum() == s
    assert set(beta.values[beta.values != 0]) == {0.5}
    norms = beta.group_norms()[beta.group_support()]
    np.testing.assert_allclose(norms, 0.5 * math.sqrt(s0), rtol=1e-14)


def test_case_signal_unknown():
    with pytest.raises(InvalidBudget):
        generate_case_signal(GroupStructure(50, 40), "D", 0.5)


def test_response_noiseless_and_seeded():
    gs = GroupStructure(2, 2)
    X = generate_gaussian_design(10, gs, 0)
    beta = np.array([1.0, 0, 0, -2.0])
    np.testing.assert_array_equal(synthesize_response(X, beta, 0.0, seed=1), X @ beta)
    np.testing.assert_array_equal(synthesize_response(X, beta, 1.0, seed=1),
                                  synthesize_response(X, beta, 1.0, seed=1))
    with pytest.raises(DimensionMismatch):
        synthesize_response(X, beta[:3], 1.0)


@pytest.mark.parametrize("noise", ["gaussian", "rademacher"])
def test_response_noise_variance(noise):
    X = np.ones((10_000, 1))
    Y = synthesize_response(X, np.zeros(1), 1.0, noise, seed=2)
    assert abs(Y.var() - 1.0) <= 0.05


def test_instance_validation():
    gs = GroupStructure(1, 2)
    X = np.array([[1.0, 1.0], [1.0, -1.0]])
    with pytest.raises(ValueError):
        ProblemInstance(X * 2, np.zeros(2), 1.0, gs)
    with pytest.raises(DimensionMismatch):
        ProblemInstance(X, np.zeros(3), 1.0, gs)
    inst = ProblemInstance(X, np.zeros(2), 1.0, gs)
    assert not inst.X.flags.writeable
    X[0, 0] = 7.0  # caller's array is untouched by the instance
    assert inst.X[0, 0] == 1.0


def test_subset_restandardizes():
    gs = GroupStructure(2, 2)
    inst = make_instance(20, gs, np.array([1.0, 0, 0, 1.0]), 1.0, seed=3)
    sub, scale = inst.subset(np.arange(15))
    assert sub.n == 15 and is_standardized(sub.X)
    np.testing.assert_allclose(sub.X, inst.X[:15] * scale)


def test_save_load_roundtrip(tmp_path):
    gs = GroupStructure(3, 2)
    inst = make_instance(8, gs, np.array([0, 1.5, 0, 0, -0.25, 0]), 0.7, seed=4,
                         meta={"s": 2, "s0": 1})
    save_instance(inst, tmp_path)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["s"] == 2 and meta["m"] == 3
    back = load_instance(tmp_path)
    np.testing.assert_array_equal(back.X, inst.X)
    np.testing.assert_array_equal(back.Y, inst.Y)
    np.testing.assert_array_equal(back.beta_true, inst.beta_true)
    assert back.sigma == 0.7 and back.meta["s0"] == 1
