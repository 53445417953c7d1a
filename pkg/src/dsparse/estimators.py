"""scikit-learn style wrappers around the one-stage and two-stage solvers.

Inputs are column-standardized internally (norm ``sqrt(n)`` per column) and the
fitted coefficients are mapped back to the original column scale. There is no
intercept, matching the model ``y = X beta + sigma xi``.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from . import bounds
from .exceptions import StructureMismatch
from .model import GroupStructure, ProblemInstance, standardize_columns
from .solver import DsihtConfig, TwoStageConfig, dsiht_fit, two_stage_fit
from .threshold import ThresholdParams
from .tuning import build_grid, cv_select, refit_full


class _DoubleSparseBase(RegressorMixin, BaseEstimator):
    def _prepare(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        p = X.shape[1]
        if self.group_size < 1 or p % self.group_size:
            raise StructureMismatch(
                f"{p} features cannot be split into groups of size {self.group_size}")
        structure = GroupStructure(p // self.group_size, self.group_size)
        Xs, scale = standardize_columns(X)
        return ProblemInstance(Xs, y, float(self.sigma), structure), scale

    def _stage1(self, instance):
        cfg = DsihtConfig(s0=self.s0, sigma=float(self.sigma), kappa=self.kappa,
                          delta=self.delta, lambda_inf=self.lambda_inf, s=self.s,
                          lambda_inf_constant=self.lambda_inf_constant, step=self.step)
        return dsiht_fit(instance, cfg)

    def _finish(self, fit, scale, structure):
        self.coef_ = fit.beta_hat * scale
        self.n_iter_ = fit.iterations
        self.structure_ = structure
        self.support_ = self.coef_ != 0
        self.group_support_ = np.any(structure.as_blocks(self.support_), axis=1)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_


class DSIHTRegressor(_DoubleSparseBase):
    """One-stage double sparse IHT with a geometrically decaying threshold.

    The threshold floor is ``lambda_inf`` if given, else
    ``lambda_inf_constant * sigma * sqrt(Delta(s, s0) / n)``.
    """

    def __init__(self, group_size=1, s0=1, s=None, sigma=1.0, kappa=0.9, delta=0.3,
                 lambda_inf=None, lambda_inf_constant=1.5, step=0.8):
        self.group_size = group_size
        self.s0 = s0
        self.s = s
        self.sigma = sigma
        self.kappa = kappa
        self.delta = delta
        self.lambda_inf = lambda_inf
        self.lambda_inf_constant = lambda_inf_constant
        self.step = step

    def fit(self, X, y):
        instance, scale = self._prepare(X, y)
        return self._finish(self._stage1(instance), scale, instance.structure)


class TwoStageDSIHT(DSIHTRegressor):
    """Stage one followed by fixed-threshold refinement with the scaled group rule.

    ``mu`` defaults to ``mu_constant`` times the rate
    ``sqrt(sigma^2/n (log(em)/s0 + log(esd)))``; ``mu_constant=None`` uses the
    theory constant.
    """

    def __init__(self, group_size=1, s0=1, s=None, sigma=1.0, kappa=0.9, delta=0.3,
                 lambda_inf=None, lambda_inf_constant=1.5, step=0.8, mu=None,
                 mu_constant=math.sqrt(2.0), max_iters=None):
        super().__init__(group_size, s0, s, sigma, kappa, delta, lambda_inf,
                         lambda_inf_constant, step)
        self.mu = mu
        self.mu_constant = mu_constant
        self.max_iters = max_iters

    def fit(self, X, y):
        instance, scale = self._prepare(X, y)
        st = instance.structure
        mu = self.mu
        if mu is None:
            if self.s is None:
                raise ValueError("s is required when mu is not given")
            args = (instance.n, st.m, st.d, self.s, self.s0, float(self.sigma))
            mu = (bounds.theoretical_mu(*args, self.kappa, self.delta)
                  if self.mu_constant is None else self.mu_constant * bounds.mu_rate(*args))
        first = self._stage1(instance)
        fit = two_stage_fit(instance, first.beta_hat,
                            TwoStageConfig(ThresholdParams.scaled(mu, self.s0),
                                           max_iters=self.max_iters, step=self.step))
        self.mu_ = mu
        return self._finish(fit, scale, st)


class TwoStageDSIHTCV(DSIHTRegressor):
    """Stage one followed by a refinement whose thresholds are chosen by k-fold CV."""

    def __init__(self, group_size=1, s0=1, s=None, sigma=1.0, kappa=0.9, delta=0.3,
                 lambda_inf=None, lambda_inf_constant=1.5, step=0.8, L=10, cv=5,
                 random_state=None):
        super().__init__(group_size, s0, s, sigma, kappa, delta, lambda_inf,
                         lambda_inf_constant, step)
        self.L = L
        self.cv = cv
        self.random_state = random_state

    def fit(self, X, y):
        instance, scale = self._prepare(X, y)
        result = cv_select(instance, self._stage1, build_grid(instance.n, self.L), self.cv,
                           self.random_state, step=self.step)
        fit = refit_full(instance, self._stage1(instance), result.best, step=self.step)
        self.best_pair_ = (result.best.mu_e, result.best.mu_g)
        self.cv_scores_ = result.scores
        return self._finish(fit, scale, instance.structure)
