"""Element-then-group hard thresholding.

The double sparse operator first zeroes every entry with ``|v_ij| < lambda`` and
then zeroes every group whose surviving energy falls below the group threshold.
Both comparisons keep the boundary (non-strict inequalities).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ThresholdParams:
    """Element threshold plus a group rule.

    Exactly one of ``s0`` (scaled rule: keep group iff energy >= s0 * lambda^2)
    or ``mu_g`` (absolute rule: keep group iff its l2 norm >= mu_g) is set.
    Use :meth:`scaled` and :meth:`absolute` to build instances.
    """

    lambda_elem: float
    s0: int | None = None
    mu_g: float | None = None

    def __post_init__(self):
        if (self.s0 is None) == (self.mu_g is None):
            raise ValueError("set exactly one of s0 (scaled rule) or mu_g (absolute rule)")
        if not self.lambda_elem >= 0:
            raise ValueError("lambda_elem must be nonnegative")
        if self.s0 is not None and self.s0 < 1:
            raise ValueError("s0 must be at least 1")
        if self.mu_g is not None and not self.mu_g >= 0:
            raise ValueError("mu_g must be nonnegative")

    @classmethod
    def scaled(cls, lam, s0):
        return cls(float(lam), s0=int(s0))

    @classmethod
    def absolute(cls, mu_e, mu_g):
        return cls(float(mu_e), mu_g=float(mu_g))

    @property
    def group_energy_threshold(self):
        if self.s0 is not None:
            return self.s0 * self.lambda_elem ** 2
        return self.mu_g ** 2

    def rescale(self, c):
        """Parameters for an input multiplied by ``c`` (scale equivariance)."""
        c = abs(c)
        if self.s0 is not None:
            return ThresholdParams(self.lambda_elem * c, s0=self.s0)
        return ThresholdParams(self.lambda_elem * c, mu_g=self.mu_g * c)

    def to_absolute(self):
        if self.mu_g is not None:
            return self
        return ThresholdParams(self.lambda_elem, mu_g=self.lambda_elem * math.sqrt(self.s0))

    def as_dict(self):
        if self.s0 is not None:
            return {"rule": "scaled", "lambda": self.lambda_elem, "s0": self.s0}
        return {"rule": "absolute", "mu_e": self.lambda_elem, "mu_g": self.mu_g}


def apply_element(v, lam):
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) >= lam, v, 0.0)


def _group_filter(v, d, energy_threshold):
    blocks = v.reshape(-1, d)
    keep = np.einsum("ij,ij->i", blocks, blocks) >= energy_threshold
    return (blocks * keep[:, None]).reshape(v.shape)


def apply_group(v, d, lam, s0):
    """Zero each size-``d`` group with squared norm below ``s0 * lam**2``."""
    v = np.asarray(v, dtype=float)
    if v.size % d:
        raise ValueError(f"length {v.size} is not a multiple of group size {d}")
    return _group_filter(v, d, s0 * lam ** 2)


def apply_double(v, d, params):
    """Element stage, then group stage on the surviving entries."""
    v = np.asarray(v, dtype=float)
    if v.size % d:
        raise ValueError(f"length {v.size} is not a multiple of group size {d}")
    return _group_filter(apply_element(v, params.lambda_elem), d,
                         params.group_energy_threshold)
