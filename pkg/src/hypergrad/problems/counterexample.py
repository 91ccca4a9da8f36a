"""Scalar problem on which 1-step truncation converges to a non-stationary point.

    g(w, lam) = 1/2 (w - lam)^2,   f(w, lam) = 1/2 w^2 + 1/2 (lam - lam0)^2
"""

import numpy as np

from ..dynamics import ConstantInit, GdTransition, LowerObjective, UpperObjective
from .base import BilevelProblem


class _ScalarLower(LowerObjective):
    alpha = 1.0
    beta = 1.0

    def value(self, w, lam):
        return 0.5 * float((w[0] - lam[0]) ** 2)

    def grad_w(self, w, lam):
        return w - lam

    def hvp(self, w, lam, v):
        return v.copy()

    def mixed_adjoint(self, w, lam, v):
        return -v

    def mixed_tangent(self, w, lam, e):
        return -e


class _ScalarUpper(UpperObjective):
    def __init__(self, lam0):
        self.lam0 = lam0

    def value(self, w, lam):
        return 0.5 * float(w[0] ** 2) + 0.5 * float((lam[0] - self.lam0) ** 2)

    def grad_w(self, w, lam):
        return w.copy()

    def grad_lam(self, w, lam):
        return lam - self.lam0


def make_counterexample(lam0=1.0, gamma=0.5, T=20, w0=2.0):
    if lam0 == 0:
        raise ValueError("lam0 = 0 makes the perturbation stationary where w* = 0; choose lam0 != 0")
    if not 0 < gamma < 1:
        raise ValueError("counterexample needs a step size in (0, 1)")
    lower = _ScalarLower()
    lower.m_b = gamma
    ts = GdTransition(lower, ConstantInit([w0]), gamma=gamma)
    return BilevelProblem(
        name="counterexample", lower=lower, upper=_ScalarUpper(float(lam0)), transition=ts,
        M=1, N=1, T=T, init_lambda=np.array([0.0]))
