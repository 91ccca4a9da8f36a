"""Two-dimensional quadratic lower problem with a wiggly upper objective.

    g(w, lam) = 1/2 (w - lam)^T G (w - lam),   G = diag(1, 1/2)
    f(w)      = ||w||^2 + 10 ||sin(w)||^2
    f~(w, lam) = f(w) + 5 ||lam - (1, 0)||^2

solved with ``T = 100`` gradient steps of size 0.1 from ``w_0 = (2, 2)``.
"""

import numpy as np

from ..dynamics import ConstantInit, GdTransition, LowerObjective, UpperObjective
from .base import BilevelProblem

G_DIAG = np.array([1.0, 0.5])
W0 = np.array([2.0, 2.0])
GAMMA = 0.1
HORIZON = 100
TILDE_CENTER = np.array([1.0, 0.0])
TILDE_WEIGHT = 5.0


class QuadraticLower(LowerObjective):
    """``1/2 (w - lam)^T diag(G) (w - lam)``; any diagonal G > 0."""

    def __init__(self, diag=G_DIAG):
        self.diag = np.asarray(diag, dtype=np.float64)
        self.alpha = float(self.diag.min())
        self.beta = float(self.diag.max())

    def value(self, w, lam):
        d = w - lam
        return 0.5 * float(np.dot(d, self.diag * d))

    def grad_w(self, w, lam):
        return self.diag * (w - lam)

    def hvp(self, w, lam, v):
        return self.diag * v

    def mixed_adjoint(self, w, lam, v):
        return -self.diag * v

    def mixed_tangent(self, w, lam, e):
        return -self.diag * e

    def mixed_matrix(self, w, lam):
        return -np.diag(self.diag)


class SineUpper(UpperObjective):
    def __init__(self, tilde=False):
        self.tilde = tilde

    def value(self, w, lam):
        out = float(np.dot(w, w) + 10.0 * np.dot(np.sin(w), np.sin(w)))
        if self.tilde:
            d = lam - TILDE_CENTER
            out += TILDE_WEIGHT * float(np.dot(d, d))
        return out

    def grad_w(self, w, lam):
        return 2.0 * w + 10.0 * np.sin(2.0 * w)

    def grad_lam(self, w, lam):
        if self.tilde:
            return 2.0 * TILDE_WEIGHT * (lam - TILDE_CENTER)
        return np.zeros_like(lam)


def _make(name, tilde, gamma, T):
    lower = QuadraticLower()
    lower.m_b = gamma * float(G_DIAG.max())
    ts = GdTransition(lower, ConstantInit(W0), gamma=gamma)
    return BilevelProblem(
        name=name, lower=lower, upper=SineUpper(tilde), transition=ts, M=2, N=2, T=T,
        init_lambda=np.array([2.8, -2.8]))


def make_toy(gamma=GAMMA, T=HORIZON):
    return _make("toy", False, gamma, T)


def make_toy_tilde(gamma=GAMMA, T=HORIZON):
    return _make("toy_tilde", True, gamma, T)


def closed_form_solution(lam, T=HORIZON, gamma=GAMMA):
    """``w_T = C w_0 + (I - C) lam`` with ``C = (I - gamma G)^T``."""
    C = (1.0 - gamma * G_DIAG) ** T
    return C * W0 + (1.0 - C) * np.asarray(lam, dtype=np.float64)
