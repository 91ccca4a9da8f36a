"""Data hypercleaning: one sigmoid weight per training example.

Lower objective  g(W, lam) = sum_i sigmoid(lam_i) CE_i(W) + reg ||W||_F^2
Upper objective  f(W)      = mean validation cross-entropy
"""

import numpy as np

from ..dynamics import ConstantInit, GdTransition, LowerObjective, UpperObjective
from ..numerics import sigmoid, sigmoid_prime
from .base import BilevelProblem
from .softmax import LinearSoftmax, add_bias

REG = 0.001


class WeightedCELower(LowerObjective):
    def __init__(self, model, reg=REG):
        self.model = model
        self.reg = reg
        self.alpha = 2.0 * reg

    def value(self, w, lam):
        return float(np.dot(sigmoid(lam), self.model.losses(w))) + self.reg * float(np.dot(w, w))

    def grad_w(self, w, lam):
        return self.model.grad(w, sigmoid(lam)) + 2.0 * self.reg * w

    def hvp(self, w, lam, v):
        return self.model.hvp(w, sigmoid(lam), v) + 2.0 * self.reg * v

    def mixed_adjoint(self, w, lam, v):
        return sigmoid_prime(lam) * self.model.grad_inner(w, v)

    def mixed_tangent(self, w, lam, e):
        return self.model.grad(w, sigmoid_prime(lam) * e)

    def mixed_matrix(self, w, lam):
        return sigmoid_prime(lam)[:, None] * self.model.per_example_grads(w)


class MeanCEUpper(UpperObjective):
    def __init__(self, model):
        self.model = model
        self._weights = np.full(model.n, 1.0 / model.n)

    def value(self, w, lam):
        return float(np.mean(self.model.losses(w)))

    def grad_w(self, w, lam):
        return self.model.grad(w, self._weights)

    def grad_lam(self, w, lam):
        return np.zeros_like(lam)


def estimate_smoothness(lower, M, N, iters=50, seed=0):
    """Power-iteration estimate of the largest lower Hessian eigenvalue at ``W = 0``, unit weights."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M)
    v /= np.linalg.norm(v)
    w = np.zeros(M)
    lam = np.full(N, 40.0)
    eig = 0.0
    for _ in range(iters):
        hv = lower.hvp(w, lam, v)
        eig = float(np.linalg.norm(hv))
        v = hv / eig
    return eig


def make_hypercleaning(train, val, gamma=None, T=100, reg=REG):
    """Build the hypercleaning problem; ``gamma=None`` picks ``1 / beta`` from a power iteration."""
    if train.n == 0 or val.n == 0:
        raise ValueError("hypercleaning needs non-empty training and validation sets")
    if train.d != val.d or train.classes != val.classes:
        raise ValueError("training and validation sets disagree on feature dimension or class count")
    model = LinearSoftmax(add_bias(train.features), train.labels, train.classes)
    val_model = LinearSoftmax(add_bias(val.features), val.labels, val.classes)
    lower = WeightedCELower(model, reg)
    M, N = model.size, train.n
    lower.beta = estimate_smoothness(lower, M, N)
    if gamma is None:
        gamma = 1.0 / lower.beta
    ts = GdTransition(lower, ConstantInit(np.zeros(M)), gamma=gamma)
    return BilevelProblem(
        name="hypercleaning", lower=lower, upper=MeanCEUpper(val_model), transition=ts,
        M=M, N=N, T=T, init_lambda=np.zeros(N),
        data={"train": train, "val": val, "mask": train.corruption_mask, "val_model": val_model})
