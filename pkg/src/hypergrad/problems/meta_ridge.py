"""Stochastic meta-learning of a ridge regulariser centre and strength.

Each context is a regression task ``y = X w_task + noise`` with
``w_task ~ N(meta_mean, task_std^2 I)``.  Per task:

    g_S(w, lam) = ||X_S w - y_S||^2 + rho ||w - c||^2
    f_S(w)      = ||X_Q w - y_Q||^2         (held-out query set Q)

``lam = [c (d entries), log rho]`` with an optional trailing coordinate
holding the inner step size through ``softplus``.  With ``warm_start`` the
inner solver starts at ``w_0 = c``.
"""

from dataclasses import dataclass

import numpy as np

from ..dynamics import ConstantInit, GdTransition, HyperSliceInit, LowerObjective, UpperObjective
from ..numerics import inv_softplus, make_rng
from .base import BilevelProblem


@dataclass(frozen=True)
class MetaRidgeConfig:
    d: int = 5
    n_train: int = 10
    n_val: int = 20
    noise: float = 0.1
    task_std: float = 0.3
    seed: int = 0
    gamma: float = 0.1
    T: int = 100
    rho: float = 1.0
    learn_rho: bool = True
    warm_start: bool = True
    learn_step_size: bool = False
    fixed_task: bool = False


class RidgeLower(LowerObjective):
    def __init__(self, X, y, d, learn_rho, rho):
        self.X, self.y, self.d = X, y, d
        self.learn_rho = learn_rho
        self.rho_fixed = rho
        self._XtX = X.T @ X
        self._Xty = X.T @ y

    def rho(self, lam):
        return float(np.exp(lam[self.d])) if self.learn_rho else self.rho_fixed

    def value(self, w, lam):
        r = self.X @ w - self.y
        dc = w - lam[:self.d]
        return float(np.dot(r, r)) + self.rho(lam) * float(np.dot(dc, dc))

    def grad_w(self, w, lam):
        return 2.0 * (self._XtX @ w - self._Xty) + 2.0 * self.rho(lam) * (w - lam[:self.d])

    def hvp(self, w, lam, v):
        return 2.0 * (self._XtX @ v) + 2.0 * self.rho(lam) * v

    def mixed_adjoint(self, w, lam, v):
        rho = self.rho(lam)
        out = np.zeros(lam.shape[0])
        out[:self.d] = -2.0 * rho * v
        if self.learn_rho:
            out[self.d] = 2.0 * rho * float(np.dot(w - lam[:self.d], v))
        return out

    def mixed_tangent(self, w, lam, e):
        rho = self.rho(lam)
        out = -2.0 * rho * e[:self.d]
        if self.learn_rho:
            out = out + 2.0 * rho * e[self.d] * (w - lam[:self.d])
        return out


class SquaredErrorUpper(UpperObjective):
    def __init__(self, X, y):
        self.X, self.y = X, y

    def value(self, w, lam):
        r = self.X @ w - self.y
        return float(np.dot(r, r))

    def grad_w(self, w, lam):
        return 2.0 * (self.X.T @ (self.X @ w - self.y))

    def grad_lam(self, w, lam):
        return np.zeros_like(lam)


def _draw_task(rng, cfg, meta_mean):
    w_task = meta_mean + cfg.task_std * rng.standard_normal(cfg.d)
    X = rng.standard_normal((cfg.n_train, cfg.d)) / np.sqrt(cfg.n_train)
    y = X @ w_task + cfg.noise * rng.standard_normal(cfg.n_train) / np.sqrt(cfg.n_train)
    Xq = rng.standard_normal((cfg.n_val, cfg.d)) / np.sqrt(cfg.n_val)
    yq = Xq @ w_task + cfg.noise * rng.standard_normal(cfg.n_val) / np.sqrt(cfg.n_val)
    return {"X": X, "y": y, "Xq": Xq, "yq": yq, "w_task": w_task}


def _build(cfg, task, meta_mean, sampler):
    d = cfg.d
    N = d + int(cfg.learn_rho) + int(cfg.learn_step_size)
    lower = RidgeLower(task["X"], task["y"], d, cfg.learn_rho, cfg.rho)
    init = HyperSliceInit(0, d) if cfg.warm_start else ConstantInit(np.zeros(d))
    gamma_index = N - 1 if cfg.learn_step_size else None
    ts = GdTransition(lower, init, gamma=cfg.gamma, gamma_index=gamma_index)
    lam0 = np.zeros(N)
    if cfg.learn_rho:
        lam0[d] = np.log(cfg.rho)
    if cfg.learn_step_size:
        lam0[-1] = float(inv_softplus(cfg.gamma))
    return BilevelProblem(
        name="meta_ridge", lower=lower, upper=SquaredErrorUpper(task["Xq"], task["yq"]), transition=ts,
        M=d, N=N, T=cfg.T, init_lambda=lam0, sampler=sampler,
        data={"task": task, "meta_mean": meta_mean, "config": cfg})


def make_meta_ridge(cfg=None, **overrides):
    """Build the problem; the returned bundle is the fixed validation context.

    Unless ``fixed_task`` is set, its ``sampler`` draws a fresh task per call.
    """
    if cfg is None:
        cfg = MetaRidgeConfig(**overrides)
    elif overrides:
        cfg = MetaRidgeConfig(**{**cfg.__dict__, **overrides})
    setup = make_rng(cfg.seed)
    meta_mean = setup.standard_normal(cfg.d)
    val_task = _draw_task(setup, cfg, meta_mean)

    if cfg.fixed_task:
        return _build(cfg, val_task, meta_mean, None)

    def sampler(rng):
        return _build(cfg, _draw_task(rng, cfg, meta_mean), meta_mean, None)

    return _build(cfg, val_task, meta_mean, sampler)
