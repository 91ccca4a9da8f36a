"""Bias, bias bounds, descent ratio, cosine similarity, relative error and F1."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ADJOINT, StoragePolicy, unroll
from .engines import full_rmd, k_rmd
from .numerics import norm


class _Undefined:
    """Marker for ratios whose reference vector has zero norm."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "undefined"

    __str__ = __repr__

    def __bool__(self):
        return False


UNDEFINED = _Undefined()


def descent_ratio(h, d):
    """``<h, d> / ||d||^2``; :data:`UNDEFINED` when ``d = 0``."""
    dd = float(np.dot(d, d))
    if dd == 0.0:
        return UNDEFINED
    return float(np.dot(h, d)) / dd


def cosine_similarity(h, d):
    nh, nd = norm(h), norm(d)
    if nh == 0.0 or nd == 0.0:
        return UNDEFINED
    return max(-1.0, min(1.0, float(np.dot(h, d)) / (nh * nd)))


def rel_error(h, d):
    nd = norm(d)
    if nd == 0.0:
        return UNDEFINED
    return norm(np.asarray(h) - np.asarray(d)) / nd


def convex_bound(K, gamma, alpha, grad_norm, m_b):
    """``(1 - gamma alpha)^K / (gamma alpha) * ||grad_w f|| * M_B``."""
    return (1.0 - gamma * alpha) ** K / (gamma * alpha) * grad_norm * m_b


def nonconvex_bound(K, T, gamma, alpha, grad_norm, m_b):
    """``2^(T-K+1) (1 - gamma alpha)^K ||grad_w f|| M_B``."""
    return 2.0 ** (T - K + 1) * (1.0 - gamma * alpha) ** K * grad_norm * m_b


def estimate_m_b(problem, lam, T, K, probes=4, seed=0):
    """Largest observed ``||B_t v|| / ||v||`` over ``t = 0..T-K`` and random probes."""
    ts = problem.transition
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((probes, problem.M))
    traj = unroll(ts, lam, T, StoragePolicy.window(1) if T - K < 0 else StoragePolicy.full())
    best = 0.0
    for v in V:
        best = max(best, norm(ts.init_hyper_adjoint(lam, v)) / norm(v))
        for t in range(1, T - K + 1):
            best = max(best, norm(ts.hyper_product(t - 1, traj.state(t - 1), lam, v, ADJOINT)) / norm(v))
    return best


@dataclass
class DiagnosticsRecord:
    bias: float
    bound_convex: Optional[float] = None
    bound_nonconvex: Optional[float] = None
    descent_ratio: object = None
    cosine: object = None
    rel_error: object = None


def bias_and_bounds(problem, lam, T, K):
    """Bias of ``K``-step truncation against the exact hypergradient, with both bounds.

    Bounds are ``None`` when the lower objective has no strong-convexity
    constant.  ``M_B`` comes from the objective metadata when set, otherwise
    from :func:`estimate_m_b`.
    """
    exact = full_rmd(problem, lam, T)
    approx = k_rmd(problem, lam, T, K)
    h, d = approx.gradient, exact.gradient
    rec = DiagnosticsRecord(bias=norm(h - d), descent_ratio=descent_ratio(h, d),
                            cosine=cosine_similarity(h, d), rel_error=rel_error(h, d))
    alpha = problem.lower.alpha
    if alpha is not None:
        gamma = problem.transition.step_size(np.asarray(lam, dtype=np.float64))
        gnorm = norm(problem.upper.grad_w(exact.solution, lam))
        m_b = problem.lower.m_b
        if m_b is None:
            m_b = estimate_m_b(problem, np.asarray(lam, dtype=np.float64), T, K)
        rec.bound_convex = convex_bound(K, gamma, alpha, gnorm, m_b)
        rec.bound_nonconvex = nonconvex_bound(K, T, gamma, alpha, gnorm, m_b)
    return rec


def f1_hypercleaner(lam, mask, threshold=-3.0):
    """F1 of flagging ``lam_i < threshold`` as corrupted against the corruption mask.

    Zero when precision and recall are both undefined or zero.
    """
    lam = np.asarray(lam)
    mask = np.asarray(mask, dtype=bool)
    if lam.shape != mask.shape:
        raise ValueError(f"lambda has {lam.shape[0]} entries but the mask has {mask.shape[0]}")
    pred = lam < threshold
    tp = int(np.sum(pred & mask))
    fp = int(np.sum(pred & ~mask))
    fn = int(np.sum(~pred & mask))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def smallest_k_below(biases, eps):
    """1-based index of the first entry of ``biases`` that is ``<= eps`` (``math.inf`` if none)."""
    for i, b in enumerate(biases, start=1):
        if b <= eps:
            return i
    return math.inf
