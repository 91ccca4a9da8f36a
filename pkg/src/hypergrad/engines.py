"""Hypergradient engines.

All engines share the signature ``engine(problem, lam, T, ...)`` and return a
:class:`HypergradResult`.  The reverse recursion is

    alpha_T = grad_w f(w_T),  h_T = grad_lam f
    h_{t-1} = h_t + B_t alpha_t,  alpha_{t-1} = A_t alpha_t

with ``B_t``/``A_t`` evaluated at ``w_{t-1}`` and ``B_0`` supplied by the
transition's initial condition.  Truncating after ``K`` terms gives
``h_{T-K}``; ``K = T + 1`` keeps every term including ``B_0``.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ADJOINT, TANGENT, DivergenceError, StateStore, StoragePolicy, run_segment, unroll
from .numerics import cg_solve, norm

MODES = ("full_rmd", "k_rmd", "checkpointed_rmd", "fmd", "implicit_cg", "neumann")
DEFAULT_FMD_CAP = 10_000_000


class CapacityError(MemoryError):
    def __init__(self, entries, cap):
        self.entries = entries
        self.cap = cap
        super().__init__(
            f"forward mode needs N*M = {entries} tangent entries, which exceeds fmd_cap={cap}")


@dataclass
class HypergradResult:
    gradient: np.ndarray
    upper_value: float
    solution: np.ndarray
    mode: str
    K: Optional[int]
    peak_states_stored: int
    wallclock: float
    backward_seconds: float = 0.0
    forward_steps: int = 0
    extra: dict = field(default_factory=dict)


def _upper_terms(problem, w_T, lam):
    up = problem.upper
    return up.value(w_T, lam), up.grad_w(w_T, lam), np.array(up.grad_lam(w_T, lam), dtype=np.float64)


def _reverse(ts, lam, state_of, T, K, alpha, h):
    """Accumulate ``K`` reverse terms starting from ``t = T``; returns ``h``."""
    stop = T - K
    for t in range(T, stop, -1):
        if t == 0:
            h = h + ts.init_hyper_adjoint(lam, alpha)
            break
        w_prev = state_of(t - 1)
        h = h + ts.hyper_product(t - 1, w_prev, lam, alpha, ADJOINT)
        if t - 1 > stop:
            alpha = ts.state_product(t - 1, w_prev, lam, alpha, ADJOINT)
    return h


def full_rmd(problem, lam, T):
    """Exact hypergradient by reverse mode over a fully stored trajectory."""
    return _truncated(problem, lam, T, T + 1, "full_rmd")


def k_rmd(problem, lam, T, K):
    """``K``-step truncated back-propagation; keeps only the last ``K + 1`` states."""
    if not 1 <= K <= T + 1:
        raise ValueError(f"K must satisfy 1 <= K <= T+1 = {T + 1}, got K={K}")
    return _truncated(problem, lam, T, K, "k_rmd")


def _truncated(problem, lam, T, K, mode):
    start = time.perf_counter()
    lam = problem.check_lambda(lam)
    ts = problem.transition
    policy = StoragePolicy.full() if mode == "full_rmd" else StoragePolicy.window(K)
    traj = unroll(ts, lam, T, policy)
    value, alpha, h = _upper_terms(problem, traj.final, lam)
    back = time.perf_counter()
    h = _reverse(ts, lam, traj.state, T, K, alpha, h)
    end = time.perf_counter()
    return HypergradResult(
        gradient=h, upper_value=float(value), solution=traj.final, mode=mode,
        K=K if mode == "k_rmd" else None, peak_states_stored=traj.peak_states_stored,
        wallclock=end - start, backward_seconds=end - back, forward_steps=traj.forward_steps)


def checkpointed_rmd(problem, lam, T, interval=None):
    """Exact reverse mode storing every ``interval``-th state and recomputing segments.

    ``interval`` defaults to ``ceil(sqrt(T))``.
    """
    if interval is None:
        interval = max(1, math.ceil(math.sqrt(T)))
    if not 1 <= interval <= max(T, 1):
        raise ValueError(f"checkpoint interval must satisfy 1 <= interval <= T, got {interval}")
    start = time.perf_counter()
    lam = problem.check_lambda(lam)
    ts = problem.transition
    traj = unroll(ts, lam, T, StoragePolicy.checkpoint(interval))
    store = traj.store
    value, alpha, h = _upper_terms(problem, traj.final, lam)
    back = time.perf_counter()
    if T % interval:
        store.drop(T)
    steps = traj.forward_steps
    seg_start = ((T - 1) // interval) * interval if T > 0 else 0
    for s in range(seg_start, -1, -interval):
        end = min(s + interval, T)
        seg = run_segment(ts, lam, store.get(s), s, end - 1)
        steps += len(seg) - 1
        for offset, w in enumerate(seg[1:], start=1):
            store.put(s + offset, w)
        h, alpha = _reverse_segment(ts, lam, store.get, end, s, alpha, h)
        for t in range(s, end):
            store.drop(t)
    h = h + ts.init_hyper_adjoint(lam, alpha)
    stop = time.perf_counter()
    return HypergradResult(
        gradient=h, upper_value=float(value), solution=traj.final, mode="checkpointed_rmd",
        K=None, peak_states_stored=store.peak, wallclock=stop - start,
        backward_seconds=stop - back, forward_steps=steps,
        extra={"interval": interval})


def _reverse_segment(ts, lam, state_of, t_hi, t_lo, alpha, h):
    for t in range(t_hi, t_lo, -1):
        w_prev = state_of(t - 1)
        h = h + ts.hyper_product(t - 1, w_prev, lam, alpha, ADJOINT)
        alpha = ts.state_product(t - 1, w_prev, lam, alpha, ADJOINT)
    return h, alpha


def fmd(problem, lam, T, fmd_cap=DEFAULT_FMD_CAP):
    """Exact hypergradient by forward propagation of the ``N x M`` tangent matrix."""
    lam = problem.check_lambda(lam)
    N, M = problem.N, problem.M
    if N * M > fmd_cap:
        raise CapacityError(N * M, fmd_cap)
    start = time.perf_counter()
    ts = problem.transition
    eye = np.eye(N)
    store = StateStore()
    w = np.asarray(ts.init(lam), dtype=np.float64)
    store.put(0, w)
    Z = np.array([ts.init_hyper_tangent(lam, eye[i]) for i in range(N)]).reshape(N, M)
    for t in range(T):
        Bt = ts.hyper_tangent_matrix(t, w, lam)
        Z = np.array([ts.state_product(t, w, lam, Z[i], TANGENT) for i in range(N)]).reshape(N, M) + Bt
        w_next = ts.step(t, w, lam)
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError(t + 1)
        store.put(t + 1, w_next)
        store.drop(t)
        w = w_next
    value, gw, gl = _upper_terms(problem, w, lam)
    grad = Z @ gw + gl
    end = time.perf_counter()
    return HypergradResult(
        gradient=grad, upper_value=float(value), solution=w, mode="fmd", K=None,
        peak_states_stored=store.peak, wallclock=end - start, forward_steps=T)


def implicit_cg(problem, lam, T, cg_iters, tol=1e-10):
    """Implicit-function estimate at ``w_T`` with the inverse Hessian applied by CG.

    Raises :class:`hypergrad.numerics.CGBreakdown` when the lower Hessian is
    not positive definite at ``w_T``.
    """
    start = time.perf_counter()
    lam = problem.check_lambda(lam)
    traj = unroll(problem.transition, lam, T, StoragePolicy.window(1))
    w_T = traj.final
    value, gw, gl = _upper_terms(problem, w_T, lam)
    back = time.perf_counter()
    lower = problem.lower
    sol = cg_solve(lambda v: lower.hvp(w_T, lam, v), gw, cg_iters, tol)
    grad = gl - lower.mixed_adjoint(w_T, lam, sol.x)
    end = time.perf_counter()
    return HypergradResult(
        gradient=grad, upper_value=float(value), solution=w_T, mode="implicit_cg", K=cg_iters,
        peak_states_stored=traj.peak_states_stored, wallclock=end - start,
        backward_seconds=end - back, forward_steps=T,
        extra={"cg_residual": sol.residual_norm, "cg_iterations": sol.iterations,
               "cg_converged": sol.converged})


def neumann_k(problem, lam, T, K):
    """Order-``K`` Neumann estimate with both derivative maps frozen at ``w_T``."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    start = time.perf_counter()
    lam = problem.check_lambda(lam)
    ts = problem.transition
    traj = unroll(ts, lam, T, StoragePolicy.window(1))
    w_T = traj.final
    value, gw, gl = _upper_terms(problem, w_T, lam)
    back = time.perf_counter()
    acc = gw.copy()
    v = gw
    for _ in range(K - 1):
        v = ts.state_product(T, w_T, lam, v, ADJOINT)
        acc = acc + v
    grad = gl + ts.hyper_product(T, w_T, lam, acc, ADJOINT)
    end = time.perf_counter()
    return HypergradResult(
        gradient=grad, upper_value=float(value), solution=w_T, mode="neumann", K=K,
        peak_states_stored=traj.peak_states_stored, wallclock=end - start,
        backward_seconds=end - back, forward_steps=T)


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "full_rmd"
    K: Optional[int] = None
    cg_iters: int = 50
    cg_tol: float = 1e-10
    checkpoint_interval: Optional[int] = None
    fmd_cap: int = DEFAULT_FMD_CAP

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown engine mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ("k_rmd", "neumann") and (self.K is None or self.K < 1):
            raise ValueError(f"engine mode {self.mode} needs K >= 1")


def compute(problem, lam, T, config):
    """Dispatch to the engine named by ``config.mode``."""
    mode = config.mode
    if mode == "full_rmd":
        return full_rmd(problem, lam, T)
    if mode == "k_rmd":
        return k_rmd(problem, lam, T, min(config.K, T + 1))
    if mode == "checkpointed_rmd":
        return checkpointed_rmd(problem, lam, T, config.checkpoint_interval)
    if mode == "fmd":
        return fmd(problem, lam, T, config.fmd_cap)
    if mode == "implicit_cg":
        return implicit_cg(problem, lam, T, config.cg_iters, config.cg_tol)
    return neumann_k(problem, lam, T, config.K)


def unrolled_upper(problem, lam, T):
    """Scalar map ``lam -> f(w_T(lam), lam)``; the finite-difference oracle's target."""
    lam = np.asarray(lam, dtype=np.float64)
    traj = unroll(problem.transition, lam, T, StoragePolicy.window(1))
    return float(problem.upper.value(traj.final, lam))


def gradient_norm(result):
    return norm(result.gradient)
