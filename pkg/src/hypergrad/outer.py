"""Hyper-iteration driver: update ``lam`` with any engine's hypergradient estimate."""

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics
from .engines import EngineConfig, compute, full_rmd, unrolled_upper
from .numerics import norm


class OuterLoopError(RuntimeError):
    """An engine failed inside the outer loop; ``iteration`` says where."""

    def __init__(self, iteration, cause):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"hyper-iteration {iteration}: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class OuterConfig:
    optimizer: str = "gd"
    eta0: float = 0.1
    schedule: str = "decay_sqrt"
    iters: int = 100
    normalize_first_update: Optional[float] = None
    early_stop_patience: Optional[int] = None
    record_full_gradient_every: Optional[int] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")
        if self.schedule not in ("decay_sqrt", "constant"):
            raise ValueError(f"schedule must be 'decay_sqrt' or 'constant', got {self.schedule!r}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.normalize_first_update is not None and not self.normalize_first_update > 0:
            raise ValueError("normalize_first_update target norm must be positive")


def step_size(tau, eta0, schedule):
    if tau < 1:
        raise ValueError("hyper-iteration index starts at 1")
    if schedule == "decay_sqrt":
        return eta0 / math.sqrt(tau)
    return eta0


class Adam:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def direction(self, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class IterRecord:
    iter: int
    lam: np.ndarray
    f_value: float
    grad_est_norm: float
    step_norm: float
    wallclock_s: float
    true_grad_norm: Optional[float] = None
    bias: Optional[float] = None
    cosine: object = None
    descent_ratio: object = None

    def lam_hash(self):
        return hashlib.sha256(np.ascontiguousarray(self.lam).tobytes()).hexdigest()[:16]


@dataclass
class OptTrace:
    records: list = field(default_factory=list)
    final_lambda: Optional[np.ndarray] = None
    eta0_used: Optional[float] = None
    peak_states_stored: int = 0
    stopped_early: bool = False
    wallclock_s: float = 0.0

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    @property
    def last_true_grad_norm(self):
        vals = [r.true_grad_norm for r in self.records if r.true_grad_norm is not None]
        return vals[-1] if vals else None


def optimize(problem, engine, outer, rng=None, T=None, lam0=None, callback=None):
    """Run ``outer.iters`` hyper-iterations of ``lam <- lam - eta_tau * direction``.

    ``engine`` is an :class:`EngineConfig`; ``T`` defaults to ``problem.T``.
    Stochastic problems draw one context per iteration from ``rng``.
    """
    T = problem.T if T is None else T
    engine = engine if isinstance(engine, EngineConfig) else EngineConfig(**engine)
    lam = problem.default_lambda() if lam0 is None else np.array(lam0, dtype=np.float64)
    lam = problem.check_lambda(lam).copy()
    adam = Adam(problem.N, outer.adam_beta1, outer.adam_beta2, outer.adam_eps) if outer.optimizer == "adam" else None
    eta0 = outer.eta0
    best, since_best = math.inf, 0
    trace = OptTrace()
    run_start = time.perf_counter()
    for tau in range(1, outer.iters + 1):
        t0 = time.perf_counter()
        inst = problem.instance(rng)
        try:
            res = compute(inst, lam, T, engine)
        except (ArithmeticError, ValueError, MemoryError) as exc:
            raise OuterLoopError(tau, exc) from exc
        trace.peak_states_stored = max(trace.peak_states_stored, res.peak_states_stored)
        h = res.gradient
        direction = adam.direction(h) if adam is not None else h
        if tau == 1 and outer.normalize_first_update is not None:
            first = step_size(1, 1.0, outer.schedule) * norm(direction)
            if first > 0:
                eta0 = outer.normalize_first_update / first
        eta = step_size(tau, eta0, outer.schedule)
        record = IterRecord(iter=tau, lam=lam.copy(), f_value=res.upper_value, grad_est_norm=norm(h),
                            step_norm=eta * norm(direction), wallclock_s=0.0)
        every = outer.record_full_gradient_every
        if every and (tau == 1 or tau % every == 0 or tau == outer.iters):
            try:
                exact = h if engine.mode in ("full_rmd", "fmd", "checkpointed_rmd") else \
                    full_rmd(inst, lam, T).gradient
            except (ArithmeticError, ValueError) as exc:
                raise OuterLoopError(tau, exc) from exc
            record.true_grad_norm = norm(exact)
            record.bias = norm(h - exact)
            record.cosine = diagnostics.cosine_similarity(h, exact)
            record.descent_ratio = diagnostics.descent_ratio(h, exact)
        lam = lam - eta * direction
        record.wallclock_s = time.perf_counter() - t0
        trace.records.append(record)
        if callback is not None:
            callback(record)
        if outer.early_stop_patience:
            metric = res.upper_value if not problem.stochastic else unrolled_upper(problem, record.lam, T)
            if metric < best:
                best, since_best = metric, 0
            else:
                since_best += 1
                if since_best >= outer.early_stop_patience:
                    trace.stopped_early = True
                    break
    trace.final_lambda = lam
    trace.eta0_used = eta0
    trace.wallclock_s = time.perf_counter() - run_start
    return trace
