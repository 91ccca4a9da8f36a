"""Lower-level dynamics: objectives, the gradient-descent transition, unrolling.

Derivative maps follow the "gradient index first" layout: for a transition
``w_{t+1} = step(t, w_t, lam)`` the state map ``A_{t+1}`` is the transpose of
the usual Jacobian and the hyper map ``B_{t+1}`` is ``N x M``.  Consequently

* ``state_product(..., "adjoint")`` applies ``A v``  (a vector-Jacobian product),
* ``state_product(..., "tangent")`` applies ``A^T v`` (a Jacobian-vector product),
* ``hyper_product(..., "adjoint")`` maps ``v in R^M`` to ``B v in R^N``,
* ``hyper_product(..., "tangent")`` maps ``e in R^N`` to ``B^T e in R^M``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError, as_vector, sigmoid, softplus

ADJOINT = "adjoint"
TANGENT = "tangent"
_DIRECTIONS = (ADJOINT, TANGENT)


class DivergenceError(ArithmeticError):
    """The lower-level iterate became non-finite."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"lower-level iterate diverged (non-finite state) at step t={t}")


class LowerObjective:
    """Interface for ``g(w, lam)`` and its derivative products.

    Subclasses implement the five methods below.  ``alpha``/``beta`` are the
    strong-convexity and smoothness constants when known, ``m_b`` an optional
    constant bound on the hyper map norm used by the bias bounds.
    """

    alpha = None
    beta = None
    m_b = None

    def value(self, w, lam):
        raise NotImplementedError

    def grad_w(self, w, lam):
        raise NotImplementedError

    def hvp(self, w, lam, v):
        raise NotImplementedError

    def mixed_adjoint(self, w, lam, v):
        """``grad_{lam,w} g . v`` in R^N."""
        raise NotImplementedError

    def mixed_tangent(self, w, lam, e):
        """``(grad_{lam,w} g)^T e`` in R^M."""
        raise NotImplementedError

    def mixed_matrix(self, w, lam):
        """Dense ``grad_{lam,w} g`` (N x M); override when a batched form is cheap."""
        eye = np.eye(lam.shape[0])
        return np.array([self.mixed_tangent(w, lam, e) for e in eye]).reshape(lam.shape[0], w.shape[0])


class UpperObjective:
    def value(self, w, lam):
        raise NotImplementedError

    def grad_w(self, w, lam):
        raise NotImplementedError

    def grad_lam(self, w, lam):
        raise NotImplementedError


class ConstantInit:
    """``w_0`` independent of the hyperparameter, so ``B_0 = 0``."""

    def __init__(self, w0):
        self.w0 = as_vector(w0, "w0")

    def value(self, lam):
        return self.w0.copy()

    def adjoint(self, lam, v):
        return np.zeros(lam.shape[0])

    def tangent(self, lam, e):
        return np.zeros(self.w0.shape[0])


class HyperSliceInit:
    """Warm start ``w_0 = lam[start:start+M]``."""

    def __init__(self, start, size):
        self.start = int(start)
        self.size = int(size)

    def value(self, lam):
        return lam[self.start:self.start + self.size].copy()

    def adjoint(self, lam, v):
        out = np.zeros(lam.shape[0])
        out[self.start:self.start + self.size] = v
        return out

    def tangent(self, lam, e):
        return e[self.start:self.start + self.size].copy()


class GdTransition:
    """Gradient descent ``w - gamma(lam) * grad_w g(w, lam)`` as a transition system.

    The step size is either the fixed ``gamma`` or, when ``gamma_index`` is
    given, ``softplus(lam[gamma_index])``.
    """

    def __init__(self, objective, init, gamma=0.1, gamma_index=None):
        if gamma_index is None and not gamma > 0:
            raise ValueError("step size must be positive")
        self.objective = objective
        self.initial = init if hasattr(init, "value") else ConstantInit(init)
        self.gamma = float(gamma) if gamma is not None else None
        self.gamma_index = gamma_index

    def step_size(self, lam):
        if self.gamma_index is None:
            return self.gamma
        return float(softplus(lam[self.gamma_index]))

    def _gamma_grad_scale(self, lam):
        # d gamma / d lam[gamma_index]
        return float(sigmoid(lam[self.gamma_index]))

    def init(self, lam):
        return self.initial.value(lam)

    def init_hyper_adjoint(self, lam, v):
        return self.initial.adjoint(lam, v)

    def init_hyper_tangent(self, lam, e):
        return self.initial.tangent(lam, e)

    def step(self, t, w, lam):
        return w - self.step_size(lam) * self.objective.grad_w(w, lam)

    def state_product(self, t, w, lam, v, direction=ADJOINT):
        _check_direction(direction)
        if v.shape != w.shape:
            raise DimensionError(f"state product expects length {w.shape[0]}, got {v.shape}")
        # A is symmetric for gradient descent on a twice-differentiable g
        return v - self.step_size(lam) * self.objective.hvp(w, lam, v)

    def hyper_product(self, t, w, lam, v, direction=ADJOINT):
        _check_direction(direction)
        gamma = self.step_size(lam)
        if direction == ADJOINT:
            if v.shape != w.shape:
                raise DimensionError(f"hyper adjoint expects length {w.shape[0]}, got {v.shape}")
            out = -gamma * self.objective.mixed_adjoint(w, lam, v)
            if self.gamma_index is not None:
                out[self.gamma_index] -= self._gamma_grad_scale(lam) * float(
                    np.dot(self.objective.grad_w(w, lam), v))
            return out
        if v.shape != lam.shape:
            raise DimensionError(f"hyper tangent expects length {lam.shape[0]}, got {v.shape}")
        out = -gamma * self.objective.mixed_tangent(w, lam, v)
        if self.gamma_index is not None and v[self.gamma_index] != 0.0:
            out -= self._gamma_grad_scale(lam) * v[self.gamma_index] * self.objective.grad_w(w, lam)
        return out

    def hyper_tangent_matrix(self, t, w, lam):
        """Dense ``B_{t+1}`` (N x M), used by forward mode."""
        B = -self.step_size(lam) * self.objective.mixed_matrix(w, lam)
        if self.gamma_index is not None:
            B[self.gamma_index] -= self._gamma_grad_scale(lam) * self.objective.grad_w(w, lam)
        return B


def _check_direction(direction):
    if direction not in _DIRECTIONS:
        raise ValueError(f"direction must be one of {_DIRECTIONS}, got {direction!r}")


@dataclass(frozen=True)
class StoragePolicy:
    kind: str
    size: int = 0

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def window(cls, k):
        if k < 1:
            raise ValueError("window size must be >= 1")
        return cls("window", int(k))

    @classmethod
    def checkpoint(cls, interval):
        if interval < 1:
            raise ValueError("checkpoint interval must be >= 1")
        return cls("checkpoint", int(interval))

    def retain_bound(self, T):
        if self.kind == "full":
            return T + 1
        if self.kind == "window":
            return self.size + 1
        return math.ceil(T / self.size) + self.size + 1


class StateStore:
    """Dictionary of states keyed by step index that tracks its peak size."""

    def __init__(self):
        self._states = {}
        self.peak = 0

    def put(self, t, w):
        self._states[t] = w
        self.peak = max(self.peak, len(self._states))

    def drop(self, t):
        self._states.pop(t, None)

    def get(self, t):
        return self._states[t]

    def __contains__(self, t):
        return t in self._states

    def __len__(self):
        return len(self._states)

    def keys(self):
        return sorted(self._states)


@dataclass
class Trajectory:
    store: StateStore
    T: int
    policy: StoragePolicy
    final: np.ndarray
    forward_steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def peak_states_stored(self):
        return self.store.peak

    @property
    def states(self):
        return [self.store.get(t) for t in self.store.keys()]

    def state(self, t):
        return self.store.get(t)


def _checked(w, t):
    if not np.all(np.isfinite(w)):
        raise DivergenceError(t)
    return w


def unroll(ts, lam, T, policy=None):
    """Run ``T`` steps of the transition system from ``ts.init(lam)``.

    States are retained according to ``policy`` (full by default); the final
    state is always available as ``trajectory.final``.
    """
    if T < 0:
        raise ValueError("horizon T must be non-negative")
    policy = policy or StoragePolicy.full()
    store = StateStore()
    w = _checked(np.asarray(ts.init(lam), dtype=np.float64), 0)
    _retain(store, policy, 0, w, T)
    # overflow surfaces as DivergenceError, not as a floating-point warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            w = _checked(ts.step(t, w, lam), t + 1)
            _retain(store, policy, t + 1, w, T)
    return Trajectory(store=store, T=T, policy=policy, final=w, forward_steps=T)


def _retain(store, policy, t, w, T):
    if policy.kind == "full":
        store.put(t, w)
    elif policy.kind == "window":
        # drop first so the window never exceeds K+1 states
        store.drop(t - policy.size - 1)
        store.put(t, w)
    else:
        if t % policy.size == 0 or t == T:
            store.put(t, w)


def run_segment(ts, lam, w_start, t_start, t_end):
    """Recompute states ``w_{t_start} .. w_{t_end}`` from ``w_start``."""
    out = [w_start]
    w = w_start
    for t in range(t_start, t_end):
        w = _checked(ts.step(t, w, lam), t + 1)
        out.append(w)
    return out
