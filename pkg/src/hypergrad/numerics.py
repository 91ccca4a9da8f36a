"""Dense numerics: validation helpers, finite differences, CG and seeded RNGs.

Vectors and matrices are plain float64 numpy arrays.  Public entry points
check finiteness on the way in so a NaN never travels silently through an
unroll.
"""

from dataclasses import dataclass

import numpy as np

CG_BREAKDOWN_CURVATURE = 1e-14
DEFAULT_FD_STEP = 1e-5


class EvaluationError(ArithmeticError):
    """A function returned a non-finite value during finite differencing."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"non-finite function value {value!r} while perturbing coordinate {index}")


class CGBreakdown(ArithmeticError):
    """CG met non-positive curvature or a non-finite iterate."""

    def __init__(self, iteration, curvature):
        self.iteration = iteration
        self.curvature = curvature
        super().__init__(
            f"conjugate gradient breakdown at iteration {iteration} "
            f"(direction curvature {curvature:.3e}); operator is not positive definite"
        )


class DimensionError(ValueError):
    pass


def as_vector(x, name="vector", size=None):
    """Return ``x`` as a finite 1-D float64 array (copying only if needed)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DimensionError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def dot(a, b):
    return float(np.dot(a, b))


def norm(a):
    return float(np.sqrt(np.dot(a, a)))


def fd_gradient(func, x, step=None):
    """Central-difference gradient of a scalar function.

    With ``step=None`` coordinate ``i`` uses ``1e-5 * (1 + |x_i|)``; a scalar
    ``step`` is used unscaled for every coordinate.
    """
    x = as_vector(x, "x")
    if step is None:
        steps = DEFAULT_FD_STEP * (1.0 + np.abs(x))
    else:
        if step <= 0:
            raise ValueError("finite-difference step must be positive")
        steps = np.full(x.shape, float(step))
    grad = np.empty_like(x)
    xp = x.copy()
    for i in range(x.shape[0]):
        h = steps[i]
        xp[i] = x[i] + h
        fp = float(func(xp))
        xp[i] = x[i] - h
        fm = float(func(xp))
        xp[i] = x[i]
        if not np.isfinite(fp):
            raise EvaluationError(i, fp)
        if not np.isfinite(fm):
            raise EvaluationError(i, fm)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class CGResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def cg_solve(hvp, b, max_iters, tol=1e-10):
    """Solve ``H x = b`` for a symmetric positive definite operator ``hvp``.

    Stops once the residual norm is at most ``tol``.  Hitting ``max_iters``
    is not an error: the result comes back with ``converged=False``.
    """
    b = as_vector(b, "b")
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = dot(r, r)
    if np.sqrt(rr) <= tol:
        return CGResult(x, float(np.sqrt(rr)), 0, True)
    it = 0
    for it in range(1, max_iters + 1):
        Hp = np.asarray(hvp(p), dtype=np.float64)
        pHp = dot(p, Hp)
        curvature = pHp / dot(p, p)
        if not np.isfinite(curvature) or curvature <= CG_BREAKDOWN_CURVATURE:
            raise CGBreakdown(it, curvature)
        a = rr / pHp
        x = x + a * p
        r = r - a * Hp
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
            raise CGBreakdown(it, curvature)
        rr_new = dot(r, r)
        if np.sqrt(rr_new) <= tol:
            return CGResult(x, float(np.sqrt(rr_new)), it, True)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x, float(np.sqrt(rr)), it, False)


def make_rng(seed, trial=None):
    """PCG64 generator for ``seed``; ``trial`` selects an independent sub-stream."""
    if trial is None:
        ss = np.random.SeedSequence(int(seed))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.PCG64(ss))


def softplus(x):
    """Branch-free stable softplus: log1p(exp(-|x|)) + max(x, 0)."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_prime(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))
