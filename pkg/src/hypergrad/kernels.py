"""Linear-softmax kernels shared by the classification problems.

Every kernel exists twice: a vectorised numpy version and an explicit-loop
numba version.  The numba path is used when numba imports and the
``HYPERGRAD_DISABLE_NUMBA`` environment variable is unset (or "0").  Both paths
are always importable through :data:`NUMPY_KERNELS` and :data:`NUMBA_KERNELS`
so they can be compared and benchmarked side by side.

Shapes: ``X`` is ``(n, p)`` with the bias column already appended, ``W`` and
``V`` are ``(k, p)`` weight matrices, ``P`` is the ``(n, k)`` softmax output and
``labels`` holds ``n`` integer class ids.
"""

import os
import warnings

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def _flag_disabled():
    return os.environ.get("HYPERGRAD_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------- numpy path


def softmax_probs_np(X, W):
    Z = X @ W.T
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def ce_values_np(P, labels):
    return -np.log(P[np.arange(P.shape[0]), labels])


def _residual_np(P, labels):
    R = P.copy()
    R[np.arange(P.shape[0]), labels] -= 1.0
    return R


def weighted_ce_grad_np(X, P, labels, weights):
    """sum_i weights[i] * (p_i - y_i) x_i^T"""
    R = _residual_np(P, labels)
    return (R * weights[:, None]).T @ X


def weighted_ce_hvp_np(X, P, weights, V):
    """sum_i weights[i] * (diag(p_i) - p_i p_i^T) V x_i x_i^T"""
    U = X @ V.T
    S = P * U
    S -= P * S.sum(axis=1, keepdims=True)
    return (S * weights[:, None]).T @ X


def ce_grad_inner_np(X, P, labels, V):
    """Per-example <grad_W CE_i, V> = (p_i - y_i)^T V x_i."""
    R = _residual_np(P, labels)
    return np.einsum("ik,ik->i", R, X @ V.T)


NUMPY_KERNELS = {
    "softmax_probs": softmax_probs_np,
    "ce_values": ce_values_np,
    "weighted_ce_grad": weighted_ce_grad_np,
    "weighted_ce_hvp": weighted_ce_hvp_np,
    "ce_grad_inner": ce_grad_inner_np,
}


# ---------------------------------------------------------------- numba path

if _HAVE_NUMBA:
    _njit = numba.njit(cache=True, nogil=True)

    @_njit
    def softmax_probs_nb(X, W):
        n, p = X.shape
        k = W.shape[0]
        P = np.empty((n, k))
        for i in range(n):
            zmax = -np.inf
            for c in range(k):
                z = 0.0
                for j in range(p):
                    z += W[c, j] * X[i, j]
                P[i, c] = z
                if z > zmax:
                    zmax = z
            s = 0.0
            for c in range(k):
                e = np.exp(P[i, c] - zmax)
                P[i, c] = e
                s += e
            for c in range(k):
                P[i, c] /= s
        return P

    @_njit
    def ce_values_nb(P, labels):
        n = P.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = -np.log(P[i, labels[i]])
        return out

    @_njit
    def weighted_ce_grad_nb(X, P, labels, weights):
        n, p = X.shape
        k = P.shape[1]
        G = np.zeros((k, p))
        for i in range(n):
            wi = weights[i]
            if wi == 0.0:
                continue
            for c in range(k):
                r = P[i, c]
                if c == labels[i]:
                    r -= 1.0
                r *= wi
                for j in range(p):
                    G[c, j] += r * X[i, j]
        return G

    @_njit
    def weighted_ce_hvp_nb(X, P, weights, V):
        n, p = X.shape
        k = P.shape[1]
        H = np.zeros((k, p))
        u = np.empty(k)
        for i in range(n):
            wi = weights[i]
            if wi == 0.0:
                continue
            pu = 0.0
            for c in range(k):
                z = 0.0
                for j in range(p):
                    z += V[c, j] * X[i, j]
                u[c] = z
                pu += P[i, c] * z
            for c in range(k):
                s = wi * P[i, c] * (u[c] - pu)
                for j in range(p):
                    H[c, j] += s * X[i, j]
        return H

    @_njit
    def ce_grad_inner_nb(X, P, labels, V):
        n, p = X.shape
        k = P.shape[1]
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for c in range(k):
                r = P[i, c]
                if c == labels[i]:
                    r -= 1.0
                z = 0.0
                for j in range(p):
                    z += V[c, j] * X[i, j]
                acc += r * z
            out[i] = acc
        return out

    NUMBA_KERNELS = {
        "softmax_probs": softmax_probs_nb,
        "ce_values": ce_values_nb,
        "weighted_ce_grad": weighted_ce_grad_nb,
        "weighted_ce_hvp": weighted_ce_hvp_nb,
        "ce_grad_inner": ce_grad_inner_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}


USE_NUMBA = _HAVE_NUMBA and not _flag_disabled()
if not _HAVE_NUMBA and not _flag_disabled():  # pragma: no cover
    warnings.warn("numba could not be imported; using the numpy kernels")

_active = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS

softmax_probs = _active["softmax_probs"]
ce_values = _active["ce_values"]
weighted_ce_grad = _active["weighted_ce_grad"]
weighted_ce_hvp = _active["weighted_ce_hvp"]
ce_grad_inner = _active["ce_grad_inner"]


def backend():
    """Name of the kernel backend selected at import time."""
    return "numba" if USE_NUMBA else "numpy"
