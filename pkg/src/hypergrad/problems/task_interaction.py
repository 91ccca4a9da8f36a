"""Multitask linear classifiers coupled by a learned task-similarity matrix.

    g(w, {B, nu}) = sum_v CE_v(w_v) + sum_{i,j} C_ij ||w_i - w_j||^2 + rho sum_v ||w_v||^2
    C = A + A^T,  A_ij = softplus(B_ij),  rho = softplus(nu)

``CE_v`` is the mean training cross-entropy of task ``v``.  The hyperparameter
vector is ``[vec(B) (row-major, V*V), nu]``.  The upper objective is the
validation cross-entropy averaged over tasks.
"""

import numpy as np

from ..dynamics import ConstantInit, GdTransition, LowerObjective, UpperObjective
from ..numerics import inv_softplus, sigmoid, softplus
from .base import BilevelProblem
from .datasets import LabeledDataset, gaussian_blobs
from .softmax import LinearSoftmax, add_bias


class _TaskBlocks:
    def __init__(self, datasets):
        self.models = [LinearSoftmax(add_bias(ds.features), ds.labels, ds.classes) for ds in datasets]
        self.V = len(self.models)
        self.block = self.models[0].size
        self.weights = [np.full(m.n, 1.0 / m.n) for m in self.models]

    def split(self, w):
        return w.reshape(self.V, self.block)


class TaskInteractionLower(LowerObjective):
    def __init__(self, datasets):
        self.tasks = _TaskBlocks(datasets)
        self.V = self.tasks.V

    def _unpack(self, lam):
        V = self.V
        Bm = lam[:V * V].reshape(V, V)
        A = softplus(Bm)
        C = A + A.T
        return Bm, C, float(softplus(lam[-1]))

    def value(self, w, lam):
        _, C, rho = self._unpack(lam)
        W = self.tasks.split(w)
        out = sum(float(np.mean(m.losses(W[v]))) for v, m in enumerate(self.tasks.models))
        diff = W[:, None, :] - W[None, :, :]
        out += float(np.sum(C * np.einsum("ijk,ijk->ij", diff, diff)))
        return out + rho * float(np.dot(w, w))

    def _coupling(self, C, U):
        # 4 sum_j C_vj (u_v - u_j), symmetric C
        return 4.0 * (C.sum(axis=1)[:, None] * U - C @ U)

    def grad_w(self, w, lam):
        _, C, rho = self._unpack(lam)
        W = self.tasks.split(w)
        G = np.array([m.grad(W[v], self.tasks.weights[v]) for v, m in enumerate(self.tasks.models)])
        G += self._coupling(C, W) + 2.0 * rho * W
        return G.ravel()

    def hvp(self, w, lam, u):
        _, C, rho = self._unpack(lam)
        W, U = self.tasks.split(w), self.tasks.split(u)
        H = np.array([m.hvp(W[v], self.tasks.weights[v], U[v]) for v, m in enumerate(self.tasks.models)])
        H += self._coupling(C, U) + 2.0 * rho * U
        return H.ravel()

    def mixed_adjoint(self, w, lam, u):
        Bm, _, _ = self._unpack(lam)
        W, U = self.tasks.split(w), self.tasks.split(u)
        dW = W[:, None, :] - W[None, :, :]
        dU = U[:, None, :] - U[None, :, :]
        out = np.empty(lam.shape[0])
        out[:-1] = (4.0 * sigmoid(Bm) * np.einsum("ijk,ijk->ij", dW, dU)).ravel()
        out[-1] = 2.0 * float(sigmoid(lam[-1])) * float(np.dot(w, u))
        return out

    def mixed_tangent(self, w, lam, e):
        V = self.V
        Bm, _, _ = self._unpack(lam)
        W = self.tasks.split(w)
        S = 4.0 * sigmoid(Bm) * e[:V * V].reshape(V, V)
        S = S + S.T
        out = S.sum(axis=1)[:, None] * W - S @ W
        out += 2.0 * float(sigmoid(lam[-1])) * e[-1] * W
        return out.ravel()

    def coupling_matrix(self, lam):
        return self._unpack(lam)[1]


class TaskValidationUpper(UpperObjective):
    def __init__(self, datasets):
        self.tasks = _TaskBlocks(datasets)

    def value(self, w, lam):
        W = self.tasks.split(w)
        return float(np.mean([np.mean(m.losses(W[v])) for v, m in enumerate(self.tasks.models)]))

    def grad_w(self, w, lam):
        W = self.tasks.split(w)
        V = self.tasks.V
        return np.concatenate([m.grad(W[v], self.tasks.weights[v] / V)
                               for v, m in enumerate(self.tasks.models)])

    def grad_lam(self, w, lam):
        return np.zeros_like(lam)

    def accuracy(self, w):
        W = self.tasks.split(w)
        return float(np.mean([m.accuracy(W[v]) for v, m in enumerate(self.tasks.models)]))


def default_lambda(V, coupling_init=0.0, rho_init=0.1):
    """``B`` filled with ``coupling_init`` and ``nu = softplus^{-1}(rho_init)``."""
    lam = np.full(V * V + 1, float(coupling_init))
    lam[-1] = float(inv_softplus(rho_init))
    return lam


def make_task_interaction(task_datasets, val_datasets, gamma=0.1, T=100, coupling_init=0.0, rho_init=0.1):
    V = len(task_datasets)
    if V < 2:
        raise ValueError("task interaction needs at least two tasks")
    if len(val_datasets) != V:
        raise ValueError("need one validation set per task")
    dims = {(ds.d, ds.classes) for ds in list(task_datasets) + list(val_datasets)}
    if len(dims) != 1:
        raise ValueError(f"tasks disagree on (feature dimension, classes): {sorted(dims)}")
    lower = TaskInteractionLower(task_datasets)
    upper = TaskValidationUpper(val_datasets)
    M = V * lower.tasks.block
    N = V * V + 1
    ts = GdTransition(lower, ConstantInit(np.zeros(M)), gamma=gamma)
    return BilevelProblem(
        name="task_interaction", lower=lower, upper=upper, transition=ts, M=M, N=N, T=T,
        init_lambda=default_lambda(V, coupling_init, rho_init),
        data={"train": list(task_datasets), "val": list(val_datasets)})


def gen_task_family(rng, V, d, classes, n_train, n_val, task_shift=0.5, separation=2.0, groups=None):
    """Synthetic related tasks: per-group class means plus a small per-task shift.

    ``groups`` assigns each task to a cluster (default: all tasks in one
    cluster); tasks in the same cluster share base class means.
    """
    groups = list(range(V)) if groups == "distinct" else (groups or [0] * V)
    bases = {g: separation * rng.standard_normal((classes, d)) for g in sorted(set(groups))}
    train, val = [], []
    for v in range(V):
        means = bases[groups[v]] + task_shift * rng.standard_normal((classes, d))
        Xt, yt, _ = gaussian_blobs(rng, n_train, d, classes, means=means)
        Xv, yv, _ = gaussian_blobs(rng, n_val, d, classes, means=means)
        train.append(LabeledDataset(Xt, yt, classes))
        val.append(LabeledDataset(Xv, yv, classes))
    return train, val
