import numpy as np

from .. import kernels


def add_bias(features):
    features = np.asarray(features, dtype=np.float64)
    return np.ascontiguousarray(np.hstack([features, np.ones((features.shape[0], 1))]))


class LinearSoftmax:
    """Multinomial logistic regression on a fixed design; weights are flat ``k*p`` vectors."""

    def __init__(self, X, labels, classes):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.labels = np.ascontiguousarray(labels, dtype=np.int64)
        self.k = int(classes)
        self.p = self.X.shape[1]
        self.size = self.k * self.p

    @property
    def n(self):
        return self.X.shape[0]

    def _W(self, w):
        return np.ascontiguousarray(w, dtype=np.float64).reshape(self.k, self.p)

    def probs(self, w):
        return kernels.softmax_probs(self.X, self._W(w))

    def losses(self, w, P=None):
        if P is not None:
            return kernels.ce_values(P, self.labels)
        # log-sum-exp on the logits: stays finite where the probabilities underflow
        Z = self.X @ self._W(w).T
        top = Z.max(axis=1)
        lse = top + np.log(np.exp(Z - top[:, None]).sum(axis=1))
        return lse - Z[np.arange(self.n), self.labels]

    def grad(self, w, weights, P=None):
        P = self.probs(w) if P is None else P
        return kernels.weighted_ce_grad(self.X, P, self.labels, weights).ravel()

    def hvp(self, w, weights, v, P=None):
        P = self.probs(w) if P is None else P
        return kernels.weighted_ce_hvp(self.X, P, weights, self._W(v)).ravel()

    def grad_inner(self, w, v, P=None):
        P = self.probs(w) if P is None else P
        return kernels.ce_grad_inner(self.X, P, self.labels, self._W(v))

    def per_example_grads(self, w, P=None):
        """Dense ``(n, k*p)`` matrix of per-example cross-entropy gradients."""
        P = self.probs(w) if P is None else P
        R = P.copy()
        R[np.arange(self.n), self.labels] -= 1.0
        return np.einsum("ik,ij->ikj", R, self.X).reshape(self.n, self.size)

    def accuracy(self, w):
        return float(np.mean(np.argmax(self.X @ self._W(w).T, axis=1) == self.labels))
