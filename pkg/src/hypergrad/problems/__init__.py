"""Benchmark bilevel problems and a name-based registry for the CLI."""

import numpy as np

from ..numerics import make_rng
from .base import BilevelProblem
from .counterexample import make_counterexample
from .datasets import (LabeledDataset, corrupt_labels, gen_corrupted_dataset, load_idx, load_idx_dataset, read_idx,
                       write_idx)
from .hypercleaning import make_hypercleaning
from .meta_ridge import MetaRidgeConfig, make_meta_ridge
from .task_interaction import gen_task_family, make_task_interaction
from .toy import make_toy, make_toy_tilde

__all__ = [
    "BilevelProblem", "LabeledDataset", "MetaRidgeConfig", "PROBLEMS", "build_problem",
    "gen_corrupted_dataset", "gen_task_family", "load_idx", "load_idx_dataset", "make_counterexample",
    "make_hypercleaning", "make_meta_ridge", "make_task_interaction", "make_toy", "make_toy_tilde",
    "read_idx", "write_idx",
]


def _toy(params, seed, gamma, T):
    return make_toy(gamma=gamma or 0.1, T=T or 100)


def _toy_tilde(params, seed, gamma, T):
    return make_toy_tilde(gamma=gamma or 0.1, T=T or 100)


def _counterexample(params, seed, gamma, T):
    return make_counterexample(lam0=params.get("lambda0", 1.0), gamma=gamma or 0.5, T=T or 20,
                               w0=params.get("w0", 2.0))


def _balanced_split(rng, labels, classes, n_train, n_val):
    """Class-balanced train/validation indices (``n // classes`` per class) and the remainder."""
    if n_train % classes or n_val % classes:
        raise ValueError(f"n_train and n_val must be multiples of the class count {classes}")
    tr, va = [], []
    for c in range(classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        a, b = n_train // classes, n_val // classes
        if idx.size < a + b:
            raise ValueError(f"class {c} has only {idx.size} examples, need {a + b}")
        tr.append(idx[:a])
        va.append(idx[a:a + b])
    tr, va = rng.permutation(np.concatenate(tr)), rng.permutation(np.concatenate(va))
    rest = np.setdiff1d(np.arange(labels.shape[0]), np.concatenate([tr, va]))
    return tr, va, rest


def _hypercleaning(params, seed, gamma, T):
    rng = make_rng(seed)
    if "mnist_images" in params:
        full = load_idx_dataset(params["mnist_images"], params["mnist_labels"])
        tr_idx, va_idx, rest = _balanced_split(rng, full.labels, full.classes, params.get("n_train", 5000),
                                               params.get("n_val", 5000))
        train = full.subset(tr_idx)
        labels, mask = corrupt_labels(rng, train.labels, full.classes, params.get("corruption_rate", 0.5))
        train = LabeledDataset(train.features, labels, full.classes, mask)
        val = full.subset(va_idx)
        problem = make_hypercleaning(train, val, gamma=gamma, T=T or 100)
        problem.data["test"] = full.subset(rest)
        return problem
    else:
        n_train = params.get("n_train", 200)
        n_val = params.get("n_val", 200)
        d = params.get("d", 10)
        classes = params.get("classes", 3)
        sep = params.get("separation", 2.0)
        means = sep * rng.standard_normal((classes, d))
        train = gen_corrupted_dataset(rng, n_train, d, classes, params.get("corruption_rate", 0.5), means=means)
        val = gen_corrupted_dataset(rng, n_val, d, classes, 0.0, means=means)
    return make_hypercleaning(train, val, gamma=gamma, T=T or 100)


def _task_interaction(params, seed, gamma, T):
    rng = make_rng(seed)
    V = params.get("V", 3)
    train, val = gen_task_family(
        rng, V, params.get("d", 10), params.get("classes", 3), params.get("n_train", 12),
        params.get("n_val", 30), task_shift=params.get("task_shift", 0.5),
        groups=params.get("groups"))
    return make_task_interaction(train, val, gamma=gamma or 0.1, T=T or 100,
                                 coupling_init=params.get("coupling_init", 0.0),
                                 rho_init=params.get("rho_init", 0.1))


def _meta_ridge(params, seed, gamma, T):
    kw = dict(params)
    kw["seed"] = seed
    if gamma:
        kw["gamma"] = gamma
    if T:
        kw["T"] = T
    return make_meta_ridge(MetaRidgeConfig(**kw))


PROBLEMS = {
    "toy": _toy,
    "toy_tilde": _toy_tilde,
    "counterexample": _counterexample,
    "hypercleaning": _hypercleaning,
    "task_interaction": _task_interaction,
    "meta_ridge": _meta_ridge,
}


def build_problem(name, params=None, seed=0, gamma=None, T=None):
    """Construct a registered problem by name."""
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose one of {sorted(PROBLEMS)}") from None
    return factory(dict(params or {}), seed, gamma, T)
