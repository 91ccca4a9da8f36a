"""Hypergradients through unrolled gradient descent: exact, truncated and implicit."""

from .dynamics import GdTransition, StoragePolicy, unroll
from .engines import (EngineConfig, HypergradResult, checkpointed_rmd, compute, fmd, full_rmd, implicit_cg,
                      k_rmd, neumann_k)

__version__ = "0.1.0"

__all__ = [
    "EngineConfig", "GdTransition", "HypergradResult", "StoragePolicy", "checkpointed_rmd", "compute",
    "fmd", "full_rmd", "implicit_cg", "k_rmd", "neumann_k", "unroll",
]
