from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..dynamics import GdTransition, LowerObjective, UpperObjective
from ..numerics import as_vector


@dataclass
class BilevelProblem:
    """A lower objective, an upper objective and the unrolled solver linking them.

    ``sampler`` draws a context: called with a numpy Generator it returns a
    deterministic ``BilevelProblem`` for that context.  Deterministic problems
    leave it ``None`` and :meth:`instance` returns the problem itself.
    """

    name: str
    lower: LowerObjective
    upper: UpperObjective
    transition: GdTransition
    M: int
    N: int
    T: int = 100
    init_lambda: Optional[np.ndarray] = None
    sampler: Optional[Callable] = None
    data: dict = field(default_factory=dict)

    @property
    def stochastic(self):
        return self.sampler is not None

    def instance(self, rng=None):
        if self.sampler is None:
            return self
        if rng is None:
            raise ValueError(f"problem {self.name!r} is stochastic and needs an rng to sample a context")
        return self.sampler(rng)

    def check_lambda(self, lam):
        return as_vector(lam, "lambda", self.N)

    def default_lambda(self):
        if self.init_lambda is None:
            return np.zeros(self.N)
        return np.array(self.init_lambda, dtype=np.float64)
