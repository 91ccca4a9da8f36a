import numpy as np
import pytest

from hypergrad.problems import build_problem

# Small instances of every registered problem, used by the cross-checks.
SMALL_PARAMS = {
    "toy": {},
    "toy_tilde": {},
    "counterexample": {},
    "hypercleaning": {"n_train": 30, "n_val": 20, "d": 3, "classes": 3},
    "task_interaction": {"V": 3, "d": 3, "classes": 2, "n_train": 8, "n_val": 10},
    "meta_ridge": {"d": 3},
}
SMALL_T = {"toy": 30, "toy_tilde": 30, "counterexample": 20, "hypercleaning": 20, "task_interaction": 20,
           "meta_ridge": 30}


def small_problem(name, seed=0):
    return build_problem(name, SMALL_PARAMS[name], seed=seed, T=SMALL_T[name])


def random_lambda(problem, rng, scale=1.0):
    return problem.default_lambda() + scale * rng.standard_normal(problem.N)


@pytest.fixture(params=sorted(SMALL_PARAMS))
def problem(request):
    return small_problem(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance lines, one per criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = {}


def record_acceptance(number, ok, detail):
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES, key=lambda n: (isinstance(n, str), str(n).zfill(4))):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
