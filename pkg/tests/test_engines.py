import math

import numpy as np
import pytest

from hypergrad.dynamics import ADJOINT, GdTransition, unroll
from hypergrad.engines import (CapacityError, EngineConfig, checkpointed_rmd, compute, fmd, full_rmd, implicit_cg,
                               k_rmd, neumann_k)
from hypergrad.numerics import CGBreakdown
from hypergrad.problems import (MetaRidgeConfig, build_problem, make_counterexample, make_meta_ridge, make_toy,
                                make_toy_tilde)
from hypergrad.problems.base import BilevelProblem
from hypergrad.problems.toy import QuadraticLower, SineUpper

from conftest import SMALL_PARAMS, SMALL_T, random_lambda, small_problem

LAM11 = np.array([1.0, 1.0])


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# ------------------------------------------------------------ frozen oracles


def test_toy_full_rmd_closed_form():
    g = full_rmd(make_toy(), LAM11, 100).gradient
    # (I - C) grad_w f(w_T), C = (I - 0.1 G)^100, computed independently
    assert rel(g, np.array([11.092511668928772, 10.98945195431628])) <= 1e-12


def test_toy_k1_closed_form():
    g = k_rmd(make_toy(), LAM11, 100, 1).gradient
    assert rel(g, np.array([1.109280630938194, 0.5527451414773282])) <= 1e-12


def test_toy_zero_at_stationary_composite():
    # choose lam so that w_T = 0, where grad_w f vanishes; grad_lam f is zero for the plain toy
    C = (1 - 0.1 * np.array([1.0, 0.5])) ** 100
    lam = -C * 2.0 / (1 - C)
    res = full_rmd(make_toy(), lam, 100)
    assert np.linalg.norm(res.solution) <= 1e-12
    assert np.linalg.norm(res.gradient) <= 1e-10


def test_counterexample_scalar_brute_force():
    prob = make_counterexample(lam0=1.0, gamma=0.5, T=20, w0=2.0)
    for lam in (0.7, 1.0, -0.5):
        # w_T = c w0 + (1 - c) lam with c = 0.5^20, so d/dlam f = w_T (1 - c) + lam - 1
        c = 0.5 ** 20
        wT = c * 2.0 + (1 - c) * lam
        expect = wT * (1 - c) + lam - 1.0
        for engine in (full_rmd, fmd):
            got = engine(prob, np.array([lam]), 20).gradient[0]
            assert abs(got - expect) <= 1e-12 * max(1.0, abs(expect))


# ------------------------------------------------------------------ equivalence


@pytest.mark.parametrize("name", sorted(SMALL_PARAMS))
def test_engine_equivalence_random_lambda(name):
    prob = small_problem(name)
    T = SMALL_T[name]
    rng = np.random.default_rng(21)
    for _ in range(5):
        lam = random_lambda(prob, rng, 0.5)
        ref = full_rmd(prob, lam, T).gradient
        assert rel(fmd(prob, lam, T).gradient, ref) <= 1e-8
        assert rel(checkpointed_rmd(prob, lam, T).gradient, ref) <= 1e-10
        assert rel(k_rmd(prob, lam, T, T + 1).gradient, ref) <= 1e-10


@pytest.mark.parametrize("name", sorted(SMALL_PARAMS))
def test_deterministic_bit_identical(name):
    prob = small_problem(name)
    lam = random_lambda(prob, np.random.default_rng(4), 0.3)
    a = full_rmd(prob, lam, SMALL_T[name]).gradient
    b = full_rmd(prob, lam, SMALL_T[name]).gradient
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("name", sorted(SMALL_PARAMS))
def test_truncation_telescopes(name):
    prob = small_problem(name)
    T = SMALL_T[name]
    ts = prob.transition
    lam = random_lambda(prob, np.random.default_rng(8), 0.3)
    traj = unroll(ts, lam, T)
    alpha = prob.upper.grad_w(traj.final, lam)
    for K in range(1, T + 1):
        # alpha currently holds A_{T-K+2} ... A_T grad_w f; extend by A_{T-K+1}
        t = T - K + 1
        alpha = ts.state_product(t - 1, traj.state(t - 1), lam, alpha, ADJOINT)
        s = T - K
        term = ts.init_hyper_adjoint(lam, alpha) if s == 0 else \
            ts.hyper_product(s - 1, traj.state(s - 1), lam, alpha, ADJOINT)
        diff = k_rmd(prob, lam, T, K + 1).gradient - k_rmd(prob, lam, T, K).gradient
        assert np.linalg.norm(diff - term) <= 1e-10 * max(1.0, np.linalg.norm(term))


def test_k_rmd_range_contract():
    prob = make_toy()
    with pytest.raises(ValueError):
        k_rmd(prob, LAM11, 10, 0)
    with pytest.raises(ValueError):
        k_rmd(prob, LAM11, 10, 12)


# ---------------------------------------------------------------- checkpointing


@pytest.mark.parametrize("interval", [1, 3, 10, 100])
def test_checkpoint_intervals_match_full(interval):
    prob = make_toy()
    ref = full_rmd(prob, LAM11, 100).gradient
    res = checkpointed_rmd(prob, LAM11, 100, interval)
    assert rel(res.gradient, ref) <= (1e-12 if interval == 1 else 1e-10)
    assert res.peak_states_stored <= math.ceil(100 / interval) + interval + 1
    assert res.forward_steps <= 200


def test_checkpoint_toy_interval_10_peak():
    res = checkpointed_rmd(make_toy(), LAM11, 100, 10)
    assert res.peak_states_stored <= 21


@pytest.mark.parametrize("T", [1, 2, 7, 17, 50])
def test_checkpoint_odd_horizons(T):
    prob = small_problem("hypercleaning")
    lam = prob.default_lambda() + 0.1
    ref = full_rmd(prob, lam, T).gradient
    res = checkpointed_rmd(prob, lam, T)
    c = math.ceil(math.sqrt(T))
    assert rel(res.gradient, ref) <= 1e-10
    assert res.peak_states_stored <= 2 * c + 2


def test_checkpoint_interval_contract():
    with pytest.raises(ValueError):
        checkpointed_rmd(make_toy(), LAM11, 10, 11)


# ------------------------------------------------------------------------ memory


@pytest.mark.parametrize("K", [1, 5, 20])
def test_memory_bounds(K):
    prob = small_problem("task_interaction")
    lam = prob.default_lambda()
    T = 40
    assert k_rmd(prob, lam, T, K).peak_states_stored <= K + 1
    assert full_rmd(prob, lam, T).peak_states_stored == T + 1
    assert fmd(prob, lam, T).peak_states_stored <= 2


# --------------------------------------------------------------------- forward


def test_fmd_horizon_zero_keeps_initial_term():
    prob = make_meta_ridge(MetaRidgeConfig(d=3, warm_start=True, fixed_task=True))
    lam = prob.default_lambda() + 0.2
    res = fmd(prob, lam, 0)
    w0 = prob.transition.init(lam)
    gw = prob.upper.grad_w(w0, lam)
    expect = prob.upper.grad_lam(w0, lam) + prob.transition.init_hyper_adjoint(lam, gw)
    assert np.allclose(res.gradient, expect, atol=1e-14)
    assert np.allclose(full_rmd(prob, lam, 0).gradient, expect, atol=1e-14)
    assert np.linalg.norm(prob.transition.init_hyper_adjoint(lam, gw)) > 0


def test_fmd_cap_names_cap():
    prob = small_problem("hypercleaning")
    with pytest.raises(CapacityError, match="fmd_cap=10"):
        fmd(prob, prob.default_lambda(), 5, fmd_cap=10)


def test_fmd_toy_matches_full():
    prob = make_toy_tilde()
    assert rel(fmd(prob, LAM11, 100).gradient, full_rmd(prob, LAM11, 100).gradient) <= 1e-8


# -------------------------------------------------------------------- implicit


def test_implicit_at_exact_solution_reduces_to_upper_gradient():
    prob = make_toy()
    lam = np.array([0.3, -0.7])
    res = implicit_cg(prob, lam, 2000, cg_iters=10)
    assert np.linalg.norm(res.solution - lam) <= 1e-14
    assert rel(res.gradient, prob.upper.grad_w(lam, lam)) <= 1e-10
    assert res.extra["cg_converged"]


def test_implicit_long_horizon_toy():
    prob = make_toy()
    ref = full_rmd(prob, LAM11, 2000).gradient
    assert rel(implicit_cg(prob, LAM11, 2000, 50).gradient, ref) <= 1e-3


def test_implicit_quadratic_exact_in_m_steps():
    prob = make_meta_ridge(MetaRidgeConfig(d=3, fixed_task=True, warm_start=False))
    lam = prob.default_lambda() + 0.1
    T = 3000
    ref = full_rmd(prob, lam, T).gradient
    est = implicit_cg(prob, lam, T, cg_iters=prob.M, tol=0.0)
    assert rel(est.gradient, ref) <= 1e-8


def test_implicit_surfaces_indefiniteness():
    lower = QuadraticLower(np.array([1.0, -0.5]))
    lower.alpha = None
    ts = GdTransition(lower, np.array([0.2, 0.2]), gamma=0.1)
    prob = BilevelProblem("indefinite", lower, SineUpper(), ts, M=2, N=2, T=5)
    with pytest.raises(CGBreakdown):
        implicit_cg(prob, np.array([1.0, 1.0]), 5, cg_iters=10)


# --------------------------------------------------------------------- neumann


def test_neumann_equals_k_rmd_on_toy():
    prob = make_toy_tilde()
    T = 60
    for K in range(1, T + 1):
        a = neumann_k(prob, LAM11, T, K).gradient
        b = k_rmd(prob, LAM11, T, K).gradient
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(b)))


def test_neumann_large_order_recovers_implicit_identity():
    prob = make_toy()
    res = neumann_k(prob, LAM11, 100, 3000)
    assert rel(res.gradient, prob.upper.grad_w(res.solution, LAM11)) <= 1e-10


def test_neumann_gap_shrinks_with_horizon():
    prob = build_problem("hypercleaning", {"n_train": 60, "n_val": 40, "d": 4}, seed=1)
    lam = prob.default_lambda()
    gaps = [np.linalg.norm(neumann_k(prob, lam, T, 5).gradient - k_rmd(prob, lam, T, 5).gradient)
            for T in (50, 100, 200)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_compute_dispatch_and_config_contract():
    prob = make_toy()
    for mode, kw in [("full_rmd", {}), ("k_rmd", {"K": 3}), ("checkpointed_rmd", {}), ("fmd", {}),
                     ("implicit_cg", {"cg_iters": 5}), ("neumann", {"K": 3})]:
        res = compute(prob, LAM11, 20, EngineConfig(mode=mode, **kw))
        assert res.mode == mode
        assert np.all(np.isfinite(res.gradient))
    with pytest.raises(ValueError):
        EngineConfig(mode="k_rmd")
    with pytest.raises(ValueError):
        EngineConfig(mode="bogus")
