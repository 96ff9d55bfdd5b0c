import numpy as np
import pytest
from hypothesis import given, strategies as st

from robust_cpd.model import FactorTriple, align_and_mse, cost_lp, cost_weighted, reconstruct, to_db, weight_update
from robust_cpd.solvers import (
    SingularGramError,
    SolverConfig,
    init_factors,
    irals,
    relative_error,
    solve_gram,
    tals,
    weighted_ls_factor,
)
from robust_cpd.tensor_core import khatri_rao, unfold

from conftest import random_factors


def materialized_weighted_ls(mode, t, f, w):
    """Row-scale the unfolding and design explicitly, then call a dense solver."""
    I, J, K = t.shape
    s = np.sqrt(w)
    if mode == 1:
        rows = np.repeat(s, K)  # row i*K + k
        design, target = khatri_rao(f.A, f.C), unfold(t, 1)
    elif mode == 2:
        rows = np.tile(s, J)  # row j*I + i
        design, target = khatri_rao(f.B, f.A), unfold(t, 2)
    else:
        # weights scale whole columns of X3; each column is its own problem
        design = khatri_rao(f.C, f.B)
        target = unfold(t, 3) * s
        sol = np.linalg.lstsq(design, target, rcond=None)[0]
        return (sol / s).T
    sol = np.linalg.lstsq(design * rows[:, None], target * rows[:, None], rcond=None)[0]
    return sol.T


def one_instance(seed, dims=(8, 7, 6), R=3):
    rng = np.random.default_rng(seed)
    f = random_factors(rng, dims, R)
    t = reconstruct(random_factors(rng, dims, R)) + 0.1 * rng.standard_normal(dims)
    w = rng.uniform(0.05, 3.0, dims[0])
    return t, f, w


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_weighted_ls_matches_materialized(mode):
    worst = 0.0
    for seed in range(30):
        t, f, w = one_instance(seed)
        worst = max(worst, np.max(np.abs(weighted_ls_factor(mode, t, f, w) - materialized_weighted_ls(mode, t, f, w))))
    assert worst <= 1e-8


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_unit_weights_give_unweighted_update(mode):
    t, f, _ = one_instance(7)
    a = weighted_ls_factor(mode, t, f, np.ones(8))
    b = weighted_ls_factor(mode, t, f, None)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_vanishing_weight_drops_slab():
    t, f, w = one_instance(3)
    w = np.ones(8)
    w[4] = 1e-14
    keep = np.delete(np.arange(8), 4)
    g = f.replace(A=f.A[keep])
    for mode in (1, 2):
        got = weighted_ls_factor(mode, t, f, w)
        ref = weighted_ls_factor(mode, t[keep], g, None)
        np.testing.assert_allclose(got, ref, atol=1e-6)


def test_weighted_ls_input_checks():
    t, f, w = one_instance(0)
    with pytest.raises(ValueError):
        weighted_ls_factor(1, t, f, np.zeros(8))
    with pytest.raises(ValueError):
        weighted_ls_factor(1, t[:5], f, None)
    with pytest.raises(ValueError):
        weighted_ls_factor(4, t, f, None)


def test_solve_gram_jitter_and_failure():
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    X = solve_gram(G, np.array([[1.0], [1.0]]))
    assert np.all(np.isfinite(X))
    with pytest.raises(SingularGramError):
        solve_gram(np.full((2, 2), np.nan), np.ones((2, 1)))


def test_config_validation():
    for bad in ({"p": 0.0}, {"p": 1.5}, {"eps": 0.0}, {"tol_abs_cost": 0.0}, {"max_iters": 0}, {"ridge_jitter": -1.0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_rank_guard():
    with pytest.raises(ValueError):
        tals(np.ones((2, 2, 2)), 5)
    with pytest.raises(ValueError):
        irals(np.ones((2, 2, 2)), 0)


def test_tals_rank_one_recovery(rng):
    f = random_factors(rng, (5, 4, 3), 1)
    res = tals(reconstruct(f), 1, SolverConfig(max_iters=200, seed=1))
    assert res.iterations <= 200
    assert to_db(align_and_mse(f.B, res.factors.B)) <= -100


def test_tals_zero_tensor():
    res = tals(np.zeros((3, 3, 3)), 1, SolverConfig(seed=2))
    assert res.cost_trace[-1] == pytest.approx(0.0, abs=1e-20)
    assert np.allclose(reconstruct(res.factors), 0.0)


def test_tals_rank_three_best_of_five():
    rng = np.random.default_rng(5)
    t = reconstruct(random_factors(rng, (10, 10, 10), 3))
    errs = [relative_error(t, tals(t, 3, SolverConfig(seed=s, tol_abs_cost=1e-14)).factors) for s in range(5)]
    assert min(errs) <= 1e-6


def test_tals_cost_nonincreasing(rng):
    t = rng.standard_normal((6, 5, 4))
    trace = tals(t, 2, SolverConfig(seed=0)).cost_trace
    assert np.all(np.diff(trace) <= 1e-9 * trace[0])


def test_first_sweep_equals_tals():
    rng = np.random.default_rng(11)
    t = rng.standard_normal((7, 6, 5))
    cfg = SolverConfig(max_iters=1, seed=4)
    a, b = irals(t, 3, cfg).factors, tals(t, 3, cfg).factors
    for k in "ABC":
        np.testing.assert_allclose(getattr(a, k), getattr(b, k), atol=1e-12, rtol=0)


def test_init_factors():
    t = np.random.default_rng(0).standard_normal((4, 3, 2))
    a, b = init_factors("random", t, 2, seed=9), init_factors("random", t, 2, seed=9)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in "ABC")
    assert init_factors(a, t, 2) is a
    with pytest.raises(ValueError):
        init_factors(a, t, 3)
    with pytest.raises(ValueError):
        init_factors("svd", t, 2)
    assert init_factors("tals", t, 2, seed=1, iters=3).rank == 2


def test_tals_init_lowers_starting_cost():
    rng = np.random.default_rng(21)
    truth = random_factors(rng, (12, 10, 8), 3, dist="exp")
    t = reconstruct(truth)
    t[[1, 5]] += 3 * rng.uniform(size=(2, 10, 8))
    rand0, tals0 = [], []
    for seed in range(20):
        rand0.append(irals(t, 3, SolverConfig(max_iters=1, seed=seed)).cost_trace[0])
        tals0.append(irals(t, 3, SolverConfig(max_iters=1, seed=seed, init="tals")).cost_trace[0])
    assert np.mean(tals0) < np.mean(rand0)


def test_irals_clean_data_equal_weights(rng):
    f = random_factors(rng, (6, 5, 4), 2, dist="exp")
    cfg = SolverConfig(seed=3)
    res = irals(reconstruct(f), 2, cfg)
    floor = cfg.p / 2 * cfg.eps ** ((cfg.p - 2) / 2)
    # residuals stop near 1e-9 under the 1e-8 cost rule, tiny next to eps
    np.testing.assert_allclose(res.weights, floor, rtol=1e-4)


def test_irals_given_truth_is_fixed_point(rng):
    f = random_factors(rng, (6, 5, 4), 2, dist="exp")
    res = irals(reconstruct(f), 2, SolverConfig(init=f))
    assert res.iterations <= 2 and res.converged


def test_irals_trace_length_and_flags(rng):
    t = rng.standard_normal((5, 4, 3))
    res = irals(t, 2, SolverConfig(max_iters=7, seed=0))
    assert len(res.cost_trace) == res.iterations + 1
    assert res.iterations == 7 and not res.converged


@given(seed=st.integers(0, 2**32 - 1), I=st.integers(3, 12), J=st.integers(3, 10),
       K=st.integers(3, 10), R=st.integers(1, 4), p=st.sampled_from([0.3, 0.5, 1.0]))
def test_irals_monotone(seed, I, J, K, R, p):
    rng = np.random.default_rng(seed)
    t = reconstruct(random_factors(rng, (I, J, K), R, dist="exp"))
    t[rng.integers(I)] += rng.uniform(0, 5, (J, K))
    trace = irals(t, R, SolverConfig(p=p, max_iters=200, seed=seed % 1000)).cost_trace
    assert np.all(np.diff(trace) <= 1e-9)


def test_weights_stationary_at_convergence():
    rng = np.random.default_rng(8)
    truth = random_factors(rng, (15, 10, 10), 3, dist="exp")
    t = reconstruct(truth)
    t[[2, 9]] += rng.uniform(size=(2, 10, 10))
    cfg = SolverConfig(seed=0, init="tals")
    res = irals(t, 3, cfg)
    assert res.converged
    from robust_cpd.model import slab_residual_norms
    w_new = weight_update(slab_residual_norms(t, res.factors) ** 2, cfg.p, cfg.eps)
    np.testing.assert_allclose(w_new, res.weights, rtol=1e-9)
    assert cost_weighted(t, res.factors, res.weights, cfg.p, cfg.eps) == pytest.approx(
        cost_lp(t, res.factors, cfg.p, cfg.eps), rel=1e-9)
    # the two planted slabs carry the two smallest weights
    assert set(np.argsort(res.weights)[:2]) == {2, 9}
