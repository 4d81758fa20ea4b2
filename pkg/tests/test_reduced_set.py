import math

import numpy as np
import pytest

from errors import InputError, NumericalError
from kernels import KernelSpec, gram, mmd_sq, uniform_weights
from reduced_set import (ReductionConfig, ScalingParams, kill_lambda, largest_eigenvalue, reduce,
                         reduce_with_budget, scaling_weights, select_indices)


def objective(K, alpha, lam, weights):
    return mmd_sq(K, alpha, uniform_weights(K.shape[0])) + lam * float(np.sum(weights * np.abs(alpha)))


def coordinate_descent(K, lam, weights, sweeps=3000, tol=1e-14):
    '''
    Cyclic coordinate descent on the same objective, one exact coordinate
    minimization (soft threshold) at a time.
    '''
    n = K.shape[0]
    beta = uniform_weights(n)
    alpha = np.zeros(n)
    r = K @ (alpha - beta)
    for _ in range(sweeps):
        biggest = 0.0
        for i in range(n):
            q = r[i] - K[i, i] * (alpha[i] - beta[i])
            z = beta[i] - q / K[i, i]
            threshold = lam * weights[i] / (2.0 * K[i, i])
            new = math.copysign(max(abs(z) - threshold, 0.0), z)
            delta = new - alpha[i]
            if delta != 0.0:
                r += K[:, i] * delta
                alpha[i] = new
                biggest = max(biggest, abs(delta))
        if biggest < tol:
            break
    return alpha


def kkt_certificate(K, alpha, lam, weights):
    grad = 2.0 * K @ (alpha - uniform_weights(K.shape[0]))
    nonzero = alpha != 0.0
    on_support = np.abs(grad[nonzero] + lam * weights[nonzero] * np.sign(alpha[nonzero]))
    off_support = np.maximum(np.abs(grad[~nonzero]) - lam * weights[~nonzero], 0.0)
    return float(max(on_support.max(initial=0.0), off_support.max(initial=0.0)))


def test_lambda_zero_returns_empirical_weights(small_gram):
    result = reduce(small_gram, ReductionConfig(lam=0.0))
    np.testing.assert_allclose(result.alpha, np.full(50, 1.0 / 50), atol=1e-8)
    assert result.kappa == 0
    assert result.mmd_sq_achieved == pytest.approx(0.0, abs=1e-12)
    assert result.converged


def test_lambda_above_kill_threshold_discards_everything(small_gram):
    weights = np.linspace(0.5, 1.5, 50)
    lam = 2.0 * np.max(np.abs(small_gram @ uniform_weights(50))) / weights.min()
    result = reduce(small_gram, ReductionConfig(lam=lam, weights=weights))
    np.testing.assert_array_equal(result.alpha, np.zeros(50))
    assert result.kappa == 50
    assert result.retained.size == 0
    beta = uniform_weights(50)
    assert result.objective == pytest.approx(float(beta @ small_gram @ beta), rel=1e-12)
    assert kill_lambda(small_gram, weights) <= lam


@pytest.mark.slow
def test_matches_coordinate_descent(gaussian):
    lams = (1e-3, 1e-2, 1e-1)
    for seed in range(100):
        lam = lams[seed % 3]
        K = gram(gaussian, np.random.default_rng(seed).normal(size=(50, 2)))
        weights = np.ones(50)
        result = reduce(K, ReductionConfig(lam=lam))
        oracle = objective(K, coordinate_descent(K, lam, weights), lam, weights)
        assert result.objective == pytest.approx(oracle, abs=1e-6)
        assert kkt_certificate(K, result.alpha, lam, weights) <= 1e-6


def test_reported_objective_and_kkt_are_consistent(small_gram):
    weights = np.ones(50)
    result = reduce(small_gram, ReductionConfig(lam=1e-2))
    assert result.objective == pytest.approx(objective(small_gram, result.alpha, 1e-2, weights), abs=1e-12)
    assert kkt_certificate(small_gram, result.alpha, 1e-2, weights) <= max(result.kkt_residual, 0.0) + 1e-12
    assert 0 < result.kappa < 50


def test_objective_history_never_increases(small_gram):
    result = reduce(small_gram, ReductionConfig(lam=5e-3))
    assert np.all(np.diff(result.history) <= 1e-12)


def test_objective_is_convex(small_gram, rng):
    weights = rng.uniform(0.5, 2.0, 50)
    for _ in range(100):
        a1, a2 = rng.normal(scale=0.05, size=50), rng.normal(scale=0.05, size=50)
        t = rng.uniform(0.01, 0.99)
        mixed = objective(small_gram, t * a1 + (1 - t) * a2, 1e-2, weights)
        bound = t * objective(small_gram, a1, 1e-2, weights) + (1 - t) * objective(small_gram, a2, 1e-2, weights)
        assert mixed <= bound + 1e-9


def test_partition_invariants(small_gram):
    result = reduce(small_gram, ReductionConfig(lam=1e-2))
    both = np.concatenate([result.discarded, result.retained])
    np.testing.assert_array_equal(np.sort(both), np.arange(50))
    assert np.all(np.abs(result.alpha[result.discarded]) <= 1e-10)
    assert np.all(np.abs(result.alpha[result.retained]) > 1e-10)
    assert result.mmd_sq_achieved >= 0.0


@pytest.fixture(scope="module")
def regression_path(regression_problem):
    K, weights = regression_problem
    return [reduce(K, ReductionConfig(lam=lam, weights=weights)) for lam in np.logspace(-4, -1, 8)]


def test_converges_on_the_regression_gram(regression_problem, regression_path):
    K, weights = regression_problem
    for result in regression_path:
        assert result.converged, f"lam={result.lam:.3e} kkt={result.kkt_residual:.3e}"
        assert kkt_certificate(K, result.alpha, result.lam, weights) <= 1e-9 + 1e-12


def test_path_distance_is_monotone(regression_path):
    for prev, curr in zip(regression_path, regression_path[1:]):
        assert curr.mmd_sq_achieved >= prev.mmd_sq_achieved - 2e-9


def test_converges_on_near_duplicate_scenarios(gaussian):
    # many points per unit of bandwidth make K_SS numerically singular
    points = np.sort(np.random.default_rng(3).normal(scale=2.5, size=(200, 1)), axis=0)
    K = gram(gaussian, points)
    weights = scaling_weights(points[:, 0], ScalingParams(kind="regression_softmax", T=3.0, standardize=True))
    for lam in (1e-3, 1e-2):
        result = reduce(K, ReductionConfig(lam=lam, weights=weights))
        assert result.converged
        assert kkt_certificate(K, result.alpha, lam, weights) <= 1e-9 + 1e-12
        assert 0 < result.kappa < 200


def test_nonneg_keeps_alpha_nonnegative(small_gram):
    result = reduce(small_gram, ReductionConfig(lam=1e-2, nonneg=True))
    assert np.all(result.alpha >= 0.0)


def test_reduce_rejects_indefinite_matrix():
    with pytest.raises(NumericalError):
        reduce(np.array([[1.0, 2.0], [2.0, 1.0]]), ReductionConfig(lam=0.1))


def test_reduce_rejects_weight_length_mismatch(small_gram):
    with pytest.raises(InputError):
        reduce(small_gram, ReductionConfig(lam=0.1, weights=np.ones(10)))


@pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"lam": math.nan}, {"zero_tol": 0.0},
                                    {"max_iter": 0}, {"weights": [1.0, 0.0]}, {"weights": [1.0, -2.0]}])
def test_reduction_config_validation(kwargs):
    with pytest.raises(InputError):
        ReductionConfig(**kwargs)


def test_largest_eigenvalue_matches_eigensolver(small_gram):
    assert largest_eigenvalue(small_gram) == pytest.approx(np.linalg.eigvalsh(small_gram)[-1], rel=1e-6)


def test_budget_zero_expansion_is_admissible(small_gram):
    beta = uniform_weights(50)
    epsilon = math.sqrt(float(beta @ small_gram @ beta)) + 1e-6
    result = reduce_with_budget(small_gram, ReductionConfig(), epsilon)
    assert result.kappa == 50
    assert result.converged


def test_budget_meets_epsilon_on_the_boundary(small_gram):
    result = reduce_with_budget(small_gram, ReductionConfig(), 0.1)
    assert result.mmd <= 0.1 + 1e-6
    # the next lambda up leaves the budget
    beyond = reduce(small_gram, ReductionConfig(lam=result.lam * 1.001))
    assert beyond.mmd >= 0.1 - 1e-6


def test_budget_below_reachable_is_flagged(small_gram):
    result = reduce_with_budget(small_gram, ReductionConfig(), 1e-14)
    assert not result.converged
    assert result.lam == pytest.approx(1e-8)


def test_budget_rejects_non_positive_epsilon(small_gram):
    with pytest.raises(InputError):
        reduce_with_budget(small_gram, ReductionConfig(), 0.0)


def test_select_indices_examples():
    discarded, retained = select_indices(np.array([0.5, 0.0, 0.3]), 1e-10)
    np.testing.assert_array_equal(discarded, [1])
    np.testing.assert_array_equal(retained, [0, 2])

    discarded, retained = select_indices(np.zeros(4), 1e-10)
    np.testing.assert_array_equal(discarded, np.arange(4))
    assert retained.size == 0

    discarded, _ = select_indices(np.full(5, 0.2), 1e-10)
    assert discarded.size == 0


def test_select_indices_rejects_bad_tolerance():
    with pytest.raises(InputError):
        select_indices(np.ones(3), 0.0)


def test_uniform_scaling():
    np.testing.assert_array_equal(scaling_weights(np.arange(5.0), ScalingParams()), np.ones(5))


def test_regression_scaling_example():
    w = scaling_weights(np.array([0.0, math.log(2.0)]), ScalingParams(kind="regression_softmax", T=1.0))
    np.testing.assert_allclose(w, [2.0 / 3.0, 4.0 / 3.0], rtol=1e-12)


def test_regression_scaling_symmetric_flag():
    values = np.array([-1.0, 1.0])
    symmetric = scaling_weights(values, ScalingParams(kind="regression_softmax"))
    one_sided = scaling_weights(values, ScalingParams(kind="regression_softmax", symmetric=False))
    np.testing.assert_allclose(symmetric, [1.0, 1.0])
    assert one_sided[1] > one_sided[0]


def test_ocp_scaling_example():
    w = scaling_weights(np.array([0.9, 1e6]), ScalingParams(kind="ocp_softmax", C=1.0, eps_s=0.1))
    e = math.e
    np.testing.assert_allclose(w, [2.0 * e / (e + 1.0), 2.0 / (e + 1.0)], rtol=1e-5)
    assert w[0] > w[1]


@pytest.mark.parametrize("params", [ScalingParams(kind="regression_softmax", T=1.0),
                                    ScalingParams(kind="regression_softmax", T=3.0, standardize=True),
                                    ScalingParams(kind="ocp_softmax")])
def test_scaling_weights_positive_with_mean_one(params, rng):
    for scale in (1.0, 100.0, 1e3):
        w = scaling_weights(rng.normal(scale=scale, size=40), params)
        assert np.all(w > 0.0)
        assert w.mean() == pytest.approx(1.0, abs=1e-12)


def test_scaling_weights_reject_non_finite():
    with pytest.raises(InputError):
        scaling_weights(np.array([0.0, np.nan]), ScalingParams(kind="regression_softmax"))


def test_reduce_on_polynomial_kernel(rng):
    K = gram(KernelSpec(kind="polynomial", degree=2), rng.normal(size=(30, 1)))
    result = reduce(K, ReductionConfig(lam=1e-2))
    assert result.mmd_sq_achieved >= 0.0
    # never worse than the starting point beta
    assert result.objective <= 1e-2 + 1e-12
