import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesdaudit.errors import ConfigError, ContractError
from mesdaudit.explain import (
    Attribution,
    ExplainConfig,
    ensemble,
    ensemble_batch,
    explain_shapley,
    explain_surrogate,
    normalize_l1,
    normalize_rows,
    permutations_for,
    shapley_batch,
)


def exact_shapley(f, x, b):
    """Enumerates every subset; fine for d <= 6."""
    d = len(x)
    phi = np.zeros(d)

    def v(S):
        z = b.copy()
        z[list(S)] = x[list(S)]
        return float(f(z[None, :])[0])

    for i in range(d):
        others = [j for j in range(d) if j != i]
        for r in range(d):
            for S in itertools.combinations(others, r):
                w = math.factorial(r) * math.factorial(d - r - 1) / math.factorial(d)
                phi[i] += w * (v(S + (i,)) - v(S))
    return phi


def test_additive_model_is_exact():
    w = np.array([0.5, -2.0, 1.0, 0.0])
    f = lambda X: X @ w + 3.0
    x = np.array([1.0, 2.0, -1.0, 4.0])
    b = np.array([0.5, 0.0, 0.0, 1.0])
    phi = explain_shapley(f, x, b, n_permutations=3, seed=1).values
    np.testing.assert_allclose(phi, w * (x - b), atol=1e-12)


def test_two_features_exact_with_two_permutations():
    f = lambda X: X[:, 0] * X[:, 1] + np.sin(X[:, 0])
    x, b = np.array([1.3, -0.7]), np.array([0.2, 0.4])
    phi = explain_shapley(f, x, b, n_permutations=2, seed=9).values
    np.testing.assert_allclose(phi, exact_shapley(f, x, b), atol=1e-12)


def test_monte_carlo_converges_to_enumeration():
    f = lambda X: np.tanh(X[:, 0] * X[:, 1] - X[:, 2]) + X[:, 3] ** 2 * X[:, 0]
    rng = np.random.default_rng(0)
    x, b = rng.normal(size=4), rng.normal(size=4)
    phi = explain_shapley(f, x, b, n_permutations=4000, seed=3).values
    np.testing.assert_allclose(phi, exact_shapley(f, x, b), atol=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 20), st.integers(0, 2**32))
def test_efficiency_holds_for_any_permutation_count(d, P, seed):
    rng = np.random.default_rng(seed % 1000)
    W = rng.normal(size=(d, 5))
    f = lambda X: np.tanh(X @ W).sum(axis=1)
    x, b = rng.normal(size=d), rng.normal(size=d)
    phi = explain_shapley(f, x, b, n_permutations=P, seed=seed).values
    assert abs(phi.sum() - (f(x[None])[0] - f(b[None])[0])) < 1e-9


def test_dummy_feature_gets_zero():
    f = lambda X: X[:, 0] * X[:, 2]
    phi = explain_shapley(f, np.array([1.0, 5.0, 2.0]), np.zeros(3), 10, seed=0).values
    assert phi[1] == 0.0


def test_permutations_are_antithetic_and_valid():
    P = permutations_for(4, 6, 7)
    assert P.shape == (7, 6)
    for p in P:
        assert sorted(p) == list(range(6))
    np.testing.assert_array_equal(P[1], P[0][::-1])


def test_batch_matches_single():
    f = lambda X: np.tanh(X).sum(axis=1) * X[:, 0]
    rng = np.random.default_rng(1)
    X, b = rng.normal(size=(3, 4)), np.zeros(4)
    batch = shapley_batch(f, X, b, 8, [5, 6, 5])
    for i, s in enumerate([5, 6, 5]):
        np.testing.assert_allclose(batch[i], explain_shapley(f, X[i], b, 8, s).values, atol=1e-14)


def test_surrogate_recovers_linear_coefficients():
    w = np.array([1.5, -0.5, 0.0, 2.0])
    f = lambda X: X @ w - 1.0
    coef = explain_surrogate(f, np.ones(4), n_samples=100, seed=0, ridge=1e-9).values
    np.testing.assert_allclose(coef, w, atol=1e-6)


def test_surrogate_is_deterministic_and_checks_sample_count():
    f = lambda X: np.sin(X).sum(axis=1)
    a = explain_surrogate(f, np.zeros(3), 30, seed=4).values
    b = explain_surrogate(f, np.zeros(3), 30, seed=4).values
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ConfigError):
        explain_surrogate(f, np.zeros(3), 4, seed=4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_subnormal=False), min_size=1, max_size=12))
def test_normalization_has_unit_l1_or_zero(v):
    out = normalize_rows(np.array(v))
    total = np.abs(out).sum()
    if np.abs(v).sum() == 0:
        assert total == 0
    else:
        assert abs(total - 1.0) < 1e-9
        assert np.all(np.sign(out) == np.sign(v))


def test_ensemble_contract():
    a = normalize_l1(Attribution(np.array([1.0, -1.0]), "shapley"))
    b = normalize_l1(Attribution(np.array([0.0, 2.0]), "surrogate"))
    out = ensemble([a, b], {"shapley": 0.25, "surrogate": 0.75})
    np.testing.assert_allclose(out.values, [0.125, 0.625])
    with pytest.raises(ContractError):
        ensemble([a, Attribution(np.array([0.0, 2.0]), "surrogate")], {"shapley": 0.5, "surrogate": 0.5})
    with pytest.raises(ConfigError):
        ensemble([a], {"shapley": 0.5, "surrogate": 0.5})
    with pytest.raises(ConfigError):
        ExplainConfig(weights={"shapley": 0.6, "surrogate": 0.6})


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_ensemble_l1_at_most_one(w, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(4, 3))
    f = lambda X: np.tanh(X @ W).sum(axis=1)
    X = rng.normal(size=(5, 4))
    cfg = ExplainConfig(shapley_permutations=4, surrogate_samples=20, weights={"shapley": w, "surrogate": 1 - w})
    seeds = {e: np.arange(5) + 7 for e in ("shapley", "surrogate")}
    phi = ensemble_batch(f, X, np.zeros(4), cfg, seeds)
    assert np.all(np.abs(phi).sum(axis=1) <= 1.0 + 1e-12)
