import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesdaudit.data import GroupSpec, SyntheticSpec, generate_synthetic
from mesdaudit.errors import ConfigError, DataError
from mesdaudit.explain import ExplainConfig
from mesdaudit.perturb import PerturbConfig
from mesdaudit.stability import (
    StabilityConfig,
    _allocate,
    aggregate,
    group_stability,
    instance_stability,
    invert,
    sample_for_stability,
    stability_batch,
)

ECFG = ExplainConfig(shapley_permutations=6, surrogate_samples=24)


def _model(seed=0, d=4):
    W = np.random.default_rng(seed).normal(size=(d, 6))
    return lambda X: 1.0 / (1.0 + np.exp(-np.tanh(X @ W).sum(axis=1)))


def test_identical_neighbors_give_stability_one():
    X = np.random.default_rng(1).normal(size=(10, 4))
    pcfg = PerturbConfig(baseline=np.zeros(4), K=5, sigma=0.0, p_m=0.0)
    inst, stab = stability_batch(_model(), X, ECFG, pcfg, range(10))
    assert np.all(inst == 0.0) and np.all(stab == 1.0)


def test_noise_lowers_stability():
    X = np.random.default_rng(2).normal(size=(30, 4))
    means = []
    for sigma in (0.0, 0.1, 0.5):
        pcfg = PerturbConfig(baseline=np.zeros(4), K=6, sigma=sigma, p_m=0.0)
        means.append(stability_batch(_model(), X, ECFG, pcfg, range(30))[1].mean())
    assert means[0] > means[1] > means[2]


def test_batch_matches_single_instance():
    X = np.random.default_rng(3).normal(size=(3, 4))
    pcfg = PerturbConfig(baseline=np.zeros(4), K=4)
    _, stab = stability_batch(_model(), X, ECFG, pcfg, [10, 11, 12], chunk=2)
    for i in range(3):
        single = instance_stability(_model(), X[i], ECFG, pcfg, 10 + i)
        assert single.stability == pytest.approx(stab[i], abs=1e-14)


def test_inversions():
    assert invert(0.0) == 1.0 and invert(1.0) == 0.5
    assert invert(0.0, "exp") == 1.0
    assert invert(2.0, "exp") == pytest.approx(np.exp(-2.0))
    with pytest.raises(ConfigError):
        StabilityConfig(inversion="log")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=20))
def test_inversion_is_in_unit_interval_and_decreasing(xs):
    xs = np.sort(np.array(xs))
    for how in ("reciprocal", "exp"):
        s = invert(xs, how)
        assert np.all((s >= 0) & (s <= 1))
        assert np.all(np.diff(s) <= 0)


def _table_rows():
    rng = np.random.default_rng(0)
    rows = []
    for g, n0, n1 in [((0,), 30, 10), ((1,), 5, 2), ((2,), 12, 0)]:
        rows += [(g, 0, float(v)) for v in rng.uniform(0.5, 1.0, n0)]
        rows += [(g, 1, float(v)) for v in rng.uniform(0.3, 0.9, n1)]
    return rows


def test_shrinkage_limits_and_midpoint():
    rows = _table_rows()
    raw = aggregate(rows, lam=1e-9)
    heavy = aggregate(rows, lam=1e9)
    for (g, y), cell in raw.cells.items():
        if cell.n:
            assert abs(cell.shrunk - cell.raw) < 1e-6
        assert abs(heavy.cells[(g, y)].shrunk - heavy.label_means[y]) < 1e-6
    mid = aggregate(rows, lam=5)
    assert mid.cells[((1,), 0)].alpha == 0.5


def test_empty_cell_falls_back_to_label_mean():
    t = aggregate(_table_rows(), lam=10)
    cell = t.cells[((2,), 1)]
    assert cell.n == 0 and cell.raw is None and cell.shrunk == t.label_means[1]


def test_group_score_is_prevalence_weighted():
    t = aggregate(_table_rows(), lam=10)
    assert sum(t.prevalence.values()) == pytest.approx(1.0)
    for g, score in t.group_scores.items():
        expect = sum(t.prevalence[y] * t.cells[(g, y)].shrunk for y in t.prevalence)
        assert score == pytest.approx(expect, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1), st.floats(0.01, 1.0)), min_size=1, max_size=80),
       st.floats(1e-3, 1e3))
def test_scores_stay_within_observed_range(rows, lam):
    t = aggregate([((g,), y, s) for g, y, s in rows], lam)
    lo, hi = min(s for *_, s in rows), max(s for *_, s in rows)
    for score in t.group_scores.values():
        assert lo - 1e-12 <= score <= hi + 1e-12
    for cell in t.cells.values():
        assert 0 <= cell.alpha < 1


def test_aggregate_rejects_bad_input():
    with pytest.raises(DataError):
        aggregate([], 1.0)
    with pytest.raises(ConfigError):
        aggregate(_table_rows(), 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=12), st.integers(1, 300))
def test_allocation_respects_budget_and_sizes(sizes, budget):
    budget = min(budget, sum(sizes))
    alloc = _allocate(sizes, budget)
    assert sum(alloc) == budget
    assert all(0 <= a <= s for a, s in zip(alloc, sizes))
    if budget >= len(sizes):
        assert all(a >= 1 for a in alloc)


def test_stratified_sample_covers_every_cell():
    ds = generate_synthetic(SyntheticSpec({"big": GroupSpec(900, 0.5), "tiny": GroupSpec(20, 0.5)}))
    rows = sample_for_stability(ds, 40, seed=0, split=None)
    assert len(rows) == 40 and np.all(np.diff(rows) > 0)
    cells = {(tuple(ds.A[i]), int(ds.y[i])) for i in rows}
    assert len(cells) == 4
    np.testing.assert_array_equal(rows, sample_for_stability(ds, 40, seed=0, split=None))
    assert len(sample_for_stability(ds, 10_000, split="test")) == len(ds.indices("test"))


def test_group_stability_end_to_end():
    ds = generate_synthetic(SyntheticSpec({"a": 60, "b": 60}, n_features=4))
    pcfg = PerturbConfig(K=4).bind(ds.schema.baseline_values, ds.schema.blocks)
    table, stab = group_stability(_model(d=ds.d), ds, np.arange(20), ECFG, pcfg, StabilityConfig(), 7)
    assert len(stab) == 20 and np.all((stab > 0) & (stab <= 1))
    assert set(table.group_scores) <= {(0,), (1,)}
