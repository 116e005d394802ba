"""Per-instance attributions, signed L1 normalization and the ensemble combination.

Two explainers are provided:

* ``shapley``: Monte-Carlo permutation Shapley values against a single
  baseline vector, with antithetic (reversed) permutation pairs.
* ``surrogate``: a locally weighted ridge regression of the model's
  probability on Gaussian feature deltas.

Both accept any callable mapping an ``(n, d)`` array to ``n`` scores, so a
:class:`~mesdaudit.model.Classifier` can be passed directly.  The batched
functions take one seed per row; rows sharing a seed share their random
draws, which is what makes an instance and its perturbed neighbors comparable.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from mesdaudit.errors import ConfigError, ContractError, NumericError, ShapeError

PredictFn = Callable[[np.ndarray], np.ndarray]

SHAPLEY = "shapley"
SURROGATE = "surrogate"
EXPLAINERS = (SHAPLEY, SURROGATE)


@dataclass(frozen=True, eq=False)
class Attribution:
    values: np.ndarray
    explainer_id: str
    normalized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class ExplainConfig:
    shapley_permutations: int = 64
    surrogate_samples: int = 200
    kernel_width: float | None = None  # None -> 0.75 * sqrt(d)
    sample_scale: float = 1.0
    ridge: float = 1e-3
    weights: Mapping[str, float] = field(default_factory=lambda: {SHAPLEY: 0.5, SURROGATE: 0.5})

    def __post_init__(self) -> None:
        if self.shapley_permutations < 1:
            raise ConfigError("shapley_permutations must be >= 1")
        if self.ridge <= 0:
            raise ConfigError("ridge must be > 0")
        object.__setattr__(self, "weights", check_weights(self.weights))


def check_weights(w: Mapping[str, float]) -> dict[str, float]:
    w = {str(k): float(v) for k, v in w.items()}
    if not w:
        raise ConfigError("ensemble weights are empty")
    unknown = set(w) - set(EXPLAINERS)
    if unknown:
        raise ConfigError(f"unknown explainers in ensemble weights: {sorted(unknown)}")
    if any(v < 0 for v in w.values()) or abs(sum(w.values()) - 1.0) > 1e-12:
        raise ConfigError(f"ensemble weights must be non-negative and sum to 1, got {w}")
    return w


def _rngs(seeds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(np.asarray(seeds, dtype=np.uint64), return_inverse=True)
    return uniq, inverse.ravel()


# ------------------------------------------------------------------- Shapley


def permutations_for(seed: int, d: int, n_permutations: int) -> np.ndarray:
    """Feature orderings for one instance: random draws, each followed by its reverse."""
    rng = np.random.default_rng(int(seed))
    half = (n_permutations + 1) // 2
    base = np.argsort(rng.random((half, d)), axis=1)
    perms = np.empty((2 * half, d), dtype=np.int64)
    perms[0::2] = base
    perms[1::2] = base[:, ::-1]
    return perms[:n_permutations]


def shapley_batch(
    f: PredictFn,
    X: np.ndarray,
    baseline: np.ndarray,
    n_permutations: int,
    seeds: Sequence[int] | np.ndarray,
) -> np.ndarray:
    """Unnormalized permutation-Shapley attributions for every row of ``X``.

    For each ordering the features are revealed one at a time, starting from
    ``baseline``; a feature's contribution is the change in ``f`` when it is
    revealed.  Contributions telescope, so each row satisfies
    ``sum(phi) == f(x) - f(baseline)`` up to rounding.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != (d,):
        raise ShapeError(f"baseline has shape {baseline.shape}, expected ({d},)")
    if n_permutations < 1:
        raise ConfigError("n_permutations must be >= 1")
    uniq, inverse = _rngs(seeds)
    if len(inverse) != n:
        raise ShapeError("need one seed per row")
    P = n_permutations
    table = np.stack([permutations_for(s, d, P) for s in uniq])
    perms = table[inverse]  # (n, P, d)
    rank = np.argsort(perms, axis=2)  # position of each feature in its ordering
    steps = np.arange(d + 1)
    revealed = rank[:, :, None, :] < steps[None, None, :, None]  # (n, P, d+1, d)
    delta = X - baseline
    Z = baseline + revealed * delta[:, None, None, :]
    v = np.asarray(f(Z.reshape(-1, d)), dtype=np.float64).reshape(n, P, d + 1)
    phi = np.take_along_axis(v, rank + 1, axis=2) - np.take_along_axis(v, rank, axis=2)
    return phi.mean(axis=1)


def explain_shapley(
    model: PredictFn,
    x: np.ndarray,
    background: np.ndarray,
    n_permutations: int = 64,
    seed: int = 0,
) -> Attribution:
    phi = shapley_batch(model, np.asarray(x)[None, :], background, n_permutations, [seed])
    return Attribution(phi[0], SHAPLEY, normalized=False)


# ----------------------------------------------------------------- surrogate


def surrogate_batch(
    f: PredictFn,
    X: np.ndarray,
    n_samples: int,
    kernel_width: float | None,
    seeds: Sequence[int] | np.ndarray,
    sample_scale: float = 1.0,
    ridge: float = 1e-3,
) -> np.ndarray:
    """Locally weighted ridge coefficients of ``f`` around each row of ``X``.

    Samples ``x + sample_scale * eps`` with ``eps ~ N(0, I)``, weights them by
    ``exp(-||x' - x||^2 / width^2)`` and regresses ``f(x')`` on ``x' - x`` with
    an unpenalized intercept.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if n_samples < d + 2:
        raise ConfigError(f"n_samples must be >= d + 2 = {d + 2}")
    width = 0.75 * np.sqrt(d) if kernel_width is None else float(kernel_width)
    if width <= 0:
        raise ConfigError("kernel_width must be > 0")
    uniq, inverse = _rngs(seeds)
    if len(inverse) != n:
        raise ShapeError("need one seed per row")
    eps_table = np.stack(
        [np.random.default_rng(int(s)).standard_normal((n_samples, d)) for s in uniq]
    )
    deltas = sample_scale * eps_table[inverse]  # (n, S, d)
    y = np.asarray(f((X[:, None, :] + deltas).reshape(-1, d)), dtype=np.float64).reshape(n, n_samples)
    w = np.exp(-np.sum(deltas * deltas, axis=2) / width**2)
    design = np.concatenate([np.ones((n, n_samples, 1)), deltas], axis=2)
    wd = design * w[:, :, None]
    gram = np.einsum("nsi,nsj->nij", wd, design)
    gram[:, np.arange(1, d + 1), np.arange(1, d + 1)] += ridge
    rhs = np.einsum("nsi,ns->ni", wd, y)
    try:
        coef = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular weighted design in surrogate fit: {exc}") from exc
    return coef[:, 1:]


def explain_surrogate(
    model: PredictFn,
    x: np.ndarray,
    n_samples: int = 200,
    kernel_width: float | None = None,
    seed: int = 0,
    sample_scale: float = 1.0,
    ridge: float = 1e-3,
) -> Attribution:
    coef = surrogate_batch(model, np.asarray(x)[None, :], n_samples, kernel_width, [seed], sample_scale, ridge)
    return Attribution(coef[0], SURROGATE, normalized=False)


# -------------------------------------------------------- normalize / combine


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """Signed L1 normalization along the last axis; all-zero rows stay zero."""
    values = np.asarray(values, dtype=np.float64)
    norm = np.sum(np.abs(values), axis=-1, keepdims=True)
    return np.divide(values, norm, out=np.zeros_like(values), where=norm > 0)


def normalize_l1(a: Attribution) -> Attribution:
    return Attribution(normalize_rows(a.values), a.explainer_id, normalized=True)


def ensemble(attrs: Sequence[Attribution], w: Mapping[str, float]) -> Attribution:
    """Convex combination of normalized attributions (not renormalized)."""
    w = check_weights(w)
    if not attrs:
        raise ContractError("no attributions to combine")
    by_id = {}
    for a in attrs:
        if not a.normalized:
            raise ContractError(f"attribution from {a.explainer_id!r} is not normalized")
        by_id[a.explainer_id] = a
    if set(by_id) != set(w) or len(by_id) != len(attrs):
        raise ConfigError(f"explainer ids {sorted(by_id)} do not match weights {sorted(w)}")
    shapes = {a.values.shape for a in attrs}
    if len(shapes) != 1:
        raise ShapeError(f"attributions have different shapes {shapes}")
    combined = sum(w[e] * by_id[e].values for e in sorted(w))
    return Attribution(combined, "ensemble", normalized=False)


def ensemble_batch(
    f: PredictFn,
    X: np.ndarray,
    baseline: np.ndarray,
    cfg: ExplainConfig,
    seeds: Mapping[str, np.ndarray],
) -> np.ndarray:
    """Ensemble attribution for every row; ``seeds`` maps explainer id to per-row seeds.

    Explainers with zero weight are skipped entirely.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros_like(X)
    for e in sorted(cfg.weights):
        weight = cfg.weights[e]
        if weight == 0:
            continue
        if e == SHAPLEY:
            raw = shapley_batch(f, X, baseline, cfg.shapley_permutations, seeds[e])
        else:
            raw = surrogate_batch(
                f, X, cfg.surrogate_samples, cfg.kernel_width, seeds[e], cfg.sample_scale, cfg.ridge
            )
        out += weight * normalize_rows(raw)
    return out
