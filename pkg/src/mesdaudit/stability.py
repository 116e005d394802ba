"""Instance explanation stability and label-aware, shrunk subgroup stability."""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mesdaudit.data import SubgroupKey, TabularDataset
from mesdaudit.errors import ConfigError, DataError
from mesdaudit.explain import ExplainConfig, PredictFn, ensemble_batch
from mesdaudit.perturb import PerturbConfig, neighborhood
from mesdaudit.seeding import derive_seed

INVERSIONS = ("reciprocal", "exp")


@dataclass(frozen=True)
class StabilityConfig:
    lam: float = 10.0
    n_max: int = 200
    inversion: str = "reciprocal"

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if self.inversion not in INVERSIONS:
            raise ConfigError(f"inversion must be one of {INVERSIONS}")


def invert(instability: np.ndarray | float, inversion: str = "reciprocal") -> np.ndarray:
    """Map a mean attribution distance in [0, inf) to a stability score in (0, 1]."""
    instability = np.asarray(instability, dtype=np.float64)
    if inversion == "reciprocal":
        return 1.0 / (1.0 + instability)
    if inversion == "exp":
        return np.exp(-instability)
    raise ConfigError(f"unknown inversion {inversion!r}")


@dataclass(frozen=True)
class InstanceStability:
    row_index: int
    instability: float
    stability: float


def _explainer_seeds(instance_seeds: np.ndarray, weights: Iterable[str]) -> dict[str, np.ndarray]:
    return {
        e: np.array([derive_seed(int(s), e) for s in instance_seeds], dtype=np.uint64) for e in weights
    }


def stability_batch(
    model: PredictFn,
    X: np.ndarray,
    explain_cfg: ExplainConfig,
    perturb_cfg: PerturbConfig,
    instance_seeds: Sequence[int],
    inversion: str = "reciprocal",
    chunk: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Instability and stability for every row of ``X``.

    Row ``i`` and its ``K`` neighbors are explained with the same explainer
    seeds (derived from ``instance_seeds[i]``), so identical inputs always get
    identical attributions.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    seeds = np.asarray([int(s) for s in instance_seeds], dtype=np.uint64)
    n, d = X.shape
    K = perturb_cfg.K
    instability = np.empty(n)
    for start in range(0, n, chunk):
        rows = X[start : start + chunk]
        s = seeds[start : start + chunk]
        variants = np.stack(
            [neighborhood(x, perturb_cfg, derive_seed(int(si), "perturb")) for x, si in zip(rows, s)]
        )
        batch = np.concatenate([rows[:, None, :], variants], axis=1).reshape(-1, d)
        row_seeds = np.repeat(s, K + 1)
        phi = ensemble_batch(model, batch, perturb_cfg.baseline, explain_cfg, _explainer_seeds(row_seeds, explain_cfg.weights))
        phi = phi.reshape(len(rows), K + 1, d)
        dist = np.linalg.norm(phi[:, :1, :] - phi[:, 1:, :], axis=2)
        instability[start : start + len(rows)] = dist.mean(axis=1)
    return instability, invert(instability, inversion)


def instance_stability(
    model: PredictFn,
    x: np.ndarray,
    explain_cfg: ExplainConfig,
    perturb_cfg: PerturbConfig,
    seed: int,
    row_index: int = 0,
    inversion: str = "reciprocal",
) -> InstanceStability:
    inst, stab = stability_batch(model, np.asarray(x)[None, :], explain_cfg, perturb_cfg, [seed], inversion)
    return InstanceStability(row_index=row_index, instability=float(inst[0]), stability=float(stab[0]))


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class Cell:
    n: int
    raw: float | None
    alpha: float
    shrunk: float


@dataclass(frozen=True)
class StabilityTable:
    cells: dict[tuple[SubgroupKey, int], Cell]
    label_means: dict[int, float]
    prevalence: dict[int, float]
    lam: float
    group_scores: dict[SubgroupKey, float]
    label_counts: dict[int, int] = field(default_factory=dict)

    def to_json(self, names: dict[SubgroupKey, str] | None = None) -> dict[str, Any]:
        names = names or {}
        return {
            "lambda": self.lam,
            "label_means": {str(y): v for y, v in self.label_means.items()},
            "label_counts": {str(y): v for y, v in self.label_counts.items()},
            "prevalence": {str(y): v for y, v in self.prevalence.items()},
            "cells": [
                {
                    "group": list(g),
                    "name": names.get(g, "_".join(map(str, g))),
                    "label": y,
                    "n": c.n,
                    "raw": c.raw,
                    "alpha": c.alpha,
                    "shrunk": c.shrunk,
                }
                for (g, y), c in sorted(self.cells.items())
            ],
            "group_scores": [
                {"group": list(g), "name": names.get(g, "_".join(map(str, g))), "score": s}
                for g, s in sorted(self.group_scores.items())
            ],
        }


def aggregate(per_instance: Iterable[tuple[SubgroupKey, int, float]], lam: float = 10.0) -> StabilityTable:
    """Label-aware group stability with empirical-Bayes shrinkage.

    Each (group, label) cell mean is pulled toward the pooled label mean with
    weight ``n / (n + lam)``; empty cells take the label mean.  Group scores
    weight the shrunk cells by overall label prevalence.
    """
    if not lam > 0:
        raise ConfigError(f"lambda must be > 0, got {lam}")
    by_cell: dict[tuple[SubgroupKey, int], list[float]] = defaultdict(list)
    by_label: dict[int, list[float]] = defaultdict(list)
    for key, y, s in per_instance:
        key = tuple(int(k) for k in key)
        y = int(y)
        by_cell[(key, y)].append(float(s))
        by_label[y].append(float(s))
    if not by_label:
        raise DataError("no instances to aggregate")

    total = sum(len(v) for v in by_label.values())
    labels = sorted(by_label)
    label_means = {y: math.fsum(by_label[y]) / len(by_label[y]) for y in labels}
    prevalence = {y: len(by_label[y]) / total for y in labels}
    groups = sorted({g for g, _ in by_cell})

    cells: dict[tuple[SubgroupKey, int], Cell] = {}
    scores: dict[SubgroupKey, float] = {}
    for g in groups:
        parts = []
        for y in labels:
            values = by_cell.get((g, y), [])
            n = len(values)
            if n == 0:
                cell = Cell(n=0, raw=None, alpha=0.0, shrunk=label_means[y])
            else:
                raw = math.fsum(values) / n
                alpha = n / (n + lam)
                cell = Cell(n=n, raw=raw, alpha=alpha, shrunk=alpha * raw + (1.0 - alpha) * label_means[y])
            cells[(g, y)] = cell
            parts.append(prevalence[y] * cell.shrunk)
        scores[g] = math.fsum(parts)
    return StabilityTable(
        cells=cells,
        label_means=label_means,
        prevalence=prevalence,
        lam=float(lam),
        group_scores=scores,
        label_counts={y: len(by_label[y]) for y in labels},
    )


# ------------------------------------------------------------------ sampling


def _allocate(sizes: list[int], budget: int) -> list[int]:
    """Proportional allocation, at least one per cell when the budget allows."""
    n = sum(sizes)
    quotas = [budget * s / n for s in sizes]
    if budget < len(sizes):
        # not enough for every cell: the largest cells get one each
        order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
        alloc = [0] * len(sizes)
        for i in order[:budget]:
            alloc[i] = 1
        return alloc
    alloc = [min(s, max(1, int(math.floor(q)))) for s, q in zip(sizes, quotas)]
    while sum(alloc) > budget:
        # undo minimum-one bumps from the cells furthest above their quota
        i = max((i for i in range(len(sizes)) if alloc[i] > 1), key=lambda i: (alloc[i] - quotas[i], -i))
        alloc[i] -= 1
    while sum(alloc) < budget:
        i = max((i for i in range(len(sizes)) if alloc[i] < sizes[i]), key=lambda i: (quotas[i] - alloc[i], -i))
        alloc[i] += 1
    return alloc


def sample_for_stability(ds: TabularDataset, n_max: int = 200, seed: int = 0, split: str | None = "test") -> np.ndarray:
    """Stratified (group, label) sample of at most ``n_max`` rows of ``split``.

    Returns sorted row indices into ``ds``.  ``split=None`` samples from all rows.
    """
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    pool = np.arange(ds.n) if split is None else ds.indices(split)
    if n_max >= len(pool):
        return pool.copy()
    cells: dict[tuple[SubgroupKey, int], list[int]] = defaultdict(list)
    for i in pool:
        cells[(tuple(int(c) for c in ds.A[i]), int(ds.y[i]))].append(int(i))
    keys = sorted(cells)
    alloc = _allocate([len(cells[k]) for k in keys], n_max)
    rng = np.random.default_rng(seed)
    chosen = []
    for k, a in zip(keys, alloc):
        if a:
            chosen.extend(rng.choice(cells[k], size=a, replace=False).tolist())
    return np.array(sorted(chosen), dtype=np.int64)


def group_stability(
    model: PredictFn,
    ds: TabularDataset,
    rows: np.ndarray,
    explain_cfg: ExplainConfig,
    perturb_cfg: PerturbConfig,
    stability_cfg: StabilityConfig,
    master_seed: int,
) -> tuple[StabilityTable, np.ndarray]:
    """Stability table over ``rows`` of ``ds`` plus the per-row stability scores."""
    seeds = [derive_seed(master_seed, int(i)) for i in rows]
    _, stab = stability_batch(model, ds.X[rows], explain_cfg, perturb_cfg, seeds, stability_cfg.inversion)
    per_instance = [(tuple(ds.A[i]), int(ds.y[i]), float(s)) for i, s in zip(rows, stab)]
    return aggregate(per_instance, stability_cfg.lam), stab
