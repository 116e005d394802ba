"""Local neighborhoods: Gaussian noise plus stochastic feature masking."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from mesdaudit.errors import ConfigError, ShapeError


@dataclass(frozen=True, eq=False)
class PerturbConfig:
    """Neighborhood parameters, in standardized feature units.

    ``blocks`` groups feature indices that are masked together (one-hot
    dummies of one categorical); ``None`` masks every feature independently.
    With ``noisy_mask`` the Gaussian noise is also added on masked
    coordinates (``b + eta`` instead of exactly ``b``).
    """

    baseline: np.ndarray | None = None
    K: int = 25
    sigma: float = 0.1
    p_m: float = 0.1
    noisy_mask: bool = False
    blocks: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.baseline is not None:
            object.__setattr__(self, "baseline", np.asarray(self.baseline, dtype=np.float64))
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f"K must be a positive integer, got {self.K}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.p_m <= 1.0:
            raise ConfigError(f"p_m must lie in [0, 1], got {self.p_m}")
        if self.blocks is not None and self.baseline is not None:
            flat = sorted(i for b in self.blocks for i in b)
            if flat != list(range(len(self.baseline))):
                raise ConfigError("blocks must partition the feature indices")

    def bind(self, baseline: np.ndarray, blocks: tuple[tuple[int, ...], ...] | None = None) -> "PerturbConfig":
        """Copy with the baseline (and masking blocks) of a concrete dataset."""
        return replace(self, baseline=baseline, blocks=blocks)

    def params(self) -> dict[str, object]:
        return {"K": self.K, "sigma": self.sigma, "p_m": self.p_m, "noisy_mask": self.noisy_mask}

    def block_index(self) -> np.ndarray:
        """Block id of every feature."""
        d = len(self.baseline)
        if self.blocks is None:
            return np.arange(d)
        ids = np.empty(d, dtype=np.int64)
        for k, block in enumerate(self.blocks):
            ids[list(block)] = k
        return ids


def neighborhood_with_mask(x: np.ndarray, cfg: PerturbConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``K`` perturbed copies of ``x`` and the boolean feature mask used for each."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.baseline is None:
        raise ConfigError("perturbation config has no baseline; call bind() first")
    if x.shape != cfg.baseline.shape:
        raise ShapeError(f"row has shape {x.shape}, baseline has {cfg.baseline.shape}")
    rng = np.random.default_rng(int(seed))
    d = x.shape[0]
    block_of = cfg.block_index()
    eta = rng.normal(0.0, 1.0, (cfg.K, d)) * cfg.sigma
    block_mask = rng.random((cfg.K, int(block_of.max()) + 1 if d else 0)) < cfg.p_m
    mask = block_mask[:, block_of]
    masked_value = cfg.baseline + eta if cfg.noisy_mask else np.broadcast_to(cfg.baseline, (cfg.K, d))
    return np.where(mask, masked_value, x + eta), mask


def neighborhood(x: np.ndarray, cfg: PerturbConfig, seed: int) -> np.ndarray:
    return neighborhood_with_mask(x, cfg, seed)[0]


def neighborhoods(X: np.ndarray, cfg: PerturbConfig, seeds: Sequence[int]) -> np.ndarray:
    """Stacked neighborhoods, shape ``(n, K, d)``, one seed per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(seeds) != X.shape[0]:
        raise ShapeError("need one seed per row")
    return np.stack([neighborhood(x, cfg, s) for x, s in zip(X, seeds)])
