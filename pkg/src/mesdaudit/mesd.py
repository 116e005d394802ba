"""Pairwise subgroup stability disparity and its CVaR-weighted, max and variance summaries."""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mesdaudit.errors import ConfigError, DegenerateError


@dataclass(frozen=True)
class PairwiseDisparity:
    gi: Hashable
    gj: Hashable
    D: float
    R: float


@dataclass(frozen=True)
class MesdConfig:
    alpha: float = 0.2
    epsilon: float = 1e-9

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class MesdResult:
    alpha: float
    tau: float
    weights: dict[tuple[Hashable, Hashable], float]
    mesd_cvar: float
    mesd_max: float
    mesd_var: float
    fallback_used: bool
    degenerate: bool = False
    pairs: list[PairwiseDisparity] = field(default_factory=list)

    def to_json(self, names: Mapping[Hashable, str] | None = None) -> dict[str, Any]:
        names = names or {}
        return {
            "alpha": self.alpha,
            "tau": None if math.isnan(self.tau) else self.tau,
            "mesd_cvar": self.mesd_cvar,
            "mesd_max": self.mesd_max,
            "mesd_var": self.mesd_var,
            "fallback_used": self.fallback_used,
            "degenerate": self.degenerate,
            "pairs": [
                {
                    "gi": _label(p.gi, names),
                    "gj": _label(p.gj, names),
                    "D": p.D,
                    "R": p.R,
                    "weight": self.weights.get((p.gi, p.gj), 0.0),
                }
                for p in self.pairs
            ],
        }

    def pairs_csv(self, names: Mapping[Hashable, str] | None = None) -> str:
        names = names or {}
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["gi", "gj", "D", "R", "weight"])
        for p in self.pairs:
            writer.writerow(
                [_label(p.gi, names), _label(p.gj, names), repr(p.D), repr(p.R), repr(self.weights.get((p.gi, p.gj), 0.0))]
            )
        return buf.getvalue()


def _label(g: Hashable, names: Mapping[Hashable, str]) -> str:
    if g in names:
        return names[g]
    if isinstance(g, tuple):
        return "_".join(map(str, g))
    return str(g)


def pairwise(scores: Mapping[Hashable, float]) -> list[PairwiseDisparity]:
    """All unordered group pairs in sorted-key order, with gap ``D`` and risk ``R``."""
    if len(scores) < 2:
        raise DegenerateError(f"MESD needs at least 2 groups, got {len(scores)}")
    keys = sorted(scores)
    return [
        PairwiseDisparity(
            gi=a,
            gj=b,
            D=abs(float(scores[a]) - float(scores[b])),
            R=1.0 - min(float(scores[a]), float(scores[b])),
        )
        for a, b in itertools.combinations(keys, 2)
    ]


def mesd_variants(pairs: Sequence[PairwiseDisparity]) -> tuple[float, float]:
    """``(max gap, population variance of the gaps)``."""
    if not pairs:
        raise DegenerateError("no pairs")
    D = np.array([p.D for p in pairs])
    return float(D.max()), float(D.var())


def mesd_cvar(pairs: Sequence[PairwiseDisparity], alpha: float = 0.2, epsilon: float = 1e-9) -> MesdResult:
    """Tail-weighted mean pairwise gap.

    Pairs whose risk exceeds the ``1 - alpha`` quantile of all risks
    (linear interpolation) are weighted by their excess risk, normalized by
    ``sum(excess) + epsilon``.  When no pair exceeds the threshold (all tail
    risks tied), the pairs at or above it get uniform weight instead.
    """
    MesdConfig(alpha, epsilon)
    if not pairs:
        raise DegenerateError("no pairs")
    R = np.array([p.R for p in pairs])
    D = np.array([p.D for p in pairs])
    tau = float(np.quantile(R, 1.0 - alpha, method="linear"))
    excess = np.maximum(R - tau, 0.0)
    fallback = not (excess > 0).any()
    if fallback:
        tail = R >= tau
        if not tail.any():
            tail = R == R.max()
        w = tail / tail.sum()
    else:
        w = excess / (math.fsum(excess) + epsilon)
    mx, var = mesd_variants(pairs)
    # a sub-convex combination of gaps cannot exceed the largest gap; clip rounding
    value = min(math.fsum(w * D), mx)
    return MesdResult(
        alpha=alpha,
        tau=tau,
        weights={(p.gi, p.gj): float(wi) for p, wi in zip(pairs, w)},
        mesd_cvar=value,
        mesd_max=mx,
        mesd_var=var,
        fallback_used=bool(fallback),
        pairs=list(pairs),
    )


def mesd(scores: Mapping[Hashable, float], alpha: float = 0.2, epsilon: float = 1e-9) -> MesdResult:
    """MESD from group scores; fewer than two groups gives 0 with ``degenerate=True``."""
    if len(scores) < 2:
        warnings.warn("MESD is undefined for fewer than 2 groups; reporting 0", stacklevel=2)
        return MesdResult(
            alpha=alpha, tau=float("nan"), weights={}, mesd_cvar=0.0, mesd_max=0.0, mesd_var=0.0,
            fallback_used=False, degenerate=True,
        )
    return mesd_cvar(pairwise(scores), alpha, epsilon)
