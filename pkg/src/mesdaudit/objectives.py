"""Utility, outcome-fairness and procedural-fairness objectives for one configuration."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.stats import rankdata

from mesdaudit.data import SubgroupKey, TabularDataset
from mesdaudit.errors import DegenerateError, TrainingError
from mesdaudit.explain import ExplainConfig
from mesdaudit.mesd import MesdConfig, MesdResult, mesd
from mesdaudit.model import Classifier, HyperParams, predict_label, predict_proba, train
from mesdaudit.perturb import PerturbConfig
from mesdaudit.seeding import derive_seed
from mesdaudit.stability import StabilityConfig, StabilityTable, group_stability, sample_for_stability

logger = logging.getLogger(__name__)

# f_proc upper bound used for infeasible configurations; MESD never exceeds 1
PROC_BOUND = 1.0


@dataclass(frozen=True)
class ObjectiveVector:
    f_perf: float
    f_out: float
    f_proc: float
    feasible: bool = True

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.f_perf, self.f_out, self.f_proc)

    @classmethod
    def infeasible(cls) -> "ObjectiveVector":
        return cls(0.0, 1.0, PROC_BOUND, feasible=False)


# ----------------------------------------------------------------- metrics


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateError("AUC is undefined when only one class is present")
    ranks = rankdata(scores, method="average")
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def f1_score(labels_hat: Sequence[int], labels_true: Sequence[int]) -> float:
    yh = np.asarray(labels_hat)
    yt = np.asarray(labels_true)
    tp = int(np.sum((yh == 1) & (yt == 1)))
    fp = int(np.sum((yh == 1) & (yt == 0)))
    fn = int(np.sum((yh == 0) & (yt == 1)))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def _group_ids(groups: Sequence[SubgroupKey] | np.ndarray) -> tuple[list[SubgroupKey], np.ndarray]:
    arr = np.asarray(groups)
    if arr.ndim == 1:
        arr = arr[:, None]
    uniq, inverse = np.unique(arr, axis=0, return_inverse=True)
    keys = [tuple(v.item() if hasattr(v, "item") else v for v in row) for row in uniq]
    return keys, inverse.ravel()


def dp_gap(labels_hat: Sequence[int], groups: Sequence[SubgroupKey] | np.ndarray) -> float:
    """Largest pairwise difference in positive-prediction rate across groups.

    Fewer than two realized groups gives 0 (see :func:`group_rates` for the flag).
    """
    yh = np.asarray(labels_hat, dtype=np.float64)
    keys, gid = _group_ids(groups)
    if len(keys) < 2:
        return 0.0
    rates = np.bincount(gid, weights=yh) / np.bincount(gid)
    return float(rates.max() - rates.min())


def _eod(labels_hat, labels_true, groups) -> tuple[float, list[tuple[SubgroupKey, int]]]:
    yh = np.asarray(labels_hat, dtype=np.float64)
    yt = np.asarray(labels_true)
    keys, gid = _group_ids(groups)
    gap = 0.0
    skipped: list[tuple[SubgroupKey, int]] = []
    for y in (0, 1):
        sel = yt == y
        denom = np.bincount(gid[sel], minlength=len(keys))
        hits = np.bincount(gid[sel], weights=yh[sel], minlength=len(keys))
        ok = denom > 0
        skipped.extend((keys[g], y) for g in np.flatnonzero(~ok))
        if ok.sum() < 2:
            if ok.sum() == 0:
                logger.warning("no group has label %d; EOD term skipped", y)
            continue
        rates = hits[ok] / denom[ok]
        gap = max(gap, float(rates.max() - rates.min()))
    return gap, skipped


def eod_gap(labels_hat: Sequence[int], labels_true: Sequence[int], groups: Sequence[SubgroupKey] | np.ndarray) -> float:
    """Largest pairwise gap in TPR or FPR across groups; empty cells are skipped."""
    return _eod(labels_hat, labels_true, groups)[0]


@dataclass(frozen=True)
class GroupRates:
    count: int
    positive_rate: float
    tpr: float | None
    fpr: float | None
    n_pos: int
    n_neg: int


def group_rates(labels_hat, labels_true, groups) -> dict[SubgroupKey, GroupRates]:
    yh = np.asarray(labels_hat)
    yt = np.asarray(labels_true)
    keys, gid = _group_ids(groups)
    out = {}
    for g, key in enumerate(keys):
        sel = gid == g
        pos = sel & (yt == 1)
        neg = sel & (yt == 0)
        out[key] = GroupRates(
            count=int(sel.sum()),
            positive_rate=float(yh[sel].mean()),
            tpr=float(yh[pos].mean()) if pos.any() else None,
            fpr=float(yh[neg].mean()) if neg.any() else None,
            n_pos=int(pos.sum()),
            n_neg=int(neg.sum()),
        )
    return out


# ------------------------------------------------------------ full evaluation


@dataclass(frozen=True)
class EvalConfig:
    """Everything besides hyperparameters that determines an evaluation."""

    kind: str = "mlp2"
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    mesd: MesdConfig = field(default_factory=MesdConfig)


@dataclass(frozen=True)
class FairnessReport:
    dp_gap: float
    eod_gap: float
    auc: float
    f1: float
    mesd: MesdResult
    per_group_rates: dict[SubgroupKey, GroupRates]
    stability: StabilityTable
    eod_skipped: list[tuple[SubgroupKey, int]] = field(default_factory=list)
    dp_degenerate: bool = False
    split: str = "test"
    n_rows: int = 0
    n_stability_rows: int = 0

    def to_json(self, names: dict[SubgroupKey, str] | None = None) -> dict[str, Any]:
        names = names or {}

        def name(g: SubgroupKey) -> str:
            return names.get(g, "_".join(map(str, g)))

        return {
            "split": self.split,
            "n_rows": self.n_rows,
            "n_stability_rows": self.n_stability_rows,
            "metrics": {
                "auc": self.auc,
                "f1": self.f1,
                "dp": self.dp_gap,
                "eod": self.eod_gap,
                "mesd": self.mesd.mesd_cvar,
            },
            "mesd": self.mesd.to_json(names),
            "dp_degenerate": self.dp_degenerate,
            "eod_skipped": [{"group": list(g), "name": name(g), "label": y} for g, y in self.eod_skipped],
            "per_group_rates": [
                {"group": list(g), "name": name(g), **r.__dict__} for g, r in sorted(self.per_group_rates.items())
            ],
        }


def fairness_report(
    model: Classifier,
    ds: TabularDataset,
    cfg: EvalConfig,
    seed: int,
    split: str = "test",
) -> FairnessReport:
    """AUC, F1, DP, EOD and MESD of ``model`` on one split of ``ds``."""
    idx = ds.indices(split)
    X, y, A = ds.X[idx], ds.y[idx], ds.A[idx]
    proba = predict_proba(model, X)
    labels_hat = (proba >= model.hp.threshold).astype(np.int64)
    eod, skipped = _eod(labels_hat, y, A)
    rates = group_rates(labels_hat, y, A)

    rows = sample_for_stability(ds, cfg.stability.n_max, derive_seed(seed, "sample"), split=split)
    perturb = cfg.perturb.bind(ds.schema.baseline_values, ds.schema.blocks)
    table, _ = group_stability(model, ds, rows, cfg.explain, perturb, cfg.stability, derive_seed(seed, "stability"))
    result = mesd(table.group_scores, cfg.mesd.alpha, cfg.mesd.epsilon)
    return FairnessReport(
        dp_gap=dp_gap(labels_hat, A),
        eod_gap=eod,
        auc=auc(proba, y),
        f1=f1_score(labels_hat, y),
        mesd=result,
        per_group_rates=rates,
        stability=table,
        eod_skipped=skipped,
        dp_degenerate=len(rates) < 2,
        split=split,
        n_rows=len(idx),
        n_stability_rows=len(rows),
    )


def train_model(ds: TabularDataset, hp: HyperParams, cfg: EvalConfig, seed: int) -> Classifier:
    tr = ds.indices("train")
    return train(ds.X[tr], ds.y[tr], cfg.kind, hp, derive_seed(seed, "train"))


def evaluate_config(
    hp: HyperParams,
    ds: TabularDataset,
    cfg: EvalConfig,
    seed: int,
    split: str = "val",
) -> tuple[ObjectiveVector, FairnessReport | None]:
    """Train with ``hp`` and score (-AUC, DP gap, MESD) on ``split``.

    A diverging run yields the infeasible sentinel vector and no report.
    """
    try:
        model = train_model(ds, hp, cfg, seed)
    except TrainingError as exc:
        logger.info("configuration %s infeasible: %s", hp, exc)
        return ObjectiveVector.infeasible(), None
    report = fairness_report(model, ds, cfg, seed, split=split)
    return ObjectiveVector(-report.auc, report.dp_gap, report.mesd.mesd_cvar), report
