"""NSGA-II over the five-hyperparameter genome and Chebyshev selection from the front."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from mesdaudit.data import TabularDataset
from mesdaudit.errors import ConfigError
from mesdaudit.model import HyperParams
from mesdaudit.objectives import EvalConfig, ObjectiveVector, evaluate_config
from mesdaudit.seeding import derive_seed

logger = logging.getLogger(__name__)

GENES = ("threshold", "log10_l2", "log10_lr", "epochs", "dropout")
LOWER = np.array([0.05, -6.0, -4.0, 10.0, 0.0])
UPPER = np.array([0.95, -1.0, -1.0, 200.0, 0.6])
INTEGER = np.array([False, False, False, True, False])


@dataclass(frozen=True)
class Genome:
    threshold: float
    log10_l2: float
    log10_lr: float
    epochs: int
    dropout: float

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "Genome":
        v = np.clip(np.asarray(v, dtype=np.float64), LOWER, UPPER)
        return cls(
            threshold=float(v[0]),
            log10_l2=float(v[1]),
            log10_lr=float(v[2]),
            epochs=int(round(v[3])),
            dropout=float(v[4]),
        )

    def vector(self) -> np.ndarray:
        return np.array([self.threshold, self.log10_l2, self.log10_lr, float(self.epochs), self.dropout])

    def in_bounds(self) -> bool:
        v = self.vector()
        return bool(np.all(v >= LOWER) and np.all(v <= UPPER))

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            threshold=self.threshold,
            l2=10.0**self.log10_l2,
            learning_rate=10.0**self.log10_lr,
            epochs=self.epochs,
            dropout=self.dropout,
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def random_genome(rng: np.random.Generator) -> Genome:
    v = rng.uniform(LOWER, UPPER)
    v[3] = rng.integers(int(LOWER[3]), int(UPPER[3]) + 1)
    return Genome.from_vector(v)


# ------------------------------------------------------------------ sorting


def _as_points(points: Sequence[Any]) -> np.ndarray:
    rows = [p.as_tuple() if isinstance(p, ObjectiveVector) else tuple(p) for p in points]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def non_dominated_sort(points: Sequence[Any]) -> list[list[int]]:
    """Fast non-dominated sorting; returns fronts as lists of point indices."""
    F = _as_points(points)
    n = len(F)
    if n == 0:
        raise ConfigError("cannot sort an empty point set")
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while len(current):
        fronts.append(current.tolist())
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(front: Sequence[Any]) -> np.ndarray:
    F = _as_points(front)
    n, k = F.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(k):
        order = np.argsort(F[:, j], kind="stable")
        col = F[order, j]
        span = col[-1] - col[0]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def hypervolume(points: Sequence[Any], ref: Sequence[float]) -> float:
    """Exact dominated hypervolume (minimization) of 2- or 3-objective points."""
    F = _as_points(points)
    ref = np.asarray(ref, dtype=np.float64)
    F = F[np.all(F < ref, axis=1)]
    if len(F) == 0:
        return 0.0
    if F.shape[1] == 2:
        return _hv2(F, ref)
    if F.shape[1] != 3:
        raise ConfigError("hypervolume supports 2 or 3 objectives")
    # sweep along the last objective, integrating 2-D slices
    zs = np.unique(F[:, 2])
    bounds = np.append(zs[1:], ref[2])
    total = 0.0
    for z, z_next in zip(zs, bounds):
        total += _hv2(F[F[:, 2] <= z][:, :2], ref[:2]) * (z_next - z)
    return float(total)


def _hv2(F: np.ndarray, ref: np.ndarray) -> float:
    order = np.lexsort((F[:, 1], F[:, 0]))
    area = 0.0
    best_y = ref[1]
    for x, y in F[order]:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return area


# ---------------------------------------------------------------- variation


@dataclass(frozen=True)
class SearchConfig:
    population: int = 24
    generations: int = 15
    crossover_prob: float = 0.9
    eta_c: float = 15.0
    mutation_prob: float = 0.2
    eta_m: float = 20.0
    theoretical_ideal: bool = False

    def __post_init__(self) -> None:
        if self.population < 4 or self.population % 2:
            raise ConfigError("population must be an even number >= 4")
        if self.generations < 1:
            raise ConfigError("generations must be >= 1")
        for name in ("crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.eta_c < 0 or self.eta_m < 0:
            raise ConfigError("distribution indices must be >= 0")


def sbx(p1: np.ndarray, p2: np.ndarray, cfg: SearchConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bounded simulated binary crossover (per gene with probability 0.5)."""
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > cfg.crossover_prob:
        return c1, c2
    for i in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        lo, hi = LOWER[i], UPPER[i]
        u = rng.random()
        children = []
        for beta in (1.0 + 2.0 * (y1 - lo) / (y2 - y1), 1.0 + 2.0 * (hi - y2) / (y2 - y1)):
            alpha = 2.0 - beta ** -(cfg.eta_c + 1.0)
            if u <= 1.0 / alpha:
                betaq = (u * alpha) ** (1.0 / (cfg.eta_c + 1.0))
            else:
                betaq = (1.0 / (2.0 - u * alpha)) ** (1.0 / (cfg.eta_c + 1.0))
            children.append(betaq)
        a = 0.5 * ((y1 + y2) - children[0] * (y2 - y1))
        b = 0.5 * ((y1 + y2) + children[1] * (y2 - y1))
        a, b = min(max(a, lo), hi), min(max(b, lo), hi)
        if rng.random() <= 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
    return c1, c2


def polynomial_mutation(v: np.ndarray, cfg: SearchConfig, rng: np.random.Generator) -> np.ndarray:
    v = v.copy()
    for i in range(len(v)):
        if rng.random() > cfg.mutation_prob:
            continue
        lo, hi = LOWER[i], UPPER[i]
        span = hi - lo
        d1, d2 = (v[i] - lo) / span, (hi - v[i]) / span
        u = rng.random()
        power = 1.0 / (cfg.eta_m + 1.0)
        if u < 0.5:
            xy = 1.0 - d1
            val = 2.0 * u + (1.0 - 2.0 * u) * xy ** (cfg.eta_m + 1.0)
            dq = val**power - 1.0
        else:
            xy = 1.0 - d2
            val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (cfg.eta_m + 1.0)
            dq = 1.0 - val**power
        v[i] = min(max(v[i] + dq * span, lo), hi)
    return v


def _better(i: int, j: int, rank: np.ndarray, crowd: np.ndarray) -> int:
    if rank[i] != rank[j]:
        return i if rank[i] < rank[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return i


def rank_and_crowding(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(points), dtype=np.int64)
    crowd = np.empty(len(points))
    for r, front in enumerate(non_dominated_sort(points)):
        rank[front] = r
        crowd[front] = crowding_distance(points[front])
    return rank, crowd


def environmental_selection(points: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` survivors by (rank, crowding), fronts filled in order."""
    chosen: list[int] = []
    for front in non_dominated_sort(points):
        if len(chosen) + len(front) <= n:
            chosen.extend(front)
            continue
        crowd = crowding_distance(points[front])
        order = sorted(range(len(front)), key=lambda k: (-crowd[k], front[k]))
        chosen.extend(front[k] for k in order[: n - len(chosen)])
        break
    return np.array(chosen, dtype=np.int64)


def make_offspring(
    genomes: Sequence[Genome], rank: np.ndarray, crowd: np.ndarray, cfg: SearchConfig, rng: np.random.Generator
) -> list[Genome]:
    n = len(genomes)
    children: list[Genome] = []
    while len(children) < n:
        parents = []
        for _ in range(2):
            i, j = rng.integers(0, n, size=2)
            parents.append(genomes[_better(int(i), int(j), rank, crowd)].vector())
        for child in sbx(parents[0], parents[1], cfg, rng):
            children.append(Genome.from_vector(polynomial_mutation(child, cfg, rng)))
    return children[:n]


# -------------------------------------------------------------------- search


@dataclass(frozen=True)
class ArchiveEntry:
    generation: int
    index: int
    genome: Genome
    objectives: ObjectiveVector
    seed: int

    def to_json(self) -> dict[str, Any]:
        return {
            "generation": self.generation,
            "index": self.index,
            "genome": asdict(self.genome),
            "genome_hash": self.genome.digest(),
            "objectives": {
                "f_perf": self.objectives.f_perf,
                "f_out": self.objectives.f_out,
                "f_proc": self.objectives.f_proc,
            },
            "feasible": self.objectives.feasible,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ArchiveEntry":
        o = doc["objectives"]
        return cls(
            generation=int(doc["generation"]),
            index=int(doc["index"]),
            genome=Genome(**doc["genome"]),
            objectives=ObjectiveVector(o["f_perf"], o["f_out"], o["f_proc"], bool(doc.get("feasible", True))),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class FrontMember:
    genome: Genome
    objectives: ObjectiveVector
    rank: int
    crowding_distance: float
    seed: int


@dataclass(frozen=True)
class ParetoFront:
    members: list[FrontMember]
    generation: int

    def points(self) -> np.ndarray:
        return np.array([m.objectives.as_tuple() for m in self.members])


@dataclass
class SearchResult:
    front: ParetoFront
    archive: list[ArchiveEntry] = field(default_factory=list)
    generation_fronts: list[np.ndarray] = field(default_factory=list)


Evaluator = Callable[[Genome, int], ObjectiveVector]


class DatasetEvaluator:
    """Picklable evaluator: train on ``ds`` with the genome, score on ``split``."""

    def __init__(self, ds: TabularDataset, cfg: EvalConfig, split: str = "val"):
        self.ds = ds
        self.cfg = cfg
        self.split = split

    def __call__(self, genome: Genome, seed: int) -> ObjectiveVector:
        return evaluate_config(genome.hyperparams(), self.ds, self.cfg, seed, split=self.split)[0]


_worker_evaluate: Evaluator | None = None


def _init_worker(fn: Evaluator) -> None:
    global _worker_evaluate
    _worker_evaluate = fn


def _call(args: tuple[Genome, int]) -> ObjectiveVector:
    assert _worker_evaluate is not None
    return _worker_evaluate(*args)


def _evaluate_all(evaluate: Evaluator, genomes: Sequence[Genome], seeds: Sequence[int], pool) -> list[ObjectiveVector]:
    if pool is None:
        return [evaluate(g, s) for g, s in zip(genomes, seeds)]
    # map() preserves submission order, so results are schedule-independent
    return list(pool.map(_call, list(zip(genomes, seeds))))


def _archive_front(archive: Sequence[ArchiveEntry], generation: int) -> ParetoFront:
    unique: dict[Genome, ArchiveEntry] = {}
    for entry in archive:
        unique.setdefault(entry.genome, entry)
    entries = list(unique.values())
    pts = np.array([e.objectives.as_tuple() for e in entries])
    first = non_dominated_sort(pts)[0]
    crowd = crowding_distance(pts[first])
    members = [
        FrontMember(entries[i].genome, entries[i].objectives, 0, float(c), entries[i].seed)
        for i, c in zip(first, crowd)
    ]
    return ParetoFront(members=members, generation=generation)


def evolve(
    evaluate: Evaluator,
    search_cfg: SearchConfig,
    master_seed: int,
    workers: int = 1,
    on_evaluated: Callable[[ArchiveEntry], None] | None = None,
) -> SearchResult:
    """Run NSGA-II and return the non-dominated set of everything evaluated.

    Each individual's evaluation seed is derived from ``(master_seed,
    generation, index)``, so results do not depend on ``workers``.
    """
    rng = np.random.default_rng(derive_seed(master_seed, "nsga2"))
    N = search_cfg.population
    archive: list[ArchiveEntry] = []
    generation_fronts: list[np.ndarray] = []
    pool = (
        ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(evaluate,))
        if workers > 1
        else None
    )

    def run(gen: int, genomes: list[Genome]) -> list[ObjectiveVector]:
        seeds = [derive_seed(master_seed, "eval", gen, i) for i in range(len(genomes))]
        objs = _evaluate_all(evaluate, genomes, seeds, pool)
        for i, (g, o, s) in enumerate(zip(genomes, objs, seeds)):
            entry = ArchiveEntry(gen, i, g, o, s)
            archive.append(entry)
            if on_evaluated is not None:
                on_evaluated(entry)
        return objs

    try:
        genomes = [random_genome(rng) for _ in range(N)]
        objs = run(0, genomes)
        points = np.array([o.as_tuple() for o in objs])
        for gen in range(1, search_cfg.generations + 1):
            rank, crowd = rank_and_crowding(points)
            children = make_offspring(genomes, rank, crowd, search_cfg, rng)
            child_objs = run(gen, children)
            pool_genomes = genomes + children
            pool_objs = objs + child_objs
            pool_points = np.array([o.as_tuple() for o in pool_objs])
            keep = environmental_selection(pool_points, N)
            genomes = [pool_genomes[i] for i in keep]
            objs = [pool_objs[i] for i in keep]
            points = pool_points[keep]
            generation_fronts.append(points[non_dominated_sort(points)[0]])
            logger.info("generation %d: front size %d", gen, len(generation_fronts[-1]))
    finally:
        if pool is not None:
            pool.shutdown()
    return SearchResult(
        front=_archive_front(archive, search_cfg.generations),
        archive=archive,
        generation_fronts=generation_fronts,
    )


# --------------------------------------------------------------- Chebyshev


@dataclass(frozen=True)
class ChebyshevPick:
    ideal: tuple[float, float, float]
    scales: tuple[float, float, float]
    chosen: Genome
    score: float
    objectives: ObjectiveVector | None = None
    seed: int | None = None


def chebyshev_scores(points: np.ndarray, ideal: np.ndarray, scales: np.ndarray) -> np.ndarray:
    return np.max(scales * np.abs(points - ideal), axis=1)


def chebyshev_select(
    front: ParetoFront,
    scales: Sequence[float] | None = None,
    theoretical_ideal: bool = False,
) -> ChebyshevPick:
    """Front member minimizing the largest scaled deviation from the ideal point.

    The ideal is the per-objective front minimum (or ``(-1, 0, 0)`` with
    ``theoretical_ideal``); default scales are ``1 / range`` over the front,
    with zero-range objectives contributing nothing.  Ties go to the
    lexicographically smallest objective vector, then the genome hash.
    """
    if not front.members:
        raise ConfigError("cannot select from an empty front")
    P = front.points()
    ideal = np.array([-1.0, 0.0, 0.0]) if theoretical_ideal else P.min(axis=0)
    if scales is None:
        span = P.max(axis=0) - P.min(axis=0)
        lam = np.divide(1.0, span, out=np.zeros_like(span), where=span > 0)
    else:
        lam = np.asarray(scales, dtype=np.float64)
        if lam.shape != (3,) or np.any(lam < 0):
            raise ConfigError("scales must be three non-negative numbers")
    score = chebyshev_scores(P, ideal, lam)
    best = min(
        range(len(front.members)),
        key=lambda i: (score[i], *P[i], front.members[i].genome.digest()),
    )
    m = front.members[best]
    return ChebyshevPick(
        ideal=tuple(float(v) for v in ideal),
        scales=tuple(float(v) for v in lam),
        chosen=m.genome,
        score=float(score[best]),
        objectives=m.objectives,
        seed=m.seed,
    )


def front_to_json(front: ParetoFront, pick: ChebyshevPick) -> dict[str, Any]:
    def enc(x: float) -> float | str:
        return "inf" if math.isinf(x) else x

    return {
        "generation": front.generation,
        "members": [
            {
                "genome": asdict(m.genome),
                "genome_hash": m.genome.digest(),
                "objectives": {"f_perf": m.objectives.f_perf, "f_out": m.objectives.f_out, "f_proc": m.objectives.f_proc},
                "rank": m.rank,
                "crowding_distance": enc(m.crowding_distance),
                "seed": m.seed,
            }
            for m in front.members
        ],
        "chebyshev": {
            "ideal": list(pick.ideal),
            "scales": list(pick.scales),
            "chosen": asdict(pick.chosen),
            "genome_hash": pick.chosen.digest(),
            "score": pick.score,
            "seed": pick.seed,
        },
    }
