"""Run configuration: one JSON document with every default materialized."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from mesdaudit.data import CsvSchema, SyntheticSpec, TabularDataset, generate_synthetic, load_csv, load_schema, planted_instability_spec
from mesdaudit.errors import ConfigError, InputIOError
from mesdaudit.explain import ExplainConfig
from mesdaudit.mesd import MesdConfig
from mesdaudit.model import HyperParams
from mesdaudit.objectives import EvalConfig
from mesdaudit.optimize import SearchConfig
from mesdaudit.perturb import PerturbConfig
from mesdaudit.stability import StabilityConfig

CONFIG_VERSION = 1


@dataclass
class DatasetConfig:
    """Either a CSV with its schema, or a synthetic generator spec."""

    csv: str | None = None
    schema: dict[str, Any] | None = None
    schema_path: str | None = None
    synthetic: dict[str, Any] | None = None

    def resolve(self, base: Path) -> "DatasetConfig":
        if self.csv is None and self.synthetic is None:
            self.synthetic = planted_instability_spec().to_dict()
        if self.csv is not None and self.synthetic is not None:
            raise ConfigError("dataset needs exactly one of 'csv' or 'synthetic'")
        if self.csv is not None:
            if self.schema is None:
                if self.schema_path is None:
                    raise ConfigError("CSV dataset needs 'schema' or 'schema_path'")
                self.schema = load_schema(_resolve(base, self.schema_path)).to_dict()
                self.schema_path = None
            else:
                self.schema = CsvSchema.from_dict(self.schema).to_dict()
        else:
            self.synthetic = SyntheticSpec.from_dict(self.synthetic).to_dict()
        return self

    def load(self, base: Path) -> TabularDataset:
        if self.synthetic is not None:
            return generate_synthetic(SyntheticSpec.from_dict(self.synthetic))
        assert self.csv is not None and self.schema is not None
        return load_csv(_resolve(base, self.csv), CsvSchema.from_dict(self.schema))


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _build(cls, doc: dict[str, Any] | None):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    kind: str = "mlp2"
    hp: HyperParams = field(default_factory=HyperParams)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    mesd: MesdConfig = field(default_factory=MesdConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    master_seed: int = 0

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            kind=self.kind, explain=self.explain, perturb=self.perturb, stability=self.stability, mesd=self.mesd
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "version": CONFIG_VERSION,
            "dataset": asdict(self.dataset),
            "model": {"kind": self.kind, "hp": asdict(self.hp)},
            "explain": {**asdict(self.explain), "weights": dict(self.explain.weights)},
            "perturb": self.perturb.params(),
            "stability": asdict(self.stability),
            "mesd": asdict(self.mesd),
            "search": asdict(self.search),
            "master_seed": self.master_seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, doc: dict[str, Any], base: Path | None = None) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        known = {"dataset", "model", "explain", "perturb", "stability", "mesd", "search", "master_seed"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        model = dict(doc.get("model") or {})
        kind = model.pop("kind", "mlp2")
        hp = _build(HyperParams, model.pop("hp", None))
        if model:
            raise ConfigError(f"unknown keys for model: {sorted(model)}")
        dataset = _build(DatasetConfig, doc.get("dataset")).resolve(base or Path.cwd())
        cfg = cls(
            dataset=dataset,
            kind=kind,
            hp=hp,
            explain=_build(ExplainConfig, doc.get("explain")),
            perturb=_build(PerturbConfig, doc.get("perturb")),
            stability=_build(StabilityConfig, doc.get("stability")),
            mesd=_build(MesdConfig, doc.get("mesd")),
            search=_build(SearchConfig, doc.get("search")),
            master_seed=int(doc.get("master_seed", 0)),
        )
        if cfg.perturb.baseline is not None:
            raise ConfigError("perturb.baseline comes from the dataset and cannot be set in the config")
        return cfg


def load_config(path: str | Path | None) -> tuple[RunConfig, Path]:
    """Parse a config file; ``None`` gives the all-defaults config.

    Returns the config and the directory relative paths resolve against.
    """
    if path is None:
        return RunConfig.from_json({}, Path.cwd()), Path.cwd()
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputIOError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    base = path.resolve().parent
    return RunConfig.from_json(doc, base), base
