"""Tabular ingestion, protected-attribute binding and intersectional subgroups.

Rows are mapped to a :data:`SubgroupKey`, the tuple of integer codes of all
protected attributes.  Features are one-hot encoded (categoricals) and
standardized (numerics) with train-split statistics.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from mesdaudit.errors import ConfigError, DataError, InputIOError, SchemaError

logger = logging.getLogger(__name__)

SubgroupKey = tuple[int, ...]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fracs}")

    def counts(self, n: int) -> tuple[int, int, int]:
        n_train = int(round(self.train * n))
        n_val = min(int(round(self.val * n)), n - n_train)
        return n_train, n_val, n - n_train - n_val


@dataclass
class CsvSchema:
    """How to read a CSV: which columns are label, protected, features.

    ``feature_columns=None`` means every column that is neither the label nor
    protected.  ``categorical_columns=None`` auto-detects non-numeric columns.
    ``baseline_overrides`` are in encoded (standardized) units, keyed by
    encoded feature name.
    """

    label_column: str
    protected_columns: list[str]
    positive_label: str | None = None
    feature_columns: list[str] | None = None
    categorical_columns: list[str] | None = None
    include_protected: bool = False
    split: SplitSpec = field(default_factory=SplitSpec)
    baseline_overrides: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if isinstance(self.split, Mapping):
            self.split = SplitSpec(**self.split)
        self.protected_columns = list(self.protected_columns)
        if not self.protected_columns:
            raise SchemaError("protected_columns must be non-empty")
        if self.label_column in self.protected_columns:
            raise SchemaError("label column cannot also be protected")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CsvSchema":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        if "label_column" not in doc or "protected_columns" not in doc:
            raise SchemaError("schema needs label_column and protected_columns")
        return cls(**dict(doc))


def load_schema(path: str | Path) -> CsvSchema:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputIOError(f"schema file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema file is not valid JSON: {exc}") from exc
    return CsvSchema.from_dict(doc)


@dataclass(frozen=True, eq=False)
class FeatureSchema:
    feature_names: tuple[str, ...]
    feature_kinds: tuple[str, ...]
    protected_columns: tuple[str, ...]
    label_column: str
    baseline_values: np.ndarray
    # indices reset jointly by masking (one block per source column)
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not self.protected_columns:
            raise SchemaError("protected_columns must be non-empty")
        if self.label_column in self.protected_columns:
            raise SchemaError("label column cannot also be protected")
        if len(self.baseline_values) != len(self.feature_names):
            raise SchemaError("need exactly one baseline value per feature")
        if len(self.feature_kinds) != len(self.feature_names):
            raise SchemaError("need exactly one kind per feature")

    @property
    def d(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True, eq=False)
class TabularDataset:
    X: np.ndarray
    y: np.ndarray
    A: np.ndarray
    split: np.ndarray
    schema: FeatureSchema
    attribute_values: tuple[tuple[str, ...], ...]
    feature_center: np.ndarray
    feature_scale: np.ndarray
    rejected_rows: int = 0

    def __post_init__(self) -> None:
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.X.shape[1] != self.schema.d:
            raise DataError("X must be n x d matching the feature schema")
        if self.y.shape != (n,) or not np.isin(self.y, (0, 1)).all():
            raise DataError("y must be a length-n vector of 0/1 labels")
        if self.A.shape != (n, len(self.schema.protected_columns)):
            raise DataError("A must be n x m protected codes")
        for j, values in enumerate(self.attribute_values):
            if n and (self.A[:, j].min() < 0 or self.A[:, j].max() >= len(values)):
                raise DataError(f"invalid code in protected attribute {j}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    def keys(self) -> list[SubgroupKey]:
        return [subgroup_of(row) for row in self.A]

    def group_name(self, key: SubgroupKey) -> str:
        return "_".join(self.attribute_values[j][c] for j, c in enumerate(key))

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return np.flatnonzero(self.split == split)

    def subset(self, split: str | np.ndarray) -> "TabularDataset":
        idx = self.indices(split) if isinstance(split, str) else np.asarray(split)
        return TabularDataset(
            X=self.X[idx],
            y=self.y[idx],
            A=self.A[idx],
            split=self.split[idx],
            schema=self.schema,
            attribute_values=self.attribute_values,
            feature_center=self.feature_center,
            feature_scale=self.feature_scale,
        )

    def destandardize(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) * self.feature_scale + self.feature_center


def subgroup_of(codes: Sequence[int] | np.ndarray) -> SubgroupKey:
    """Intersectional subgroup of a row: the tuple of its protected codes."""
    return tuple(int(c) for c in codes)


def subgroup_census(ds: TabularDataset) -> dict[SubgroupKey, tuple[int, int, int]]:
    """Realized groups only, as ``key -> (count, count_y0, count_y1)``."""
    census: dict[SubgroupKey, list[int]] = {}
    for key, label in zip(ds.keys(), ds.y):
        cell = census.setdefault(key, [0, 0, 0])
        cell[0] += 1
        cell[1 + int(label)] += 1
    return {k: tuple(v) for k, v in sorted(census.items())}


def census_to_json(ds: TabularDataset) -> dict[str, Any]:
    return {
        "protected_columns": list(ds.schema.protected_columns),
        "n": ds.n,
        "groups": [
            {"key": list(k), "name": ds.group_name(k), "count": c, "count_y0": c0, "count_y1": c1}
            for k, (c, c0, c1) in subgroup_census(ds).items()
        ],
    }


# --------------------------------------------------------------------------- loading


def _binary_labels(col: pd.Series, positive_label: str | None) -> np.ndarray:
    values = col.astype(str).str.strip()
    distinct = sorted(values.unique())
    if positive_label is not None:
        if len(distinct) > 2:
            raise DataError(f"label column has {len(distinct)} distinct values, expected 2")
        return (values == str(positive_label)).to_numpy(dtype=np.int64)
    numeric = pd.to_numeric(col, errors="coerce")
    if numeric.isna().any() or not numeric.isin([0, 1]).all():
        raise DataError(f"label column is not binary 0/1 (values {distinct[:5]}); set positive_label")
    return numeric.to_numpy(dtype=np.int64)


def from_frame(df: pd.DataFrame, schema: CsvSchema) -> TabularDataset:
    """Encode a raw frame into a :class:`TabularDataset` per ``schema``."""
    needed = [schema.label_column, *schema.protected_columns, *(schema.feature_columns or [])]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing}")

    keep = df[schema.protected_columns].notna().all(axis=1) & df[schema.label_column].notna()
    for c in schema.protected_columns:
        keep &= df[c].astype(str).str.strip() != ""
    rejected = int((~keep).sum())
    if rejected:
        logger.warning("rejected %d rows with missing protected or label values", rejected)
    df = df.loc[keep].reset_index(drop=True)
    if len(df) == 0:
        raise DataError("no rows left after rejecting incomplete rows")

    y = _binary_labels(df[schema.label_column], schema.positive_label)

    attribute_values = []
    codes = []
    for c in schema.protected_columns:
        as_str = df[c].astype(str).str.strip()
        values = tuple(sorted(as_str.unique()))
        lookup = {v: i for i, v in enumerate(values)}
        attribute_values.append(values)
        codes.append(as_str.map(lookup).to_numpy(dtype=np.int64))
    A = np.stack(codes, axis=1)

    n = len(df)
    n_train, n_val, _ = schema.split.counts(n)
    order = np.random.default_rng(schema.split.seed).permutation(n)
    split = np.empty(n, dtype="<U5")
    split[order[:n_train]] = "train"
    split[order[n_train : n_train + n_val]] = "val"
    split[order[n_train + n_val :]] = "test"
    train = split == "train"
    if not train.any():
        raise ConfigError("train split is empty")

    if schema.feature_columns is not None:
        columns = list(schema.feature_columns)
    else:
        columns = [c for c in df.columns if c != schema.label_column and c not in schema.protected_columns]
    if schema.include_protected:
        columns += [c for c in schema.protected_columns if c not in columns]
    if schema.categorical_columns is not None:
        categorical = set(schema.categorical_columns)
    else:
        categorical = {c for c in columns if not pd.api.types.is_numeric_dtype(df[c])}
    categorical |= set(schema.protected_columns) & set(columns)

    names: list[str] = []
    kinds: list[str] = []
    blocks: list[tuple[int, ...]] = []
    encoded: list[np.ndarray] = []
    center: list[float] = []
    scale: list[float] = []
    for c in columns:
        if c in categorical:
            as_str = df[c].astype(str).str.strip()
            levels = sorted(as_str.unique())
            start = len(names)
            for level in levels:
                names.append(f"{c}={level}")
                kinds.append("onehot")
                encoded.append((as_str == level).to_numpy(dtype=np.float64))
                center.append(0.0)
                scale.append(1.0)
            blocks.append(tuple(range(start, len(names))))
        else:
            raw = pd.to_numeric(df[c], errors="coerce").to_numpy(dtype=np.float64)
            if np.isnan(raw[train]).all():
                raise DataError(f"numeric column {c!r} has no values in the train split")
            mu = float(np.nanmean(raw[train]))
            sd = float(np.nanstd(raw[train]))
            sd = sd if sd > 0 else 1.0
            raw = np.where(np.isnan(raw), mu, raw)
            blocks.append((len(names),))
            names.append(c)
            kinds.append("numeric")
            encoded.append((raw - mu) / sd)
            center.append(mu)
            scale.append(sd)

    X = np.stack(encoded, axis=1) if encoded else np.zeros((n, 0))
    baseline = X[train].mean(axis=0)
    for name, value in schema.baseline_overrides.items():
        if name not in names:
            raise SchemaError(f"baseline override for unknown feature {name!r}")
        baseline[names.index(name)] = float(value)

    fs = FeatureSchema(
        feature_names=tuple(names),
        feature_kinds=tuple(kinds),
        protected_columns=tuple(schema.protected_columns),
        label_column=schema.label_column,
        baseline_values=baseline,
        blocks=tuple(blocks),
    )
    return TabularDataset(
        X=X,
        y=y,
        A=A,
        split=split,
        schema=fs,
        attribute_values=tuple(attribute_values),
        feature_center=np.array(center),
        feature_scale=np.array(scale),
        rejected_rows=rejected,
    )


def load_csv(path: str | Path, schema: CsvSchema, split_spec: SplitSpec | None = None) -> TabularDataset:
    path = Path(path)
    if not path.is_file():
        raise InputIOError(f"dataset not found: {path}")
    if split_spec is not None:
        schema = CsvSchema(**{**schema.to_dict(), "split": split_spec})
    df = pd.read_csv(path, encoding="utf-8", skipinitialspace=True, na_values=["?"])
    return from_frame(df, schema)


# ------------------------------------------------------------------------ synthetic


@dataclass(frozen=True)
class GroupSpec:
    """One intersectional group of the synthetic generator.

    ``label_noise`` is the fraction of rows whose features are drawn from the
    opposite class (labels keep their exact counts).  ``feature_scale`` and
    ``separation`` shrink the group's spread and class-mean distance.
    """

    size: int
    positive_rate: float = 0.5
    label_noise: float | None = None
    feature_scale: float = 1.0
    separation: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    groups: Mapping[Any, GroupSpec | int]
    attributes: tuple[str, ...] = ("group",)
    n_features: int = 6
    noise: float = 0.0
    signal: float = 1.0
    seed: int = 0
    split: SplitSpec = SplitSpec()

    def resolved_groups(self) -> dict[tuple[str, ...], GroupSpec]:
        if not self.groups:
            raise ConfigError("synthetic spec needs at least one group")
        out = {}
        for key, g in self.groups.items():
            key = (key,) if isinstance(key, str) else tuple(str(k) for k in key)
            if len(key) != len(self.attributes):
                raise ConfigError(f"group key {key} does not match attributes {self.attributes}")
            g = GroupSpec(size=g) if isinstance(g, (int, np.integer)) else g
            if g.size < 1:
                raise ConfigError(f"group {key} must have size >= 1")
            if not 0.0 <= g.positive_rate <= 1.0:
                raise ConfigError(f"group {key} positive_rate outside [0, 1]")
            out[key] = g
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "groups": [
                {"key": list(k), **asdict(g)} for k, g in self.resolved_groups().items()
            ],
            "attributes": list(self.attributes),
            "n_features": self.n_features,
            "noise": self.noise,
            "signal": self.signal,
            "seed": self.seed,
            "split": asdict(self.split),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SyntheticSpec":
        doc = dict(doc)
        try:
            groups = {}
            for g in doc.pop("groups"):
                g = dict(g)
                key = g.pop("key")
                groups[(key,) if isinstance(key, str) else tuple(key)] = GroupSpec(**g)
            split = SplitSpec(**doc.pop("split", {}))
            attributes = tuple(doc.pop("attributes", ("group",)))
            return cls(groups=groups, attributes=attributes, split=split, **doc)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed synthetic spec: {exc}") from exc


def _class_direction(d: int) -> np.ndarray:
    # signal concentrated on the leading features; the last one is pure noise
    w = np.array([max(0.0, 1.0 - 0.25 * j) for j in range(d)])
    if d > 1:
        w[-1] = 0.0
    return w / np.linalg.norm(w)


def generate_frame(spec: SyntheticSpec) -> pd.DataFrame:
    groups = spec.resolved_groups()
    rng = np.random.default_rng(spec.seed)
    direction = _class_direction(spec.n_features)
    parts = []
    for key, g in groups.items():
        n_pos = int(round(g.size * g.positive_rate))
        y = np.zeros(g.size, dtype=np.int64)
        y[:n_pos] = 1
        rng.shuffle(y)
        noise = spec.noise if g.label_noise is None else g.label_noise
        feature_class = y.copy()
        flip = rng.permutation(g.size)[: int(round(noise * g.size))]
        feature_class[flip] = 1 - feature_class[flip]
        means = np.outer(2.0 * feature_class - 1.0, spec.signal * g.separation * direction)
        X = means + g.feature_scale * rng.standard_normal((g.size, spec.n_features))
        frame = pd.DataFrame(X, columns=[f"x{j}" for j in range(spec.n_features)])
        for attr, value in zip(spec.attributes, key):
            frame[attr] = value
        frame["label"] = y
        parts.append(frame)
    df = pd.concat(parts, ignore_index=True)
    # interleave groups so row order carries no group information
    return df.iloc[rng.permutation(len(df))].reset_index(drop=True)


def synthetic_schema(spec: SyntheticSpec) -> CsvSchema:
    return CsvSchema(
        label_column="label",
        protected_columns=list(spec.attributes),
        feature_columns=[f"x{j}" for j in range(spec.n_features)],
        split=spec.split,
    )


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    return from_frame(generate_frame(spec), synthetic_schema(spec))


def census_like_spec(n: int = 2000, skew: float = 0.5, seed: int = 0, **kwargs: Any) -> SyntheticSpec:
    """Race x gender groups with geometrically decaying sizes.

    Group ``k`` gets weight ``(1 - skew) ** k``; every group keeps at least one row.
    """
    if not 0.0 <= skew < 1.0:
        raise ConfigError("skew must lie in [0, 1)")
    keys = [("other", "male"), ("other", "female"), ("white", "male"), ("white", "female")]
    w = np.array([(1.0 - skew) ** k for k in range(len(keys))])
    sizes = np.maximum(1, np.floor(n * w / w.sum()).astype(int))
    sizes[0] += n - sizes.sum()
    return SyntheticSpec(
        groups={k: GroupSpec(size=int(s)) for k, s in zip(keys, sizes)},
        attributes=("race", "gender"),
        seed=seed,
        **kwargs,
    )


def planted_instability_spec(
    n: int = 2000,
    seed: int = 0,
    minority_fraction: float = 0.05,
    planted: bool = True,
    **kwargs: Any,
) -> SyntheticSpec:
    """Four race x gender groups; ``white_female`` is small and, if planted, noisy.

    The planted group's rows sit close to the feature means with weak class
    separation and 30% label noise, which makes their explanations fragile.
    With ``planted=False`` the same group sizes are generated without the
    plant (a control dataset).
    """
    n_small = max(1, int(round(minority_fraction * n)))
    rest = n - n_small
    sizes = [rest // 3 + (1 if i < rest % 3 else 0) for i in range(3)]
    small = (
        GroupSpec(size=n_small, label_noise=0.3, feature_scale=0.3, separation=0.3)
        if planted
        else GroupSpec(size=n_small)
    )
    groups = {
        ("other", "female"): GroupSpec(size=sizes[0]),
        ("other", "male"): GroupSpec(size=sizes[1]),
        ("white", "male"): GroupSpec(size=sizes[2]),
        ("white", "female"): small,
    }
    kwargs.setdefault("noise", 0.05)
    return SyntheticSpec(groups=groups, attributes=("race", "gender"), seed=seed, **kwargs)
