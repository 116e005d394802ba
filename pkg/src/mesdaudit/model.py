"""Logistic regression and a two-hidden-layer ReLU network, trained with numpy SGD."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from mesdaudit.errors import ArtifactError, ConfigError, ShapeError, TrainingError

HIDDEN = (32, 16)
BATCH_SIZE = 32
KINDS = ("logistic", "mlp2")
FORMAT_VERSION = 1

Params = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class HyperParams:
    threshold: float = 0.5
    l2: float = 1e-4
    learning_rate: float = 0.01
    epochs: int = 50
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not self.l2 >= 0.0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if isinstance(self.epochs, bool) or int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        object.__setattr__(self, "epochs", int(self.epochs))


@dataclass(frozen=True, eq=False)
class Classifier:
    kind: str
    params: Params
    hp: HyperParams
    train_seed: int

    @property
    def n_features(self) -> int:
        return self.params[0][0].shape[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return predict_proba(self, X)


def layer_shapes(kind: str, d: int) -> list[tuple[int, int]]:
    if kind == "logistic":
        widths = [d, 1]
    elif kind == "mlp2":
        widths = [d, *HIDDEN, 1]
    else:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return list(zip(widths[:-1], widths[1:]))


def init_params(kind: str, d: int, rng: np.random.Generator) -> Params:
    params = []
    for fan_in, fan_out in layer_shapes(kind, d):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
    return params


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and stays inside [0, 1]
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward_logits(params: Params, X: np.ndarray, masks: list[np.ndarray] | None = None) -> np.ndarray:
    h = X
    for i, (W, b) in enumerate(params[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        if masks is not None:
            h = h * masks[i]
    W, b = params[-1]
    return (h @ W + b)[:, 0]


def loss_and_grads(
    params: Params,
    X: np.ndarray,
    y: np.ndarray,
    l2: float,
    masks: list[np.ndarray] | None = None,
) -> tuple[float, Params]:
    """Mean binary cross-entropy plus ``l2 * sum ||W||^2`` (biases unpenalized).

    ``masks`` are pre-scaled dropout multipliers per hidden layer.
    """
    acts = [X]
    pre = []
    h = X
    for i, (W, b) in enumerate(params[:-1]):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[i]
        acts.append(h)
    W, b = params[-1]
    logits = (h @ W + b)[:, 0]
    n = X.shape[0]
    # softplus(z) - y z, written to avoid overflow
    ce = np.maximum(logits, 0.0) - y * logits + np.log1p(np.exp(-np.abs(logits)))
    loss = float(ce.mean() + l2 * sum(float(np.sum(Wk * Wk)) for Wk, _ in params))

    delta = ((_sigmoid(logits) - y) / n)[:, None]
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    for k in range(len(params) - 1, -1, -1):
        Wk, _ = params[k]
        grads[k] = (acts[k].T @ delta + 2.0 * l2 * Wk, delta.sum(axis=0))
        if k > 0:
            delta = delta @ Wk.T
            if masks is not None:
                delta = delta * masks[k - 1]
            delta = delta * (pre[k - 1] > 0)
    return loss, grads


def train(
    X: np.ndarray,
    y: np.ndarray,
    kind: str = "mlp2",
    hp: HyperParams | None = None,
    seed: int = 0,
) -> Classifier:
    """Mini-batch SGD on cross-entropy + L2.  Deterministic for fixed inputs."""
    hp = hp or HyperParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigError("training split is empty")
    if y.shape != (X.shape[0],):
        raise ShapeError("labels must match the number of training rows")
    rng = np.random.default_rng(seed)
    params = init_params(kind, X.shape[1], rng)
    n = X.shape[0]
    keep = 1.0 - hp.dropout
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, BATCH_SIZE):
            idx = order[start : start + BATCH_SIZE]
            masks = None
            if hp.dropout > 0 and len(params) > 1:
                masks = [
                    (rng.random((len(idx), W.shape[1])) < keep) / keep for W, _ in params[:-1]
                ]
            loss, grads = loss_and_grads(params, X[idx], y[idx], hp.l2, masks)
            epoch_loss += loss * len(idx)
            params = [(W - hp.learning_rate * gW, b - hp.learning_rate * gb) for (W, b), (gW, gb) in zip(params, grads)]
        if not np.isfinite(epoch_loss) or not all(np.isfinite(W).all() for W, _ in params):
            raise TrainingError(f"training diverged at epoch {epoch}", epoch=epoch)
    return Classifier(kind=kind, params=params, hp=hp, train_seed=seed)


_CHUNK = 1 << 16


def predict_proba(c: Classifier, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != c.n_features:
        raise ShapeError(f"expected {c.n_features} feature columns, got shape {X.shape}")
    if X.shape[0] <= _CHUNK:
        return _sigmoid(forward_logits(c.params, X))
    return np.concatenate(
        [_sigmoid(forward_logits(c.params, X[i : i + _CHUNK])) for i in range(0, X.shape[0], _CHUNK)]
    )


def predict_label(c: Classifier, X: np.ndarray) -> np.ndarray:
    """1 iff probability >= threshold (ties go to the positive class)."""
    return (predict_proba(c, X) >= c.hp.threshold).astype(np.int64)


def weight_norm(c: Classifier) -> float:
    return float(np.sqrt(sum(np.sum(W * W) for W, _ in c.params)))


# ----------------------------------------------------------------- serialization


def _encode(a: np.ndarray) -> list[str]:
    return [format(float(v), ".17g") for v in np.ravel(a)]


def to_json(c: Classifier) -> dict[str, Any]:
    return {
        "format": "mesdaudit.model",
        "version": FORMAT_VERSION,
        "kind": c.kind,
        "hp": asdict(c.hp),
        "seed": c.train_seed,
        "layers": [
            {"shape": list(W.shape), "weights": _encode(W), "bias": _encode(b)} for W, b in c.params
        ],
    }


def from_json(doc: dict[str, Any]) -> Classifier:
    try:
        if doc.get("version") != FORMAT_VERSION:
            raise ArtifactError(f"unsupported model format version {doc.get('version')!r}")
        params = []
        for layer in doc["layers"]:
            shape = tuple(layer["shape"])
            W = np.array([float(v) for v in layer["weights"]]).reshape(shape)
            b = np.array([float(v) for v in layer["bias"]])
            params.append((W, b))
        return Classifier(kind=doc["kind"], params=params, hp=HyperParams(**doc["hp"]), train_seed=int(doc["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed model document: {exc}") from exc


def dumps(c: Classifier) -> str:
    return json.dumps(to_json(c), indent=1)
