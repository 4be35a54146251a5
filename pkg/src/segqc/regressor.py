"""Dice prediction without ground truth.

A case is summarised by a fixed-order feature vector computed from an
auxiliary map (the image, the uncertainty map or the error map) paired
with the averaged prediction map. A one-hidden-layer tanh network maps
standardized features to a Dice estimate; it is trained with mini-batch
Adam on the Huber loss, using hand-derived gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateInputError
from .maps import voxelwise_sum
from .volume import as_probability_map, as_scalar_volume, check_same_shape

PairKind = Literal["image", "uncertainty", "error"]
PAIR_KINDS = ("image", "uncertainty", "error")

HIST_BINS = 8
FEATURE_NAMES = (
    "aux_mean",
    "aux_std",
    "aux_min",
    "aux_max",
    "aux_vs",
    "pred_vs",
    "lesion_voxels",
    "aux_mean_inside",
    "aux_mean_outside",
    *(f"aux_hist_{i}" for i in range(HIST_BINS)),
    "boundary_voxels",
)
MODEL_FORMAT = "segqc-dice-regressor"
MODEL_VERSION = 1


def boundary_voxel_count(mask: np.ndarray) -> int:
    """Foreground voxels with at least one background 6-neighbour.

    Voxels outside the grid count as background.
    """
    padded = np.pad(mask, 1, constant_values=False)
    core = padded[1:-1, 1:-1, 1:-1]
    interior = core.copy()
    for axis in range(3):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return int((core & ~interior).sum())


def _histogram(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        hist = np.zeros(HIST_BINS)
        hist[0] = 1.0
        return hist
    counts, _ = np.histogram(values, bins=HIST_BINS, range=(lo, hi))
    return counts / values.size


def extract_features(aux, pred, kind: PairKind = "uncertainty") -> np.ndarray:
    """Feature vector for an (auxiliary map, prediction map) pair.

    The layout is given by ``FEATURE_NAMES`` and is the same for every
    ``kind``; the kind only names which auxiliary map was supplied.
    Histogram entries are fractions of voxels over the aux map's own range.
    """
    if kind not in PAIR_KINDS:
        raise ValueError(f"unknown pair kind {kind!r}")
    aux = as_scalar_volume(aux)
    pred = as_probability_map(pred)
    check_same_shape(aux, pred)
    lesion = pred > 0.5
    n_lesion = int(lesion.sum())
    inside = float(aux[lesion].mean()) if n_lesion else 0.0
    outside = float(aux[~lesion].mean()) if n_lesion < aux.size else 0.0
    feats = [
        aux.mean(),
        aux.std(),
        aux.min(),
        aux.max(),
        voxelwise_sum(aux),
        voxelwise_sum(pred),
        n_lesion,
        inside,
        outside,
        *_histogram(aux),
        boundary_voxel_count(lesion),
    ]
    return np.asarray(feats, dtype=np.float64)


def huber_loss(true, pred, delta: float = 1.0):
    """Huber loss with the linear branch ``delta*|r| - delta/2``.

    For ``delta == 1`` this is the usual Huber loss; for other deltas the
    linear branch does not meet the quadratic one at ``|r| == delta``.
    Works element-wise on arrays.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    r = np.abs(np.asarray(true, dtype=np.float64) - np.asarray(pred, dtype=np.float64))
    out = np.where(r <= delta, 0.5 * r * r, delta * r - 0.5 * delta)
    return float(out) if out.ndim == 0 else out


def huber_grad(true, pred, delta: float = 1.0) -> np.ndarray:
    """Derivative of :func:`huber_loss` with respect to ``pred``."""
    r = np.asarray(true, dtype=np.float64) - np.asarray(pred, dtype=np.float64)
    return np.where(np.abs(r) <= delta, -r, -delta * np.sign(r))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 8
    delta: float = 1.0
    seed: int = 0
    hidden: int = 16

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs, batch_size and hidden must be >= 1")


@dataclass
class RegressorModel:
    kind: str
    n_features: int
    keep: np.ndarray  # indices of features with nonzero training variance
    mean: np.ndarray
    std: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    dropped: list[int] = field(default_factory=list)

    def standardize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return (X[:, self.keep] - self.mean) / self.std

    def raw_output(self, X) -> np.ndarray:
        params = (self.W1, self.b1, self.w2, self.b2)
        return forward(params, self.standardize(X))[0]

    def predict_batch(self, X) -> np.ndarray:
        return np.clip(self.raw_output(X), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "extractor": {
                "kind": self.kind,
                "n_features": self.n_features,
                "feature_names": list(FEATURE_NAMES) if self.n_features == len(FEATURE_NAMES) else None,
            },
            "standardization": {
                "keep": [int(i) for i in self.keep],
                "dropped": [int(i) for i in self.dropped],
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
            },
            "layers": {
                "hidden": {"shape": list(self.W1.shape), "weight": self.W1.tolist(), "bias": self.b1.tolist()},
                "output": {"shape": [1, len(self.w2)], "weight": self.w2.tolist(), "bias": float(self.b2)},
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} document")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        st, layers = d["standardization"], d["layers"]
        W1 = np.asarray(layers["hidden"]["weight"], dtype=np.float64).reshape(layers["hidden"]["shape"])
        return cls(
            kind=d["extractor"]["kind"],
            n_features=int(d["extractor"]["n_features"]),
            keep=np.asarray(st["keep"], dtype=np.intp),
            mean=np.asarray(st["mean"], dtype=np.float64),
            std=np.asarray(st["std"], dtype=np.float64),
            W1=W1,
            b1=np.asarray(layers["hidden"]["bias"], dtype=np.float64),
            w2=np.asarray(layers["output"]["weight"], dtype=np.float64),
            b2=float(layers["output"]["bias"]),
            dropped=list(st["dropped"]),
        )


def save_model(model: RegressorModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> RegressorModel:
    return RegressorModel.from_dict(json.loads(Path(path).read_text()))


def predict(model: RegressorModel, features) -> float:
    """Predicted Dice for one feature vector, clamped to [0, 1]."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("predict takes a single feature vector")
    return float(model.predict_batch(f)[0])


def forward(params, Z):
    W1, b1, w2, b2 = params
    H = np.tanh(Z @ W1.T + b1)
    return H @ w2 + b2, H


def loss_and_grad(params, Z, y, delta: float):
    """Mean Huber loss over a batch and its gradient for each parameter."""
    W1, b1, w2, b2 = params
    out, H = forward(params, Z)
    n = len(y)
    loss = float(np.mean(huber_loss(y, out, delta)))
    d_out = huber_grad(y, out, delta) / n
    g_w2 = H.T @ d_out
    g_b2 = float(d_out.sum())
    d_act = np.outer(d_out, w2) * (1.0 - H * H)
    g_W1 = d_act.T @ Z
    g_b1 = d_act.sum(axis=0)
    return loss, (g_W1, g_b1, g_w2, g_b2)


def _as_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dataset, tuple) and len(dataset) == 2 and np.ndim(dataset[0]) == 2:
        X, y = dataset
    else:
        pairs = list(dataset)
        X = [p[0] for p in pairs]
        y = [p[1] for p in pairs]
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("dataset must be a sequence of (feature vector, Dice) pairs")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("dataset contains non-finite values")
    return X, y


def init_model(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, kind: str = "uncertainty") -> RegressorModel:
    rng = np.random.default_rng(cfg.seed)
    std = X.std(axis=0)
    keep = np.flatnonzero(std > 0)
    dropped = [int(i) for i in np.flatnonzero(std == 0)]
    d = len(keep)
    if d == 0:
        raise DegenerateInputError("every feature is constant over the training set")
    W1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(cfg.hidden, d))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(cfg.hidden), size=cfg.hidden)
    return RegressorModel(
        kind=kind,
        n_features=X.shape[1],
        keep=keep,
        mean=X[:, keep].mean(axis=0),
        std=std[keep],
        W1=W1,
        b1=np.zeros(cfg.hidden),
        w2=w2,
        b2=float(y.mean()),
        dropped=dropped,
    )


def train_regressor(
    dataset, cfg: TrainConfig | None = None, kind: str = "uncertainty"
) -> tuple[RegressorModel, list[float]]:
    """Fit a regressor with mini-batch Adam on the Huber loss.

    ``dataset`` is a sequence of ``(features, true_dice)`` pairs or an
    ``(X, y)`` tuple. Returns the model and the full-training-set loss
    recorded after every epoch. Output is unclamped during training.
    Training is deterministic for a fixed ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    X, y = _as_dataset(dataset)
    if len(X) < 2 * cfg.batch_size:
        raise ValueError(f"need at least {2 * cfg.batch_size} samples for batch size {cfg.batch_size}")
    if ((y < 0) | (y > 1)).any():
        raise ValueError("target Dice values must lie in [0, 1]")
    if np.all(y == y[0]):
        raise DegenerateInputError("all target Dice values are equal; nothing to regress")

    model = init_model(X, y, cfg, kind)
    Z = model.standardize(X)
    params = [model.W1, model.b1, model.w2, np.float64(model.b2)]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([cfg.seed, 1])
    history = []
    t = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(Z))
        for start in range(0, len(Z), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = loss_and_grad(params, Z[idx], y[idx], cfg.delta)
            t += 1
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for i, g in enumerate(grads):
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g
                params[i] = params[i] - cfg.learning_rate * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + cfg.eps)
        history.append(loss_and_grad(params, Z, y, cfg.delta)[0])

    model.W1, model.b1, model.w2 = params[0], params[1], params[2]
    model.b2 = float(params[3])
    return model, history

