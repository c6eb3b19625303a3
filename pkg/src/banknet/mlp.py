"""Feed-forward binary classifier built directly on numpy.

Fixed topology: 24 inputs, three ReLU hidden layers, a single sigmoid output.
Inverted dropout after the first and second hidden layers during training
only, so inference needs no rescale. Weights start from a truncated normal
(mean 0, stddev 0.2, cut at two stddevs), biases at zero.

The input-sensitivity pass accumulates dY/dInput backwards through the
layers, which is arithmetically the sum over all forward paths of the
products of path weights and activation gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dataset import SplitAssignment
from .errors import DimensionError, DivergenceError

N_INPUTS = 24

DEFAULT_STRUCTURES = ((8, 16, 8), (4, 8, 16), (16, 8, 4))
DEFAULT_SOLVERS = ("sgd", "adam", "rmsprop")
DEFAULT_LEARNING_RATES = (0.001, 0.05, 0.1)

_TRUNC_STDDEVS = 2.0
_LOSS_CLIP = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple[int, int, int] = (8, 16, 8)
    solver: str = "adam"
    learning_rate: float = 0.001
    dropout_prob: float = 0.1
    init_stddev: float = 0.2
    epochs: int = 300
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if len(self.hidden_layers) != 3 or any(h <= 0 for h in self.hidden_layers):
            raise ValueError(f"exactly 3 positive hidden layers required, got {self.hidden_layers}")
        if self.solver not in DEFAULT_SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; use one of {DEFAULT_SOLVERS}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # shapes chain 24 -> h1 -> h2 -> h3 -> 1
    biases: list[np.ndarray]
    config: MlpConfig
    tuning_record: tuple[dict, ...] = ()

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


@dataclass(frozen=True)
class SensitivityReport:
    """Mean output gradient per input over the evaluation samples."""

    gradients: np.ndarray
    sample_count: int

    def __post_init__(self):
        g = np.asarray(self.gradients, dtype=float)
        if g.shape != (N_INPUTS,):
            raise DimensionError(f"expected {N_INPUTS} gradients, got shape {g.shape}")
        if not np.isfinite(g).all():
            raise ValueError("sensitivity gradients must be finite")
        object.__setattr__(self, "gradients", g)


def sigmoid_grad(z: np.ndarray) -> np.ndarray:
    """d sigmoid/dz = e^z / (1 + e^z)^2, evaluated overflow-free via |z|."""
    t = np.exp(-np.abs(z))
    return t / (1.0 + t) ** 2


def _truncated_normal(rng: np.random.Generator, shape, stddev: float) -> np.ndarray:
    out = rng.normal(0.0, stddev, size=shape)
    bound = _TRUNC_STDDEVS * stddev
    mask = np.abs(out) > bound
    while mask.any():
        out[mask] = rng.normal(0.0, stddev, size=int(mask.sum()))
        mask = np.abs(out) > bound
    return out


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def update(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def update(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _RmsProp:
    def __init__(self, lr, decay=0.9, eps=1e-8):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.v = None

    def update(self, params, grads):
        if self.v is None:
            self.v = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.v):
            v *= self.decay
            v += (1 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(v) + self.eps)


_SOLVERS = {"sgd": _Sgd, "adam": _Adam, "rmsprop": _RmsProp}


def _check_inputs(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != N_INPUTS:
        raise DimensionError(f"expected an (m, {N_INPUTS}) matrix, got shape {x.shape}")
    return x


def train(x, y, config: MlpConfig) -> MlpModel:
    """Minimize binary cross-entropy with the configured solver.

    Dropout is active during training only; a non-finite epoch loss raises
    DivergenceError naming the epoch and learning rate.
    """
    x = _check_inputs(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != x.shape[0]:
        raise DimensionError(f"{y.size} labels for {x.shape[0]} rows")
    if x.shape[0] < config.batch_size:
        raise ValueError(
            f"{x.shape[0]} rows is fewer than batch_size={config.batch_size}"
        )
    rng = np.random.default_rng(config.rng_seed)
    sizes = (N_INPUTS,) + config.hidden_layers + (1,)
    weights = [
        _truncated_normal(rng, (sizes[i], sizes[i + 1]), config.init_stddev)
        for i in range(4)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(4)]
    solver = _SOLVERS[config.solver](config.learning_rate)
    p_drop = config.dropout_prob
    n = x.shape[0]

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            rows = perm[start : start + config.batch_size]
            xb, yb = x[rows], y[rows]
            m = xb.shape[0]

            z1 = xb @ weights[0] + biases[0]
            a1 = np.maximum(z1, 0.0)
            if p_drop > 0.0:
                mask1 = (rng.random(a1.shape) >= p_drop) / (1.0 - p_drop)
                a1d = a1 * mask1
            else:
                a1d = a1
            z2 = a1d @ weights[1] + biases[1]
            a2 = np.maximum(z2, 0.0)
            if p_drop > 0.0:
                mask2 = (rng.random(a2.shape) >= p_drop) / (1.0 - p_drop)
                a2d = a2 * mask2
            else:
                a2d = a2
            z3 = a2d @ weights[2] + biases[2]
            a3 = np.maximum(z3, 0.0)
            z4 = (a3 @ weights[3] + biases[3]).ravel()
            prob = expit(z4)

            pc = np.clip(prob, _LOSS_CLIP, 1.0 - _LOSS_CLIP)
            epoch_loss += -float(np.sum(yb * np.log(pc) + (1 - yb) * np.log(1 - pc)))

            dz4 = ((prob - yb) / m)[:, None]
            gw4 = a3.T @ dz4
            gb4 = dz4.sum(axis=0)
            da3 = dz4 @ weights[3].T
            dz3 = da3 * (z3 > 0)
            gw3 = a2d.T @ dz3
            gb3 = dz3.sum(axis=0)
            da2 = dz3 @ weights[2].T
            if p_drop > 0.0:
                da2 = da2 * mask2
            dz2 = da2 * (z2 > 0)
            gw2 = a1d.T @ dz2
            gb2 = dz2.sum(axis=0)
            da1 = dz2 @ weights[1].T
            if p_drop > 0.0:
                da1 = da1 * mask1
            dz1 = da1 * (z1 > 0)
            gw1 = xb.T @ dz1
            gb1 = dz1.sum(axis=0)

            solver.update(
                weights + biases,
                [gw1, gw2, gw3, gw4, gb1, gb2, gb3, gb4],
            )
        if not np.isfinite(epoch_loss):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch} "
                f"(learning_rate={config.learning_rate})"
            )
    return MlpModel(weights=weights, biases=biases, config=config)


def _forward_pre_activations(model: MlpModel, x: np.ndarray):
    """Pre-activations of every layer for the no-dropout forward pass."""
    z1 = x @ model.weights[0] + model.biases[0]
    z2 = np.maximum(z1, 0.0) @ model.weights[1] + model.biases[1]
    z3 = np.maximum(z2, 0.0) @ model.weights[2] + model.biases[2]
    z4 = np.maximum(z3, 0.0) @ model.weights[3] + model.biases[3]
    return z1, z2, z3, z4


def predict(model: MlpModel, x) -> np.ndarray:
    """Output probabilities (forward pass without dropout)."""
    x = _check_inputs(x)
    _, _, _, z4 = _forward_pre_activations(model, x)
    return expit(z4.ravel())


def classify(model: MlpModel, x, threshold: float = 0.5) -> np.ndarray:
    return (predict(model, x) >= threshold).astype(int)


def accuracy(model: MlpModel, x, y) -> float:
    y = np.asarray(y, dtype=int).reshape(-1)
    return float(np.mean(classify(model, x) == y))


def tune(
    x,
    y,
    splits: SplitAssignment,
    structures=DEFAULT_STRUCTURES,
    solvers=DEFAULT_SOLVERS,
    learning_rates=DEFAULT_LEARNING_RATES,
    base_config: MlpConfig = MlpConfig(),
) -> MlpModel:
    """Grid search on validation accuracy, then retrain the winner.

    Each candidate trains with its own derived seed (base seed + grid index)
    so results do not depend on evaluation order. Ties break toward the lower
    learning rate, then grid order.
    """
    grid = list(product(structures, solvers, learning_rates))
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    x = _check_inputs(x)
    y = np.asarray(y, dtype=int).reshape(-1)
    xt, yt = x[splits.train], y[splits.train]
    xv, yv = x[splits.validation], y[splits.validation]

    record = []
    for idx, (structure, solver, lr) in enumerate(grid):
        cfg = replace(
            base_config,
            hidden_layers=tuple(structure),
            solver=solver,
            learning_rate=lr,
            rng_seed=base_config.rng_seed + idx,
        )
        model = train(xt, yt, cfg)
        record.append(
            {
                "hidden_layers": list(cfg.hidden_layers),
                "solver": solver,
                "learning_rate": lr,
                "rng_seed": cfg.rng_seed,
                "validation_accuracy": accuracy(model, xv, yv),
            }
        )

    best_idx = max(
        range(len(record)),
        key=lambda i: (
            record[i]["validation_accuracy"],
            -record[i]["learning_rate"],
            -i,
        ),
    )
    structure, solver, lr = grid[best_idx]
    best_cfg = replace(
        base_config,
        hidden_layers=tuple(structure),
        solver=solver,
        learning_rate=lr,
        rng_seed=base_config.rng_seed + best_idx,
    )
    model = train(xt, yt, best_cfg)
    model.tuning_record = tuple(record)
    return model


def input_gradients(model: MlpModel, x) -> np.ndarray:
    """Per-sample dY/dInput for the 24 inputs, by backward accumulation.

    ReLU contributes gradient 1 only where the pre-activation is strictly
    positive (0 at and below zero); the sigmoid contributes e^z/(1+e^z)^2.
    """
    x = _check_inputs(x)
    z1, z2, z3, z4 = _forward_pre_activations(model, x)
    g = sigmoid_grad(z4)  # dY/dz at the output node
    g = (g @ model.weights[3].T) * (z3 > 0)
    g = (g @ model.weights[2].T) * (z2 > 0)
    g = (g @ model.weights[1].T) * (z1 > 0)
    return g @ model.weights[0].T


def input_sensitivity(model: MlpModel, x_eval) -> SensitivityReport:
    """Arithmetic mean of per-sample output gradients over the evaluation set."""
    grads = input_gradients(model, x_eval)
    return SensitivityReport(gradients=grads.mean(axis=0), sample_count=grads.shape[0])


def save_model(model: MlpModel, path, extra: dict | None = None) -> None:
    payload = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "config": {
            "hidden_layers": list(model.config.hidden_layers),
            "solver": model.config.solver,
            "learning_rate": model.config.learning_rate,
            "dropout_prob": model.config.dropout_prob,
            "init_stddev": model.config.init_stddev,
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
            "rng_seed": model.config.rng_seed,
        },
        "tuning_record": list(model.tuning_record),
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MlpModel:
    with open(Path(path), encoding="utf-8") as fh:
        payload = json.load(fh)
    cfg = payload["config"]
    config = MlpConfig(
        hidden_layers=tuple(cfg["hidden_layers"]),
        solver=cfg["solver"],
        learning_rate=cfg["learning_rate"],
        dropout_prob=cfg["dropout_prob"],
        init_stddev=cfg["init_stddev"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        rng_seed=cfg["rng_seed"],
    )
    weights = [np.asarray(w, dtype=float) for w in payload["weights"]]
    biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
    return MlpModel(
        weights=weights,
        biases=biases,
        config=config,
        tuning_record=tuple(payload.get("tuning_record", ())),
    )
