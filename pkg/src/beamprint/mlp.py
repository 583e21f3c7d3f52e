"""Fully-connected position regressor, written against plain numpy.

Architecture: configurable hidden stack with tanh or relu, linear output
of width 2 (the x, y estimate in normalized label space). Training is
mini-batch adam on mean squared error with early stopping on the
training loss. Everything is deterministic given (seed, data, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DataError, TrainingDivergenceError
from .features import (
    FeatureSet,
    NormalizationStats,
    apply,
    apply_labels,
    invert_labels,
    normalizer_from_dict,
    normalizer_to_dict,
)

OUTPUT_WIDTH = 2

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: Tuple[int, ...] = (64,)
    activation: str = "tanh"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    min_delta: float = 1e-4
    rng_seed: int = 0


def validate_mlp_config(config: MlpConfig) -> None:
    if not config.hidden_layers or any(w < 1 for w in config.hidden_layers):
        raise ConfigurationError("hidden layer widths must be positive")
    if config.activation not in _ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {config.activation!r}")
    if config.learning_rate <= 0:
        raise ConfigurationError("learning rate must be positive")
    if not 0 <= config.beta1 < 1 or not 0 <= config.beta2 < 1:
        raise ConfigurationError("adam betas must lie in [0, 1)")
    if config.epsilon <= 0:
        raise ConfigurationError("adam epsilon must be positive")
    if config.batch_size < 1:
        raise ConfigurationError("batch size must be positive")
    if config.max_epochs < 1:
        raise ConfigurationError("max epochs must be positive")
    if config.patience < 1:
        raise ConfigurationError("early-stopping patience must be positive")
    if config.min_delta < 0:
        raise ConfigurationError("early-stopping min delta must be non-negative")


@dataclass
class MlpModel:
    weights: List[np.ndarray]  # layer l maps (fan_in,) -> (fan_out,), stored (fan_in, fan_out)
    biases: List[np.ndarray]
    config: MlpConfig
    normalizer: Optional[NormalizationStats] = None
    loss_history: List[float] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    final_loss: float
    loss_history: Tuple[float, ...]
    stopped_early: bool


def init_model(config: MlpConfig, input_width: int) -> MlpModel:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    validate_mlp_config(config)
    if input_width < 1:
        raise ConfigurationError("input width must be positive")
    rng = np.random.default_rng(config.rng_seed)
    widths = [input_width, *config.hidden_layers, OUTPUT_WIDTH]
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, config=config)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def _forward_cached(model: MlpModel, x: np.ndarray):
    acts = [x]
    pre = []
    last = len(model.weights) - 1
    a = x
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if l == last else _activate(z, model.config.activation)
        acts.append(a)
    return acts, pre


def forward(model: MlpModel, values: np.ndarray) -> np.ndarray:
    """Raw network output in normalized label space.

    Accepts a single vector or a batch; the input is expected to be
    normalized already (predict() handles the full raw-to-metres path).
    """
    x = np.asarray(values, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_width:
        raise DataError(f"input width {x.shape[1]} does not match model width {model.input_width}")
    acts, _ = _forward_cached(model, x)
    out = acts[-1]
    return out[0] if single else out


def loss_and_gradients(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """MSE over the batch and both output dims, with exact gradients.

    Returns (loss, weight_grads, bias_grads) where the gradient lists
    line up with model.weights and model.biases.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0], OUTPUT_WIDTH):
        raise DataError("loss needs x of shape (n, d) and y of shape (n, 2)")
    n = x.shape[0]
    acts, pre = _forward_cached(model, x)
    diff = acts[-1] - y
    loss = float(np.mean(diff * diff))

    grads_w = [np.empty_like(w) for w in model.weights]
    grads_b = [np.empty_like(b) for b in model.biases]
    delta = 2.0 * diff / (n * OUTPUT_WIDTH)
    for l in range(len(model.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * _activate_grad(pre[l - 1], model.config.activation)
    return loss, grads_w, grads_b


@dataclass
class AdamState:
    m_w: List[np.ndarray]
    v_w: List[np.ndarray]
    m_b: List[np.ndarray]
    v_b: List[np.ndarray]
    t: int = 0


def init_adam(model: MlpModel) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in model.weights],
        v_w=[np.zeros_like(w) for w in model.weights],
        m_b=[np.zeros_like(b) for b in model.biases],
        v_b=[np.zeros_like(b) for b in model.biases],
    )


def adam_step(model: MlpModel, grads_w, grads_b, state: AdamState, config: MlpConfig) -> None:
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for l in range(len(model.weights)):
        state.m_w[l] = b1 * state.m_w[l] + (1 - b1) * grads_w[l]
        state.v_w[l] = b2 * state.v_w[l] + (1 - b2) * grads_w[l] ** 2
        m_hat = state.m_w[l] / corr1
        v_hat = state.v_w[l] / corr2
        model.weights[l] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)

        state.m_b[l] = b1 * state.m_b[l] + (1 - b1) * grads_b[l]
        state.v_b[l] = b2 * state.v_b[l] + (1 - b2) * grads_b[l] ** 2
        m_hat = state.m_b[l] / corr1
        v_hat = state.v_b[l] / corr2
        model.biases[l] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


def train(model: MlpModel, train_set: FeatureSet, config: Optional[MlpConfig] = None) -> TrainReport:
    """Mini-batch adam with early stopping on the epoch training loss.

    The model's bound normalizer maps features and labels into training
    space; the per-epoch loss is the batch-size weighted mean of batch
    losses. An epoch that fails to beat the best loss by min_delta
    burns one unit of patience; running out of patience stops training
    with the last (not best) weights kept.
    """
    config = config or model.config
    validate_mlp_config(config)
    if model.normalizer is None:
        raise ConfigurationError("model needs a bound normalizer before training")
    if len(train_set) < 1:
        raise DataError("training needs at least one feature vector")

    x = apply(model.normalizer, train_set.values)
    y = apply_labels(model.normalizer, train_set.labels)
    n = x.shape[0]
    rng = np.random.default_rng(config.rng_seed)
    state = init_adam(model)

    history: List[float] = []
    best: Optional[float] = None
    wait = 0
    stopped_early = False
    for _ in range(config.max_epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, gw, gb = loss_and_gradients(model, x[idx], y[idx])
            adam_step(model, gw, gb, state, config)
            epoch_loss += loss * len(idx)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergenceError(
                f"training loss became non-finite at epoch {len(history) + 1}"
            )
        history.append(epoch_loss)
        if best is None or epoch_loss < best - config.min_delta:
            best = epoch_loss
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                stopped_early = True
                break

    model.loss_history = history
    return TrainReport(
        epochs_run=len(history),
        final_loss=history[-1],
        loss_history=tuple(history),
        stopped_early=stopped_early,
    )


def predict(model: MlpModel, values: np.ndarray) -> np.ndarray:
    """Positions in metres for raw (unnormalized) feature vectors."""
    if model.normalizer is None:
        raise ConfigurationError("model needs a bound normalizer before predicting")
    z = apply(model.normalizer, values)
    out = forward(model, z)
    return invert_labels(model.normalizer, out)


# ---------------------------------------------------------------------------
# Serialization


def mlp_config_to_dict(config: MlpConfig) -> dict:
    return {
        "hidden_layers": list(config.hidden_layers),
        "activation": config.activation,
        "learning_rate": config.learning_rate,
        "beta1": config.beta1,
        "beta2": config.beta2,
        "epsilon": config.epsilon,
        "batch_size": config.batch_size,
        "max_epochs": config.max_epochs,
        "patience": config.patience,
        "min_delta": config.min_delta,
        "rng_seed": config.rng_seed,
    }


def mlp_config_from_dict(d: dict) -> MlpConfig:
    allowed = set(mlp_config_to_dict(MlpConfig()))
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown mlp config keys: {sorted(unknown)}")
    config = MlpConfig(
        hidden_layers=tuple(int(w) for w in d.get("hidden_layers", (64,))),
        activation=str(d.get("activation", "tanh")),
        learning_rate=float(d.get("learning_rate", 1e-3)),
        beta1=float(d.get("beta1", 0.9)),
        beta2=float(d.get("beta2", 0.999)),
        epsilon=float(d.get("epsilon", 1e-8)),
        batch_size=int(d.get("batch_size", 32)),
        max_epochs=int(d.get("max_epochs", 500)),
        patience=int(d.get("patience", 20)),
        min_delta=float(d.get("min_delta", 1e-4)),
        rng_seed=int(d.get("rng_seed", 0)),
    )
    validate_mlp_config(config)
    return config


def mlp_to_dict(model: MlpModel) -> dict:
    return {
        "config": mlp_config_to_dict(model.config),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "normalizer": None if model.normalizer is None else normalizer_to_dict(model.normalizer),
        "loss_history": list(model.loss_history),
    }


def mlp_from_dict(d: dict) -> MlpModel:
    try:
        weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        config = mlp_config_from_dict(d["config"])
    except KeyError as e:
        raise ConfigurationError(f"mlp blob is missing key {e}") from e
    norm = d.get("normalizer")
    return MlpModel(
        weights=weights,
        biases=biases,
        config=config,
        normalizer=None if norm is None else normalizer_from_dict(norm),
        loss_history=[float(v) for v in d.get("loss_history", [])],
    )
