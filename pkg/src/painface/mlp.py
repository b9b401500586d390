"""First-level frame scorer: a small fully-connected network.

Four layers (three ReLU hidden layers, linear scalar output) trained with
minibatch gradient descent on mean-squared error. Training is weakly
labeled: every frame drawn from a sequence carries that sequence's scaled
pain score. Inverted dropout (rate 0.5 by default) is applied after the
second and third layers during training only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import serialize
from .dataset import SequenceSample


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple[int, int, int] = (200, 100, 50)
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    frames_per_sequence_per_epoch: int = 16
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden) != 3:
            raise ValueError("exactly three hidden widths are required")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("bad training parameters")
        if self.frames_per_sequence_per_epoch < 1:
            raise ValueError("frames_per_sequence_per_epoch must be positive")


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]  # W1..W4, each (fan_in, fan_out)
    biases: list[np.ndarray]  # b1..b4


def init_model(config: MlpConfig) -> MlpModel:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(config.seed)
    dims = [config.input_dim, *config.hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(config=config, weights=weights, biases=biases)


def count_parameters(model: MlpModel) -> int:
    return sum(w.size for w in model.weights) + sum(b.size for b in model.biases)


def _forward_batch(
    model: MlpModel, X: np.ndarray, masks: Sequence[np.ndarray] | None = None
):
    """Forward pass; masks (for hidden layers 2 and 3) enable dropout.

    Returns (outputs (n,), cache) where the cache holds the layer inputs
    needed by the backward pass.
    """
    a = X
    inputs = []  # input to each layer, post-dropout where applicable
    for layer in range(4):
        inputs.append(a)
        z = a @ model.weights[layer] + model.biases[layer]
        if layer < 3:
            a = np.maximum(z, 0.0)
            if masks is not None and layer in (1, 2):
                a = a * masks[layer - 1]
        else:
            a = z
    return a[:, 0], inputs


def _make_masks(model: MlpModel, n: int, rng: np.random.Generator):
    keep = 1.0 - model.config.dropout_rate
    if keep >= 1.0:
        return None
    return [
        (rng.random((n, width)) < keep) / keep
        for width in model.config.hidden[1:]
    ]


def forward(
    model: MlpModel,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Score one frame. Training mode draws dropout masks from ``rng``."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    masks = None
    if training and model.config.dropout_rate > 0:
        if rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        masks = _make_masks(model, 1, rng)
    out, _ = _forward_batch(model, x, masks)
    return float(out[0])


def _backward_batch(
    model: MlpModel,
    X: np.ndarray,
    targets: np.ndarray,
    masks: Sequence[np.ndarray] | None,
):
    """MSE loss and parameter gradients for one minibatch."""
    out, inputs = _forward_batch(model, X, masks)
    n = X.shape[0]
    err = out - targets
    loss = float(err @ err) / n
    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    delta = (2.0 * err / n)[:, None]  # dL/dz4
    for layer in (3, 2, 1, 0):
        grad_w[layer] = inputs[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer == 0:
            break
        da = delta @ model.weights[layer].T  # dL/d(input of this layer)
        if masks is not None and layer in (2, 3):
            da = da * masks[layer - 2]
        z_prev = inputs[layer - 1] @ model.weights[layer - 1] + model.biases[layer - 1]
        delta = da * (z_prev > 0)
    return loss, grad_w, grad_b


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    seed: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def train_first_level(
    samples: Iterable[SequenceSample], config: MlpConfig
) -> tuple[MlpModel, TrainReport]:
    """Weak-label training: per epoch, draw frames_per_sequence_per_epoch
    random frames from every sequence (with replacement only when the
    sequence is shorter than that), each labeled with the sequence's scaled
    score, then run shuffled minibatch gradient descent on MSE."""
    samples = list(samples)
    if not samples:
        raise ValueError("no training sequences")
    for s in samples:
        if s.frames.shape[1] != config.input_dim:
            raise ValueError(
                f"{s.sequence_id}: feature dim {s.frames.shape[1]} != "
                f"config input_dim {config.input_dim}"
            )
    model = init_model(config)
    rng = np.random.default_rng(config.seed)
    report = TrainReport(seed=config.seed)
    f = config.frames_per_sequence_per_epoch
    for _ in range(config.epochs):
        parts, labels = [], []
        for s in samples:
            idx = rng.choice(s.n_frames, size=f, replace=s.n_frames < f)
            parts.append(s.frames[idx])
            labels.append(np.full(f, s.label.scaled))
        X = np.concatenate(parts)
        y = np.concatenate(labels)
        order = rng.permutation(X.shape[0])
        X, y = X[order], y[order]
        losses = []
        for lo in range(0, X.shape[0], config.batch_size):
            xb = X[lo:lo + config.batch_size]
            yb = y[lo:lo + config.batch_size]
            masks = _make_masks(model, xb.shape[0], rng)
            loss, grad_w, grad_b = _backward_batch(model, xb, yb, masks)
            for layer in range(4):
                model.weights[layer] -= config.learning_rate * grad_w[layer]
                model.biases[layer] -= config.learning_rate * grad_b[layer]
            losses.append(loss)
        report.epoch_losses.append(float(np.mean(losses)))
    return model, report


def predict_matrix(model: MlpModel, X: np.ndarray) -> np.ndarray:
    out, _ = _forward_batch(model, np.asarray(X, dtype=np.float64))
    return out


def predict_frames(model: MlpModel, sample: SequenceSample) -> np.ndarray:
    """Per-frame scores in the sample's temporal order (inference mode)."""
    return predict_matrix(model, sample.frames)


def hidden_preactivations(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Pre-ReLU values of the three hidden layers (diagnostic)."""
    a = np.asarray(x, dtype=np.float64)[None, :]
    zs = []
    for layer in range(3):
        z = a @ model.weights[layer] + model.biases[layer]
        zs.append(z[0])
        a = np.maximum(z, 0.0)
    return zs


def gradient_check(model: MlpModel, x: np.ndarray, target: float,
                   step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    of the single-sample MSE loss (dropout disabled), over every parameter."""
    x = np.asarray(x, dtype=np.float64)
    X = x[None, :]
    t = np.array([target], dtype=np.float64)
    _, grad_w, grad_b = _backward_batch(model, X, t, None)

    def loss_now() -> float:
        out, _ = _forward_batch(model, X)
        return float((out[0] - target) ** 2)

    worst = 0.0
    for analytic, params in ((grad_w, model.weights), (grad_b, model.biases)):
        for g, p in zip(analytic, params):
            flat_p = p.ravel()
            flat_g = g.ravel()
            for k in range(flat_p.size):
                orig = flat_p[k]
                flat_p[k] = orig + step
                up = loss_now()
                flat_p[k] = orig - step
                down = loss_now()
                flat_p[k] = orig
                numeric = (up - down) / (2 * step)
                denom = max(abs(numeric), abs(flat_g[k]), 1e-8)
                worst = max(worst, abs(numeric - flat_g[k]) / denom)
    return worst


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def mlp_to_dict(model: MlpModel) -> dict[str, Any]:
    c = model.config
    return serialize.wrap("mlp", {
        "config": {
            "input_dim": c.input_dim,
            "hidden": list(c.hidden),
            "dropout_rate": c.dropout_rate,
            "learning_rate": c.learning_rate,
            "epochs": c.epochs,
            "batch_size": c.batch_size,
            "frames_per_sequence_per_epoch": c.frames_per_sequence_per_epoch,
            "seed": c.seed,
        },
        "weights": [serialize.encode_f64(w) for w in model.weights],
        "biases": [serialize.encode_f64(b) for b in model.biases],
    })


def mlp_from_dict(doc: dict[str, Any]) -> MlpModel:
    payload = serialize.unwrap(doc, "mlp")
    cfg = payload["config"]
    config = MlpConfig(
        input_dim=int(cfg["input_dim"]),
        hidden=tuple(int(h) for h in cfg["hidden"]),
        dropout_rate=float(cfg["dropout_rate"]),
        learning_rate=float(cfg["learning_rate"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        frames_per_sequence_per_epoch=int(cfg["frames_per_sequence_per_epoch"]),
        seed=int(cfg["seed"]),
    )
    return MlpModel(
        config=config,
        weights=[serialize.decode_f64(w) for w in payload["weights"]],
        biases=[serialize.decode_f64(b) for b in payload["biases"]],
    )
