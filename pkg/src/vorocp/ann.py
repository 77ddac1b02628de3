"""Dense feed-forward network trained from scratch with Adam.

ReLU hidden layers, one linear output. Supports magnitude pruning on a
linear sparsity schedule and classic dropout (masks during training,
mean-field scaling at inference). Everything is plain numpy and fully
deterministic under a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ParseError

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    hidden_sizes: tuple[int, ...]
    input_dim: int = 6
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(n) for n in self.hidden_sizes))
        if len(self.hidden_sizes) < 1 or any(n < 1 for n in self.hidden_sizes):
            raise ValueError("need at least one hidden layer of positive width")

    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    def parameter_count(self) -> int:
        """Exact number of trainable floats (all weights and biases)."""
        sizes = self.layer_sizes()
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))

    def reported_parameter_count(self) -> int:
        """Size tally used in reporting: the first hidden layer counts
        its biases twice ((input+2) terms per unit). Kept as a fixed
        convention so reported sizes stay comparable; the exact count is
        `parameter_count`."""
        h = self.hidden_sizes
        first = (self.input_dim + 2) * h[0]
        inner = sum(h[i - 1] * h[i] + h[i] for i in range(1, len(h)))
        return first + inner + h[-1] * self.output_dim + self.output_dim

    def connection_count(self) -> int:
        """Weight entries plus first-hidden-layer biases.

        The counting convention used when reporting network size and
        when sizing the depth of sparse variants; it is not the full
        trainable-parameter count.
        """
        sizes = self.layer_sizes()
        weights = sum(sizes[i] * sizes[i + 1] for i in range(len(sizes) - 1))
        return weights + self.hidden_sizes[0]


@dataclass(frozen=True)
class PruneSchedule:
    """Linear sparsity ramp from s0 to s_final, one prune step every
    delta_t epochs starting at epoch t0, n_steps steps in total."""

    s_final: float
    t0: int
    s0: float = 0.0
    delta_t: int = 1
    n_steps: int = 50

    def __post_init__(self):
        if not (0.0 <= self.s0 <= self.s_final < 1.0):
            raise ValueError("need 0 <= s0 <= s_final < 1")
        if self.t0 < 0 or self.delta_t < 1 or self.n_steps < 1:
            raise ValueError("t0 >= 0, delta_t >= 1 and n_steps >= 1 required")


def sparsity_at(t: float, schedule: PruneSchedule) -> float:
    """Target sparsity at epoch t, clamped to the schedule window."""
    span = schedule.n_steps * schedule.delta_t
    t = min(max(t, schedule.t0), schedule.t0 + span)
    return schedule.s_final + (schedule.s0 - schedule.s_final) * (1.0 - (t - schedule.t0) / span)


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    epochs: int
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pruning: PruneSchedule | None = None
    dropout_p: float = 0.0
    dropout_input_p: float | None = None   # defaults to dropout_p / 4

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def input_p(self) -> float:
        return self.dropout_p / 4.0 if self.dropout_input_p is None else self.dropout_input_p


@dataclass
class MlpModel:
    arch: Architecture
    weights: list[np.ndarray]       # weights[l] has shape (n_out, n_in)
    biases: list[np.ndarray]
    masks: list[np.ndarray]         # 1.0 keeps a weight, 0.0 prunes it
    dropout_p: float = 0.0
    dropout_input_p: float = 0.0

    def sparsity(self) -> float:
        total = sum(m.size for m in self.masks)
        kept = sum(int(m.sum()) for m in self.masks)
        return 1.0 - kept / total


def init(arch: Architecture, seed: int, dropout_p: float = 0.0,
         dropout_input_p: float | None = None) -> MlpModel:
    """He-initialized weights, zero biases, all-ones prune masks."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes()
    weights, biases, masks = [], [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        masks.append(np.ones((fan_out, fan_in)))
    return MlpModel(arch, weights, biases, masks, dropout_p=dropout_p,
                    dropout_input_p=dropout_p / 4.0 if dropout_input_p is None else dropout_input_p)


def _sample_masks(model: MlpModel, batch: int, rng: np.random.Generator):
    """Bernoulli keep-masks for the input and each hidden layer."""
    keep_in = 1.0 - model.dropout_input_p
    keep_hidden = 1.0 - model.dropout_p
    input_mask = (rng.random((batch, model.arch.input_dim)) < keep_in).astype(float)
    hidden_masks = [
        (rng.random((batch, n)) < keep_hidden).astype(float)
        for n in model.arch.hidden_sizes
    ]
    return input_mask, hidden_masks


def _forward_cache(model: MlpModel, x: np.ndarray, mode: str,
                   rng: np.random.Generator | None = None):
    """Batched forward pass; returns (outputs, cache for backprop).

    Train mode draws fresh dropout masks (when dropout is active),
    inference scales by the keep probabilities instead.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    use_dropout = model.dropout_p > 0.0 or model.dropout_input_p > 0.0
    if mode == "train" and use_dropout:
        if rng is None:
            raise ValueError("train-mode forward with dropout needs a random generator")
        input_mask, hidden_masks = _sample_masks(model, x.shape[0], rng)
        a = x * input_mask
    else:
        input_mask, hidden_masks = None, None
        a = x * (1.0 - model.dropout_input_p) if use_dropout else x
    activations = [a]
    pre_acts = []
    n_hidden = len(model.arch.hidden_sizes)
    for l in range(n_hidden):
        z = a @ model.weights[l].T + model.biases[l]
        pre_acts.append(z)
        a = np.maximum(z, 0.0)
        if mode == "train" and use_dropout:
            a = a * hidden_masks[l]
        elif use_dropout:
            a = a * (1.0 - model.dropout_p)
        activations.append(a)
    out = a @ model.weights[-1].T + model.biases[-1]
    cache = (activations, pre_acts, hidden_masks)
    return out[:, 0], cache


def forward(model: MlpModel, x, mode: str = "infer",
            rng: np.random.Generator | None = None) -> float:
    """Network output for a single feature vector."""
    out, _ = _forward_cache(model, np.asarray(x, dtype=float)[None, :], mode, rng)
    return float(out[0])


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Inference-mode outputs for a batch of feature rows."""
    out, _ = _forward_cache(model, X, "infer")
    return out


def loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Half mean squared error: ||out - target||^2 / (2 N)."""
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape:
        raise ValueError(f"length mismatch: {outputs.shape} vs {targets.shape}")
    n = outputs.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    return float(((outputs - targets) ** 2).sum() / (2.0 * n))


def gradients(model: MlpModel, X: np.ndarray, y: np.ndarray,
              cache=None, outputs=None):
    """Exact gradients of the half-MSE loss for every weight and bias.

    Pruned weights get an exactly zero gradient. Pass `cache`/`outputs`
    from a train-mode forward to differentiate through dropout masks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if outputs is None or cache is None:
        outputs, cache = _forward_cache(model, X, "infer")
    activations, pre_acts, hidden_masks = cache
    n = X.shape[0]
    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)

    delta = ((outputs - y) / n)[:, None]                   # d loss / d output
    grad_w[-1] = delta.T @ activations[-1] * model.masks[-1]
    grad_b[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1]
    for l in range(len(model.arch.hidden_sizes) - 1, -1, -1):
        if hidden_masks is not None:
            upstream = upstream * hidden_masks[l]
        elif model.dropout_p > 0.0 or model.dropout_input_p > 0.0:
            upstream = upstream * (1.0 - model.dropout_p)
        dz = upstream * (pre_acts[l] > 0.0)
        grad_w[l] = dz.T @ activations[l] * model.masks[l]
        grad_b[l] = dz.sum(axis=0)
        upstream = dz @ model.weights[l]
    return grad_w, grad_b


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adam_step(model: MlpModel, state: AdamState, grads, step_index: int,
              config: TrainConfig) -> MlpModel:
    """One bias-corrected Adam update in place; masked weights stay zero."""
    if step_index < 1:
        raise ValueError("Adam step index starts at 1")
    grad_w, grad_b = grads
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    c1 = 1.0 - b1 ** step_index
    c2 = 1.0 - b2 ** step_index
    for l in range(len(model.weights)):
        state.m_w[l] = b1 * state.m_w[l] + (1 - b1) * grad_w[l]
        state.v_w[l] = b2 * state.v_w[l] + (1 - b2) * grad_w[l] ** 2
        update = config.eta * (state.m_w[l] / c1) / (np.sqrt(state.v_w[l] / c2) + eps)
        model.weights[l] = (model.weights[l] - update) * model.masks[l]
        state.m_b[l] = b1 * state.m_b[l] + (1 - b1) * grad_b[l]
        state.v_b[l] = b2 * state.v_b[l] + (1 - b2) * grad_b[l] ** 2
        model.biases[l] = model.biases[l] - config.eta * (state.m_b[l] / c1) / (np.sqrt(state.v_b[l] / c2) + eps)
    return model


def prune_step(model: MlpModel, target_sparsity: float) -> MlpModel:
    """Mask the smallest-magnitude weights of every layer up to the target.

    Masks are monotone: already-pruned entries sort below everything
    else, so they can never come back.
    """
    if not (0.0 <= target_sparsity < 1.0):
        raise ValueError("target sparsity must be in [0, 1)")
    for l, w in enumerate(model.weights):
        count = int(math.ceil(target_sparsity * w.size))
        already = int(w.size - model.masks[l].sum())
        count = max(count, already)
        if count == 0:
            continue
        key = np.where(model.masks[l] == 0.0, -1.0, np.abs(w)).ravel()
        drop = np.argpartition(key, count - 1)[:count]
        mask = np.ones(w.size)
        mask[drop] = 0.0
        model.masks[l] = mask.reshape(w.shape)
        model.weights[l] = model.weights[l] * model.masks[l]
    return model


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    sparsity: list[float] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        """1-indexed epoch with the smallest validation loss."""
        return int(np.argmin(self.val_loss)) + 1

    @property
    def min_val_loss(self) -> float:
        return float(min(self.val_loss))


def train(model: MlpModel, X_train: np.ndarray, y_train: np.ndarray,
          X_val: np.ndarray, y_val: np.ndarray,
          config: TrainConfig) -> tuple[MlpModel, TrainHistory]:
    """Full-batch Adam training; one epoch is one optimizer step.

    Losses are recorded after each update in inference mode, so recorded
    curves are deterministic even with dropout active. Pruning, when
    configured, runs on its schedule right after the weight update.
    """
    if len(X_train) == 0 or len(X_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    model.dropout_p = config.dropout_p
    model.dropout_input_p = config.input_p
    state = AdamState.zeros_like(model)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    sched = config.pruning
    for epoch in range(1, config.epochs + 1):
        outputs, cache = _forward_cache(model, X_train, "train", rng)
        grads = gradients(model, X_train, y_train, cache=cache, outputs=outputs)
        adam_step(model, state, grads, epoch, config)
        if sched is not None and epoch >= sched.t0 and (epoch - sched.t0) % sched.delta_t == 0 \
                and epoch <= sched.t0 + sched.n_steps * sched.delta_t:
            prune_step(model, sparsity_at(epoch, sched))
        train_l = loss(predict(model, X_train), y_train)
        val_l = loss(predict(model, X_val), y_val)
        if not (math.isfinite(train_l) and math.isfinite(val_l)):
            raise DivergenceError(epoch)
        history.train_loss.append(train_l)
        history.val_loss.append(val_l)
        history.sparsity.append(model.sparsity())
    return model, history


def size_matched_depth(n_width: int, n_layers: int, s_final: float) -> int:
    """Depth of an equally wide network that, pruned to `s_final`, keeps
    as many connections as the (n_width, n_layers) dense one.

    Solves 8N + (L-1)N^2 = (8N + (n_layers-1)N^2) / (1 - s_final) for L
    and rounds down to the matching integer depth.
    """
    if not (0.0 <= s_final < 1.0):
        raise ValueError("s_final must be in [0, 1)")
    dense = 7 * n_width + (n_layers - 1) * n_width ** 2 + n_width
    target = dense / (1.0 - s_final)
    depth = 1.0 + (target - 8.0 * n_width) / n_width ** 2
    return int(math.floor(depth + 1e-9))


def save_model(model: MlpModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": {
            "input_dim": model.arch.input_dim,
            "hidden_sizes": list(model.arch.hidden_sizes),
            "output_dim": model.arch.output_dim,
        },
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "masks": [m.astype(int).tolist() for m in model.masks],
        "dropout_p": model.dropout_p,
        "dropout_input_p": model.dropout_input_p,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model JSON: {exc}", path=str(path)) from exc
    try:
        if doc["format_version"] != MODEL_FORMAT_VERSION:
            raise ParseError(f"unsupported model format {doc['format_version']}", path=str(path))
        arch = Architecture(
            hidden_sizes=tuple(doc["arch"]["hidden_sizes"]),
            input_dim=doc["arch"]["input_dim"],
            output_dim=doc["arch"]["output_dim"],
        )
        weights = [np.array(w, dtype=float) for w in doc["weights"]]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        masks = [np.array(m, dtype=float) for m in doc["masks"]]
        model = MlpModel(arch, weights, biases, masks,
                         dropout_p=float(doc["dropout_p"]),
                         dropout_input_p=float(doc["dropout_input_p"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"model file missing field: {exc}", path=str(path)) from exc
    sizes = arch.layer_sizes()
    for l, w in enumerate(weights):
        if w.shape != (sizes[l + 1], sizes[l]):
            raise ParseError(f"layer {l} weight shape {w.shape} does not match architecture",
                             path=str(path))
    return model
