"""From-scratch feedforward networks.

Plain numpy: affine layers with sigmoid/relu/linear activations, a linear
or softmax head, mean-squared-error and cross-entropy losses (optionally
with an L2 weight penalty), exact backpropagation, and SGD with classical
momentum. Two trained networks can be stacked into one (a feature-mapping
front end feeding a classifier) and fine-tuned end to end.

Model files ("EJAM" format, version 1, little-endian):

    magic "EJAM" | u16 version | u32 layer-count L | u32 dims[L]
    | u8 activation id per non-input layer (L-1 entries, last = head)
    | f64 l2 weight | i64 seed
    | per weight layer: f64 W (row-major, in x out) then f64 b
    | u32 CRC-32 of all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.special import expit

from .errors import FormatError, NumericError

MODEL_MAGIC = b"EJAM"
MODEL_VERSION = 1

SIGMOID, RELU, LINEAR, SOFTMAX = "sigmoid", "relu", "linear", "softmax"
_ACTIVATION_IDS = {SIGMOID: 0, RELU: 1, LINEAR: 2, SOFTMAX: 3}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_IDS.items()}

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: dims, activations, head, regularization."""

    layer_dims: tuple
    hidden_activation: str = SIGMOID
    output_head: str = SOFTMAX
    l2_weight: float = 0.0
    seed: int = 0
    activations: Optional[tuple] = None  # explicit per-layer override (stacks)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"need >= 2 layers of positive size, got {dims}")
        if self.hidden_activation not in (SIGMOID, RELU, LINEAR):
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_head not in (LINEAR, SOFTMAX):
            raise ValueError(f"output head must be linear or softmax, got {self.output_head!r}")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")
        object.__setattr__(self, "layer_dims", dims)
        acts = self.activations
        if acts is None:
            acts = (self.hidden_activation,) * (len(dims) - 2) + (self.output_head,)
        acts = tuple(acts)
        if len(acts) != len(dims) - 1:
            raise ValueError("activations must cover every non-input layer")
        if any(a not in _ACTIVATION_IDS for a in acts):
            raise ValueError(f"unknown activation in {acts}")
        if acts[-1] not in (LINEAR, SOFTMAX):
            raise ValueError("last activation must be the head (linear or softmax)")
        object.__setattr__(self, "activations", acts)


@dataclass
class Network:
    """Weights and biases; shapes follow the spec's layer dims."""

    spec: NetworkSpec
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("parameter count does not match layer dims")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[layer], dims[layer + 1]) or b.shape != (dims[layer + 1],):
                raise ValueError(f"layer {layer} has shape {w.shape}, expected "
                                 f"{(dims[layer], dims[layer + 1])}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {layer} contains non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.spec.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.spec.layer_dims[-1]

    @property
    def head(self) -> str:
        return self.spec.activations[-1]

    def copy(self) -> "Network":
        return Network(self.spec, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])


def init_network(spec: NetworkSpec) -> Network:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _apply_activation(name, z):
    if name == SIGMOID:
        return expit(z)
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == LINEAR:
        return z
    return _softmax(z)


def forward(net: Network, inputs):
    """Batch forward pass; returns ``(outputs, activation_cache)``.

    The cache holds every layer's activation (input first) and is what
    :func:`backward` consumes.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != network input {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")
    cache = [x]
    for w, b, act in zip(net.weights, net.biases, net.spec.activations):
        x = _apply_activation(act, x @ w + b)
        cache.append(x)
    return x, cache


def predict(net: Network, inputs) -> np.ndarray:
    """Forward pass without keeping the cache."""
    out, _ = forward(net, inputs)
    return out


def weight_penalty(net: Network) -> float:
    """Sum of squared weights over all layers (biases excluded)."""
    return float(sum(np.sum(w * w) for w in net.weights))


def mse_loss(
    outputs,
    targets,
    net: Optional[Network] = None,
    l2_weight: float = 0.0,
    mask=None,
) -> float:
    """Mean (over the batch) squared L2 error plus ``l2_weight * ||W||^2``.

    ``mask`` restricts the error to a subset of output dimensions (0/1
    per dimension), e.g. to score only the center frame of a spliced
    target vector.
    """
    outputs = np.atleast_2d(outputs)
    targets = np.atleast_2d(targets)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch: {outputs.shape} vs {targets.shape}")
    err = outputs - targets
    if mask is not None:
        err = err * mask
    loss = float(np.sum(err * err) / outputs.shape[0])
    if l2_weight > 0.0:
        if net is None:
            raise ValueError("l2_weight > 0 requires the network")
        loss += l2_weight * weight_penalty(net)
    return loss


def cross_entropy_loss(posteriors, labels) -> float:
    """Mean negative log-probability of the true labels."""
    posteriors = np.atleast_2d(posteriors)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size != posteriors.shape[0]:
        raise ValueError("one label per posterior row required")
    if labels.min() < 0 or labels.max() >= posteriors.shape[1]:
        raise ValueError("label out of range")
    picked = posteriors[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights) and all(
            np.all(np.isfinite(g)) for g in self.biases
        )


def backward(net: Network, cache, targets, target_mask=None) -> Gradients:
    """Exact gradients of the head loss plus the L2 penalty.

    Softmax head pairs with cross entropy (integer labels), linear head
    with MSE (target matrix, optionally dimension-masked). The L2 term
    ``kappa ||W||^2`` contributes ``2 kappa W`` to every weight gradient.
    """
    if not cache or len(cache) != len(net.weights) + 1:
        raise ValueError("stale or missing forward cache")
    outputs = cache[-1]
    n = outputs.shape[0]
    if net.head == SOFTMAX:
        labels = np.asarray(targets, dtype=np.int64).ravel()
        if labels.size != n:
            raise ValueError("one label per cached row required")
        delta = outputs.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
    else:
        targets = np.atleast_2d(targets)
        if targets.shape != outputs.shape:
            raise ValueError(f"target shape {targets.shape} != output shape {outputs.shape}")
        delta = 2.0 * (outputs - targets) / n
        if target_mask is not None:
            delta = delta * (target_mask * target_mask)

    kappa = net.spec.l2_weight
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        below = cache[layer]
        grad_w[layer] = below.T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if kappa > 0.0:
            grad_w[layer] += 2.0 * kappa * net.weights[layer]
        if layer > 0:
            delta = delta @ net.weights[layer].T
            act = net.spec.activations[layer - 1]
            a = cache[layer]
            if act == SIGMOID:
                delta = delta * a * (1.0 - a)
            elif act == RELU:
                delta = delta * (a > 0.0)
            # linear: delta unchanged
    return Gradients(grad_w, grad_b)


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters."""

    learning_rate: float = 0.02
    momentum: float = 0.9
    minibatch_size: int = 512
    epochs: int = 15
    patience: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")


@dataclass
class Velocity:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "Velocity":
        return cls([np.zeros_like(w) for w in net.weights],
                   [np.zeros_like(b) for b in net.biases])


def sgd_step(net: Network, grads: Gradients, velocity: Velocity, cfg: TrainConfig):
    """Classical momentum update, in place: v <- mu v - eta g; theta += v."""
    if not grads.all_finite():
        raise NumericError("non-finite gradients; aborting the update")
    for w, b, gw, gb, vw, vb in zip(
        net.weights, net.biases, grads.weights, grads.biases,
        velocity.weights, velocity.biases,
    ):
        vw *= cfg.momentum
        vw -= cfg.learning_rate * gw
        w += vw
        vb *= cfg.momentum
        vb -= cfg.learning_rate * gb
        b += vb


def stack(front: Network, back: Network) -> Network:
    """Compose two networks into one whose forward pass is back(front(x)).

    The front network's head activation is kept in place inside the
    stack, so gradients flow through every layer during fine-tuning.
    """
    if front.output_dim != back.input_dim:
        raise ValueError(
            f"front output dim {front.output_dim} != back input dim {back.input_dim}"
        )
    spec = NetworkSpec(
        layer_dims=front.spec.layer_dims + back.spec.layer_dims[1:],
        hidden_activation=back.spec.hidden_activation,
        output_head=back.spec.activations[-1],
        l2_weight=back.spec.l2_weight,
        seed=front.spec.seed,
        activations=front.spec.activations + back.spec.activations,
    )
    return Network(
        spec,
        [w.copy() for w in front.weights] + [w.copy() for w in back.weights],
        [b.copy() for b in front.biases] + [b.copy() for b in back.biases],
    )


def serialize(net: Network, path):
    """Write the versioned, checksummed model file."""
    dims = net.spec.layer_dims
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<H", MODEL_VERSION)
    blob += struct.pack("<I", len(dims))
    blob += struct.pack(f"<{len(dims)}I", *dims)
    blob += bytes(_ACTIVATION_IDS[a] for a in net.spec.activations)
    blob += struct.pack("<d", net.spec.l2_weight)
    blob += struct.pack("<q", net.spec.seed)
    for w, b in zip(net.weights, net.biases):
        blob += w.astype("<f8").tobytes()
        blob += b.astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def deserialize(path) -> Network:
    """Read a model file back; validates magic, version, and checksum."""
    blob = Path(path).read_bytes()
    if len(blob) < 14:
        raise FormatError(f"{path}: too short to be a model file")
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch (corrupt or truncated)")
    try:
        (n_dims,) = struct.unpack_from("<I", blob, 6)
        offset = 10
        dims = struct.unpack_from(f"<{n_dims}I", blob, offset)
        offset += 4 * n_dims
        act_ids = blob[offset : offset + n_dims - 1]
        offset += n_dims - 1
        (l2_weight,) = struct.unpack_from("<d", blob, offset)
        offset += 8
        (seed,) = struct.unpack_from("<q", blob, offset)
        offset += 8
        activations = tuple(_ACTIVATION_NAMES[i] for i in act_ids)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
            offset += 8 * fan_in * fan_out
            b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
            offset += 8 * fan_out
            weights.append(w.reshape(fan_in, fan_out).copy())
            biases.append(b.copy())
    except (struct.error, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model file: {exc}") from exc
    if offset != len(blob) - 4:
        raise FormatError(f"{path}: trailing bytes in model file")
    spec = NetworkSpec(
        layer_dims=tuple(dims),
        hidden_activation=next((a for a in activations[:-1] if a in (SIGMOID, RELU)), SIGMOID),
        output_head=activations[-1],
        l2_weight=l2_weight,
        seed=seed,
        activations=activations,
    )
    return Network(spec, weights, biases)


# ---------------------------------------------------------------------------
# Minibatch training


class DenseBatches:
    """In-memory training data: feature matrix plus targets.

    ``loss_mask`` (0/1 per output dimension) optionally restricts an MSE
    head's loss to a subset of target dimensions.
    """

    def __init__(self, inputs, targets, loss_mask=None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets)
        self.loss_mask = None if loss_mask is None else np.asarray(loss_mask, dtype=np.float64)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have matching first dims")

    def __len__(self):
        return self.inputs.shape[0]

    def batch(self, indices):
        return self.inputs[indices], self.targets[indices]


@dataclass
class TrainHistory:
    """Per-epoch losses; index 0 is the pre-training dev evaluation."""

    train_loss: List[float] = field(default_factory=list)
    dev_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "dev_loss": self.dev_loss,
            "best_epoch": self.best_epoch,
        }


def _loss_for_head(net, outputs, targets, mask=None):
    if net.head == SOFTMAX:
        return cross_entropy_loss(outputs, targets)
    return mse_loss(outputs, targets, mask=mask)


def evaluate_loss(net: Network, data, batch_size: int = 4096) -> float:
    """Head loss (no penalty) over a dataset, batched, fixed order."""
    mask = getattr(data, "loss_mask", None)
    total, count = 0.0, 0
    for start in range(0, len(data), batch_size):
        x, y = data.batch(np.arange(start, min(start + batch_size, len(data))))
        out = predict(net, x)
        total += _loss_for_head(net, out, y, mask) * x.shape[0]
        count += x.shape[0]
    return total / max(count, 1)


def train(net: Network, data, dev_data, cfg: TrainConfig, rng) -> TrainHistory:
    """Minibatch SGD with momentum, early stopping on dev loss.

    Mutates ``net`` in place and restores the best-dev parameters before
    returning. ``rng`` drives the per-epoch shuffle, nothing else.
    """
    velocity = Velocity.zeros_like(net)
    history = TrainHistory()
    history.dev_loss.append(evaluate_loss(net, dev_data))
    best = net.copy()
    best_loss = history.dev_loss[0]
    stale = 0
    n = len(data)
    mask = getattr(data, "loss_mask", None)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            x, y = data.batch(idx)
            out, cache = forward(net, x)
            grads = backward(net, cache, y, target_mask=mask)
            sgd_step(net, grads, velocity, cfg)
            batch_loss = _loss_for_head(net, out, y, mask)
            epoch_loss += batch_loss * x.shape[0]
            seen += x.shape[0]
        history.train_loss.append(epoch_loss / max(seen, 1))
        dev = evaluate_loss(net, dev_data)
        history.dev_loss.append(dev)
        if dev < best_loss:
            best_loss = dev
            best = net.copy()
            history.best_epoch = epoch + 1
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.weights = best.weights
    net.biases = best.biases
    return history
