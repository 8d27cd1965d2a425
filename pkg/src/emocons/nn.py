"""Minimal dense-network stack: forward, backprop, Adam, checkpoints.

Everything is plain float64 numpy.  Layers keep their own gradient
accumulators (``grad_*``) and Adam moments (``m_*``/``v_*``); ``backward``
adds into the accumulators so several loss terms can contribute to one
optimizer step.  Caches from the most recent ``forward`` are stored on the
layers, so forward/backward pairs must not be interleaved across inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, StructuralError

CHECKPOINT_FORMAT = "emocons-checkpoint"
CHECKPOINT_VERSION = 1

# activation -> (apply to pre-activation, derivative from the *output*)
_ACTIVATIONS = {
    "linear": (lambda z: z, lambda a: np.ones_like(a)),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0.0).astype(np.float64)),
}

ACTIVATIONS = tuple(_ACTIVATIONS)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ContractError(f"eps must be positive, got {self.eps}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ContractError(f"grad_clip_norm must be positive, got {self.grad_clip_norm}")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str
    trainable: bool = True
    grad_w: np.ndarray = None
    grad_b: np.ndarray = None
    m_w: np.ndarray = None
    v_w: np.ndarray = None
    m_b: np.ndarray = None
    v_b: np.ndarray = None
    cache_x: np.ndarray | None = field(default=None, repr=False)
    cache_a: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ContractError(
                f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}"
            )
        self.weights = np.array(self.weights, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ContractError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ContractError("layer parameters must be finite")
        for name in ("grad_w", "m_w", "v_w"):
            cur = getattr(self, name)
            setattr(
                self,
                name,
                np.zeros_like(self.weights) if cur is None else np.array(cur, dtype=np.float64),
            )
            if getattr(self, name).shape != self.weights.shape:
                raise ContractError(f"{name} shape does not match weights")
        for name in ("grad_b", "m_b", "v_b"):
            cur = getattr(self, name)
            setattr(
                self,
                name,
                np.zeros_like(self.bias) if cur is None else np.array(cur, dtype=np.float64),
            )
            if getattr(self, name).shape != self.bias.shape:
                raise ContractError(f"{name} shape does not match bias")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(eq=False)
class Network:
    layers: list[DenseLayer]
    step: int = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def init_network(
    dims: tuple[int, ...],
    activations: tuple[str, ...],
    rng: np.random.Generator,
) -> Network:
    """Build a network with uniform Glorot weights and zero biases.

    ``dims`` lists layer widths input-first; ``activations`` has one entry
    per weight layer.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ContractError(f"need at least input and output widths, got {dims}")
    if any(d < 1 for d in dims):
        raise ContractError(f"layer widths must be positive, got {dims}")
    if len(activations) != len(dims) - 1:
        raise ContractError(
            f"{len(dims) - 1} layers need {len(dims) - 1} activations, got {len(activations)}"
        )
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights=w, bias=np.zeros(fan_out), activation=act))
    return Network(layers=layers)


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Run a batch of rows through the network, caching for ``backward``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError(f"input must be 2-D (rows x features), got shape {x.shape}")
    if x.shape[1] != net.in_dim:
        raise ContractError(f"input width {x.shape[1]} does not match network input {net.in_dim}")
    for layer in net.layers:
        apply, _ = _ACTIVATIONS[layer.activation]
        a = apply(x @ layer.weights.T + layer.bias)
        layer.cache_x = x
        layer.cache_a = a
        x = a
    return x


def backward(net: Network, dy: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients for the last forward pass.

    ``dy`` is the loss gradient at the network output.  Returns the gradient
    at the network input.  Frozen layers accumulate nothing but still pass
    the gradient through.
    """
    dy = np.asarray(dy, dtype=np.float64)
    for layer in reversed(net.layers):
        if layer.cache_x is None or layer.cache_a is None:
            raise ContractError("backward called before forward")
        if dy.shape != layer.cache_a.shape:
            raise ContractError(
                f"gradient shape {dy.shape} does not match output {layer.cache_a.shape}"
            )
        _, deriv = _ACTIVATIONS[layer.activation]
        dz = dy * deriv(layer.cache_a)
        if layer.trainable:
            layer.grad_w += dz.T @ layer.cache_x
            layer.grad_b += dz.sum(axis=0)
        dy = dz @ layer.weights
    return dy


def zero_grads(net: Network) -> None:
    for layer in net.layers:
        layer.grad_w[:] = 0.0
        layer.grad_b[:] = 0.0


def clip_gradients(net: Network, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    total = math.fsum(
        float(np.sum(l.grad_w * l.grad_w)) + float(np.sum(l.grad_b * l.grad_b))
        for l in net.layers
    )
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for l in net.layers:
            l.grad_w *= scale
            l.grad_b *= scale
    return norm


def adam_step(
    net: Network,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one Adam update from the accumulated gradients."""
    net.step += 1
    t = net.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for layer in net.layers:
        if not layer.trainable:
            continue
        for param, grad, m, v in (
            (layer.weights, layer.grad_w, layer.m_w, layer.v_w),
            (layer.bias, layer.grad_b, layer.m_b, layer.v_b),
        ):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def optimizer_step(net: Network, cfg: OptimConfig) -> None:
    """One full update: finiteness check, optional clip, Adam, grads zeroed."""
    for i, layer in enumerate(net.layers):
        if not (np.all(np.isfinite(layer.grad_w)) and np.all(np.isfinite(layer.grad_b))):
            raise ContractError(f"non-finite gradient in layer {i} ({layer.activation})")
    if cfg.grad_clip_norm is not None:
        clip_gradients(net, cfg.grad_clip_norm)
    adam_step(net, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    zero_grads(net)


# ---------------------------------------------------------------------------
# Checkpoints


def _layer_to_json(layer: DenseLayer) -> dict:
    return {
        "activation": layer.activation,
        "trainable": layer.trainable,
        "weights": layer.weights.tolist(),
        "bias": layer.bias.tolist(),
        "m_w": layer.m_w.tolist(),
        "v_w": layer.v_w.tolist(),
        "m_b": layer.m_b.tolist(),
        "v_b": layer.v_b.tolist(),
    }


def _layer_from_json(d: dict) -> DenseLayer:
    return DenseLayer(
        weights=np.array(d["weights"], dtype=np.float64),
        bias=np.array(d["bias"], dtype=np.float64),
        activation=d["activation"],
        trainable=bool(d["trainable"]),
        m_w=np.array(d["m_w"], dtype=np.float64),
        v_w=np.array(d["v_w"], dtype=np.float64),
        m_b=np.array(d["m_b"], dtype=np.float64),
        v_b=np.array(d["v_b"], dtype=np.float64),
    )


def save_checkpoint(path: str | Path, nets: dict[str, Network], meta: dict) -> None:
    """Write named networks plus metadata as versioned JSON.

    Optimizer moments and step counts are included so training resumed from
    the file continues exactly where it left off.  Pending gradient
    accumulators and forward caches are transient and not saved.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "networks": {
            name: {"step": net.step, "layers": [_layer_to_json(l) for l in net.layers]}
            for name, net in nets.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path: str | Path) -> tuple[dict[str, Network], dict]:
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise StructuralError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise StructuralError(
            f"{path}: unsupported version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        nets = {
            name: Network(
                layers=[_layer_from_json(l) for l in entry["layers"]],
                step=int(entry["step"]),
            )
            for name, entry in doc["networks"].items()
        }
        meta = doc["meta"]
    except (KeyError, TypeError) as exc:
        raise StructuralError(f"{path}: malformed checkpoint ({exc!r})") from None
    return nets, meta
