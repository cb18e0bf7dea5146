"""Dense layers with hand-written backward passes, Adam, and a finite-difference checker.

All arrays are float64. Layers operate on batches of shape ``(n, in)``;
a 1-d input is treated as a batch of one and squeezed back on output.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu", "sigmoid", "softplus")


def softplus(z):
    return np.logaddexp(0.0, z)


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    if kind == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z: np.ndarray, out: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation evaluated at pre-activation ``z``."""
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "softplus":
        return expit(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpSpec:
    layer_sizes: list[int]
    hidden_activation: str = "relu"
    seed: int = 0
    output_activation: str = "identity"

    def validate(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs an input size and at least one layer")
        bad = [s for s in self.layer_sizes if int(s) < 1]
        if bad:
            raise ValueError(f"layer sizes must be >= 1, got {list(self.layer_sizes)}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")


def init_mlp(spec: MlpSpec) -> list[DenseLayer]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sizes = [int(s) for s in spec.layer_sizes]
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        last = i == len(sizes) - 2
        act = spec.output_activation if last else spec.hidden_activation
        layers.append(DenseLayer(w, np.zeros(n_out), act))
    return layers


@dataclass
class Tape:
    """Forward values recorded by :func:`mlp_forward` for one backward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False
    consumed: bool = False


def mlp_forward(layers: list[DenseLayer], x) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected a vector or a 2-d batch, got shape {x.shape}")
    if layers and x.shape[1] != layers[0].n_in:
        raise ValueError(f"input has {x.shape[1]} features, first layer expects {layers[0].n_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to MLP")
    tape = Tape(squeeze=squeeze)
    for layer in layers:
        z = x @ layer.weights.T + layer.bias
        out = activate(z, layer.activation)
        tape.inputs.append(x)
        tape.preacts.append(z)
        tape.outputs.append(out)
        x = out
    return (x[0] if squeeze else x), tape


def mlp_backward(layers: list[DenseLayer], tape: Tape, grad_out) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse pass through ``layers``.

    Returns per-layer ``(dW, db)`` and the gradient with respect to the MLP input.
    The tape can be used once.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed")
    tape.consumed = True
    g = np.asarray(grad_out, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        gz = g * activation_grad(tape.preacts[i], tape.outputs[i], layer.activation)
        grads[i] = (gz.T @ tape.inputs[i], gz.sum(axis=0))
        g = gz @ layer.weights
    return grads, (g[0] if tape.squeeze else g)


def mlp_param_dict(layers: list[DenseLayer], prefix: str) -> dict[str, np.ndarray]:
    """Named views of the layer arrays; updating them in place updates the layers."""
    out = {}
    for i, layer in enumerate(layers):
        out[f"{prefix}.{i}.W"] = layer.weights
        out[f"{prefix}.{i}.b"] = layer.bias
    return out


def mlp_grad_dict(grads, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, (dw, db) in enumerate(grads):
        out[f"{prefix}.{i}.W"] = dw
        out[f"{prefix}.{i}.b"] = db
    return out


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def _check_shapes(params, grads):
    for k, p in params.items():
        if k not in grads:
            raise ValueError(f"missing gradient for {k!r}")
        if grads[k].shape != p.shape:
            raise ValueError(f"shape mismatch for {k!r}: param {p.shape}, grad {grads[k].shape}")


def _grads_finite(grads) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float) -> bool:
    """Bias-corrected Adam update, applied in place.

    Returns False (and leaves everything untouched) when a gradient is non-finite.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check_shapes(params, grads)
    if not _grads_finite(grads):
        logger.warning("non-finite gradient, skipping optimizer step %d", state.step + 1)
        return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


def sgd_step(params, grads, lr: float) -> bool:
    _check_shapes(params, grads)
    if not _grads_finite(grads):
        logger.warning("non-finite gradient, skipping SGD step")
        return False
    for k, p in params.items():
        p -= lr * grads[k]
    return True


class NonDeterministicClosure(RuntimeError):
    pass


def finite_diff_check(closure, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray], eps: float = 1e-5,
                      floor: float = 1e-12):
    """Max relative error between ``analytic`` and central differences of ``closure``.

    ``closure()`` must return the scalar loss for the current (in-place) values
    of ``params``. Each entry is perturbed by +-eps and restored afterwards.
    ``floor`` bounds the denominator of the relative error from below.
    Returns ``(max_error, worst_key)``.
    """
    base = closure()
    if closure() != base:
        raise NonDeterministicClosure("closure returned different values for identical parameters")
    worst, worst_key = 0.0, None
    for k, p in params.items():
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[k]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = closure()
            flat[j] = orig - eps
            down = closure()
            flat[j] = orig
            num = (up - down) / (2.0 * eps)
            a = a_flat[j]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            if err > worst:
                worst, worst_key = err, f"{k}[{j}]"
    return worst, worst_key
