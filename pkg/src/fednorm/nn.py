"""Minimal dense classifier with manual backprop over flat parameter vectors.

All parameters of a model live in one float64 vector so that federated
aggregation is plain vector arithmetic.  The layout is layer-major: for each
linear layer l with weight matrix W_l (fan_in x fan_out, row-major) the weights
come first, immediately followed by the bias b_l:

    [W_0, b_0, W_1, b_1, ..., W_{L-1}, b_{L-1}]

The post-activation output of the last hidden layer (the layer feeding the
linear output head) is exposed as the "latent" representation of a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_ACTIVATIONS = ("relu", "tanh")
_OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(RuntimeError):
    """A loss or parameter vector became non-finite; the run cannot continue."""


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the perceptron: input dim, hidden widths, class count.

    ``layer_sizes`` must have at least three entries; the second-to-last entry
    is the latent dimension.
    """

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError(
                "layer_sizes needs input, at least one hidden and an output entry, "
                f"got {sizes}"
            )
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[-2]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [
            (self.layer_sizes[l], self.layer_sizes[l + 1])
            for l in range(self.num_layers)
        ]

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """Weight and bias slice into the flat vector, per layer."""
        out = []
        offset = 0
        for fan_in, fan_out in self.layer_shapes():
            w = slice(offset, offset + fan_in * fan_out)
            b = slice(w.stop, w.stop + fan_out)
            out.append((w, b))
            offset = b.stop
        return out

    def layer_span(self, layer: int) -> slice:
        """Contiguous slice covering both W and b of one layer."""
        w, b = self.layer_slices()[layer]
        return slice(w.start, b.stop)

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.param_count(), dtype=np.float64)
    for (w_sl, _), (fan_in, fan_out) in zip(spec.layer_slices(), spec.layer_shapes()):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[w_sl] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return params


def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count(),):
        raise ValueError(
            f"parameter vector has length {params.shape}, expected ({spec.param_count()},)"
        )
    return params


def _check_batch(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(
            f"batch has shape {x.shape}, expected (N, {spec.input_dim})"
        )
    return x


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(a: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the activation output, not the pre-activation
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_cached(spec, params, x):
    """Returns (logits, acts) where acts[l] is the input to layer l."""
    acts = [x]
    a = x
    slices = spec.layer_slices()
    shapes = spec.layer_shapes()
    for l in range(spec.num_layers):
        w_sl, b_sl = slices[l]
        w = params[w_sl].reshape(shapes[l])
        z = a @ w + params[b_sl]
        if l < spec.num_layers - 1:
            a = _activate(z, spec.activation)
            acts.append(a)
        else:
            return z, acts
    raise AssertionError("unreachable")


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Run the network on a batch.

    Returns ``(logits, latent)`` with shapes (N, classes) and (N, latent_dim);
    ``latent`` is the post-activation output of the last hidden layer.
    """
    params = _check_params(spec, params)
    x = _check_batch(spec, x)
    logits, acts = _forward_cached(spec, params, x)
    return logits, acts[-1]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(logz - picked))


def loss_and_grad(spec, params, x, y, prox=None):
    """Mean softmax cross-entropy and its exact gradient in layout order.

    ``prox`` is an optional ``(mu, anchor)`` pair adding the proximal penalty
    (mu/2)*||params - anchor||^2 to loss and gradient.  ``mu == 0`` leaves the
    computation untouched so the result is bit-identical to ``prox=None``.

    Raises TrainingDiverged when the loss comes out non-finite.
    """
    params = _check_params(spec, params)
    x = _check_batch(spec, x)
    y = np.asarray(y)
    n = x.shape[0]
    if y.shape != (n,):
        raise ValueError(f"labels have shape {y.shape}, expected ({n},)")

    logits, acts = _forward_cached(spec, params, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), y]))

    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty_like(params)
    slices = spec.layer_slices()
    shapes = spec.layer_shapes()
    for l in range(spec.num_layers - 1, -1, -1):
        w_sl, b_sl = slices[l]
        grad[w_sl] = (acts[l].T @ delta).ravel()
        grad[b_sl] = delta.sum(axis=0)
        if l > 0:
            w = params[w_sl].reshape(shapes[l])
            delta = (delta @ w.T) * _activation_grad(acts[l], spec.activation)

    if prox is not None:
        mu, anchor = prox
        if mu < 0:
            raise ValueError(f"proximal mu must be non-negative, got {mu}")
        if mu > 0:
            diff = params - anchor
            loss += 0.5 * mu * float(diff @ diff)
            grad += mu * diff

    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    return loss, grad


@dataclass
class OptimizerState:
    """Hyperparameters plus per-run mutable buffers of one local optimizer.

    Moment buffers are allocated lazily on the first step; ``fresh()`` hands
    out a copy with cleared buffers for the next client round.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in _OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {_OPTIMIZERS}, got {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    def fresh(self) -> "OptimizerState":
        return replace(self, m=None, v=None, step=0)


def optimizer_step(params, grad, state: OptimizerState):
    """One optimizer update; returns (new_params, new_state), inputs untouched."""
    t = state.step + 1
    if state.kind == "sgd":
        new = params - state.lr * grad
        new_state = replace(state, step=t)
    else:
        m = state.m if state.m is not None else np.zeros_like(params)
        v = state.v if state.v is not None else np.zeros_like(params)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state = replace(state, m=m, v=v, step=t)
    if not np.isfinite(new).all():
        raise TrainingDiverged(f"non-finite parameters after step {t}")
    return new, new_state


def mean_latent(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Mean of the last-hidden-layer activations over all rows of ``x``."""
    x = _check_batch(spec, x)
    if x.shape[0] == 0:
        raise ValueError("mean latent of an empty batch is undefined")
    _, latent = forward(spec, params, x)
    return latent.mean(axis=0)
