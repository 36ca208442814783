"""Small dense-network core: layers, forward/backward, dropout, losses, Adam.

Everything operates on 2-D batches (rows are instances). A 1-D input is
treated as a batch of one and the leading axis is dropped again on output.
Weights are stored ``out x in`` so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("identity", "relu", "sigmoid")


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class NetworkParams:
    layers: List[DenseLayer]

    def __post_init__(self):
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.n_out != b.n_in:
                raise ValueError(f"layer {i} emits {a.n_out} values but layer {i + 1} expects {b.n_in}")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def parameters(self) -> List[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``; the arrays are the live ones."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class DropoutMask:
    """Per-layer multiplicative masks with entries in ``{0, 1/keep_rate}``.

    ``keep[i]`` is ``None`` for layers that are never masked, otherwise an
    array broadcastable against that layer's output batch.
    """

    keep: List[Optional[np.ndarray]]
    keep_rate: float
    rng_seed: Optional[int] = None


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    outputs: List[np.ndarray]
    masks: List[Optional[np.ndarray]]
    network_id: int


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def init_network(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> NetworkParams:
    """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes, sizes[1:], activations):
        limit = np.sqrt(6.0 / n_in)
        layers.append(DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), act))
    return NetworkParams(layers)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    return z


def _activation_grad(out: np.ndarray, activation: str) -> Optional[np.ndarray]:
    # derivatives written in terms of the post-activation value
    if activation == "relu":
        return (out > 0).astype(out.dtype)
    if activation == "sigmoid":
        return out * (1.0 - out)
    return None


def forward(net: NetworkParams, x, mask: Optional[DropoutMask] = None, return_cache: bool = False):
    """Run ``x`` through ``net``; masked layers multiply their activations by the mask."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != net.n_in:
        raise ValueError(f"input has {h.shape[-1]} features, network expects {net.n_in}")
    masks: List[Optional[np.ndarray]] = [None] * len(net.layers)
    if mask is not None:
        if len(mask.keep) != len(net.layers):
            raise ValueError(f"mask has {len(mask.keep)} entries for {len(net.layers)} layers")
        masks = list(mask.keep)

    inputs, outputs = [], []
    for layer, m in zip(net.layers, masks):
        inputs.append(h)
        h = _activate(h @ layer.weights.T + layer.bias, layer.activation)
        if m is not None:
            if np.shape(m)[-1] != layer.n_out:
                raise ValueError(f"mask width {np.shape(m)[-1]} does not match layer width {layer.n_out}")
            outputs.append(h)
            h = h * m
        else:
            outputs.append(h)

    result = h[0] if squeeze else h
    if return_cache:
        return result, ForwardCache(inputs, outputs, masks, id(net))
    return result


def backward(net: NetworkParams, cache: ForwardCache, output_gradient):
    """Backpropagate ``d loss / d output`` through ``net``.

    Returns ``(grads, input_gradient)`` where ``grads`` is ordered like
    ``net.parameters()``.
    """
    if cache.network_id != id(net) or len(cache.inputs) != len(net.layers):
        raise ValueError("cache does not belong to this network")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], net.n_out):
        raise ValueError(f"output gradient shape {g.shape} does not match forward output")

    grads: List[np.ndarray] = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        d_act = _activation_grad(cache.outputs[i], layer.activation)
        if d_act is not None:
            g = g * d_act
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weights
    return grads, g


def mse_loss(prediction, target):
    """Mean squared error over the last axis, averaged over rows.

    Returns ``(loss, gradient)`` with the gradient w.r.t. ``prediction``.
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    w = p.shape[-1]
    rows = p.size // w
    diff = p - t
    return float(np.sum(diff * diff) / (w * rows)), 2.0 * diff / (w * rows)


def bce_loss(prediction, target, eps: float = 1e-12):
    """Binary cross-entropy counterpart of :func:`mse_loss`, same reduction."""
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    w = p.shape[-1]
    rows = p.size // w
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -np.sum(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)) / (w * rows)
    grad = (pc - t) / (pc * (1.0 - pc)) / (w * rows)
    return float(loss), grad


def gaussian_kl(mu, log_var):
    """KL( N(mu, diag(exp(log_var))) || N(0, I) ), summed over the latent axis.

    For a batch the per-row values are averaged. Returns
    ``(kl, d_kl/d_mu, d_kl/d_log_var)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    if mu.shape != log_var.shape:
        raise ValueError(f"mu shape {mu.shape} != log_var shape {log_var.shape}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_var))):
        raise ValueError("gaussian_kl received non-finite input")
    rows = mu.size // mu.shape[-1] if mu.ndim else 1
    var = np.exp(log_var)
    kl = 0.5 * np.sum(var + mu * mu - 1.0 - log_var) / rows
    return float(kl), mu / rows, 0.5 * (var - 1.0) / rows


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def draw_keep(rng: np.random.Generator, shape, keep_rate: float) -> np.ndarray:
    """Bernoulli(keep_rate) keep pattern scaled by ``1/keep_rate``."""
    if keep_rate >= 1.0:
        return np.ones(shape)
    keep = rng.random(shape) < keep_rate
    return keep * (1.0 / keep_rate)


def sample_mask(shapes: Sequence[Optional[tuple]], keep_rate: float, rng_seed: int) -> DropoutMask:
    """Sample a :class:`DropoutMask`; ``None`` entries in ``shapes`` stay unmasked."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    rng = np.random.default_rng(rng_seed)
    keep = [None if s is None else draw_keep(rng, s, keep_rate) for s in shapes]
    return DropoutMask(keep, keep_rate, rng_seed)
