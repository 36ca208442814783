"""Autoencoder and variational-autoencoder models with optional MC-dropout decoders.

Encoder: ``w -> M -> N -> L`` (AE) or ``w -> M -> N -> 2L`` (VAE, mean and
log-variance heads). Decoder: ``L -> N -> M -> w`` with a sigmoid output.
When ``mcd_decoder`` is set, dropout follows both decoder hidden layers during
training; the encoder never sees a dropout mask.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Union

import numpy as np

from . import nn
from .data import EncodedDataset
from .utils import stream

log = logging.getLogger(__name__)

MODEL_TAG = "synthgen-model v1"
LOG_VAR_CLAMP = 10.0

# stream keys for training randomness
_INIT, _SHUFFLE, _EPS, _DROPOUT = 0, 1, 2, 3


@dataclass
class ArchitectureConfig:
    """Layer sizes and training hyperparameters.

    ``hidden1``/``hidden2``/``latent`` left as ``None`` resolve to
    ``min(512, 8w)``, ``min(256, 4w)`` and ``max(1, n_attributes // 2)``.
    """

    input_width: int
    n_attributes: Optional[int] = None
    hidden1: Optional[int] = None
    hidden2: Optional[int] = None
    latent: Optional[int] = None
    keep_rate: float = 0.9
    model_kind: str = "VAE"
    mcd_decoder: bool = False
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    loss: str = "bce"

    def resolved(self) -> "ArchitectureConfig":
        w = self.input_width
        a = self.n_attributes if self.n_attributes is not None else w
        cfg = ArchitectureConfig(**asdict(self))
        cfg.n_attributes = a
        cfg.hidden1 = self.hidden1 if self.hidden1 is not None else min(512, 8 * w)
        cfg.hidden2 = self.hidden2 if self.hidden2 is not None else min(256, 4 * w)
        cfg.latent = self.latent if self.latent is not None else max(1, a // 2)
        cfg.validate()
        return cfg

    @classmethod
    def wide_sizes(cls, input_width: int, **kwargs) -> "ArchitectureConfig":
        """The 512/256 hidden sizes used for reproduction runs."""
        return cls(input_width, hidden1=512, hidden2=256, **kwargs)

    def validate(self):
        if self.input_width < 1:
            raise ValueError("input_width must be >= 1")
        if not self.hidden1 >= self.hidden2 >= self.latent >= 1:
            raise ValueError(
                f"need M >= N >= L >= 1, got M={self.hidden1}, N={self.hidden2}, L={self.latent}"
            )
        if self.model_kind not in ("AE", "VAE"):
            raise ValueError(f"model_kind must be 'AE' or 'VAE', got {self.model_kind!r}")
        if not 0.0 < self.keep_rate <= 1.0:
            raise ValueError(f"keep_rate must lie in (0, 1], got {self.keep_rate}")
        if self.loss not in ("mse", "bce"):
            raise ValueError(f"loss must be 'mse' or 'bce', got {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")


@dataclass
class LatentGaussian:
    mu: np.ndarray
    log_var: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass
class TrainedModel:
    config: ArchitectureConfig
    encoder: nn.NetworkParams
    decoder: nn.NetworkParams
    schema_fingerprint: str = ""
    loss_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        c = self.config
        head = 2 * c.latent if c.model_kind == "VAE" else c.latent
        if self.encoder.n_in != c.input_width or self.encoder.n_out != head:
            raise ValueError(f"encoder maps {self.encoder.n_in}->{self.encoder.n_out}, expected {c.input_width}->{head}")
        if self.decoder.n_in != c.latent or self.decoder.n_out != c.input_width:
            raise ValueError(f"decoder maps {self.decoder.n_in}->{self.decoder.n_out}, expected {c.latent}->{c.input_width}")

    @property
    def kind(self) -> str:
        """Generator family name: VAE, MCD-VAE or MCD-AE (plain AE otherwise)."""
        base = self.config.model_kind
        return f"MCD-{base}" if self.config.mcd_decoder else base

    def decoder_mask_shapes(self, rows: int):
        """Mask layout for a decoder batch: both hidden layers, never the output."""
        return [(rows, l.n_out) if l.activation != "sigmoid" else None for l in self.decoder.layers]


def build(config: ArchitectureConfig) -> TrainedModel:
    """Freshly initialised, untrained model."""
    c = config.resolved()
    rng = stream(c.seed, _INIT)
    head = 2 * c.latent if c.model_kind == "VAE" else c.latent
    encoder = nn.init_network(
        [c.input_width, c.hidden1, c.hidden2, head], ["relu", "relu", "identity"], rng
    )
    decoder = nn.init_network(
        [c.latent, c.hidden2, c.hidden1, c.input_width], ["relu", "relu", "sigmoid"], rng
    )
    return TrainedModel(c, encoder, decoder)


def split_heads(h: np.ndarray, latent: int):
    """Mean and clamped log-variance from the VAE encoder output."""
    mu = h[..., :latent]
    raw = h[..., latent:]
    return mu, np.clip(raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP), raw


def reparameterize(mu, log_var, eps):
    """``z = mu + exp(log_var / 2) * eps``."""
    return mu + np.exp(0.5 * log_var) * eps


def _recon(prediction, target, loss):
    fn = nn.mse_loss if loss == "mse" else nn.bce_loss
    return fn(prediction, target)


def batch_objective(model: TrainedModel, xb: np.ndarray, eps: Optional[np.ndarray] = None,
                    mask: Optional[nn.DropoutMask] = None):
    """Training objective on one batch and its gradient.

    ``eps`` is the reparameterisation noise (VAE only) and ``mask`` the decoder
    dropout mask. Gradients are ordered encoder parameters then decoder
    parameters, as in :meth:`NetworkParams.parameters`.
    """
    c = model.config
    vae = c.model_kind == "VAE"
    w = xb.shape[1]
    h, enc_cache = nn.forward(model.encoder, xb, return_cache=True)
    if vae:
        mu, log_var, raw = split_heads(h, c.latent)
        z = reparameterize(mu, log_var, eps)
    else:
        z = h
    out, dec_cache = nn.forward(model.decoder, z, mask, return_cache=True)
    loss, g_out = _recon(out, xb, c.loss)
    if vae:
        # per-instance sum over columns, averaged over the batch
        loss *= w
        g_out *= w
        kl, g_mu, g_lv = nn.gaussian_kl(mu, log_var)
        loss += kl
    dec_grads, g_z = nn.backward(model.decoder, dec_cache, g_out)
    if vae:
        sigma = np.exp(0.5 * log_var)
        g_mu = g_mu + g_z
        g_lv = g_lv + g_z * eps * 0.5 * sigma
        g_lv[np.abs(raw) > LOG_VAR_CLAMP] = 0.0
        g_h = np.concatenate([g_mu, g_lv], axis=1)
    else:
        g_h = g_z
    enc_grads, _ = nn.backward(model.encoder, enc_cache, g_h)
    return loss, enc_grads + dec_grads


def train(dataset: Union[EncodedDataset, np.ndarray], config: ArchitectureConfig,
          schema_fingerprint: str = "") -> TrainedModel:
    """Fit an AE or VAE by minibatch Adam.

    The AE objective is the per-cell reconstruction loss. The VAE objective is
    the reconstruction loss summed over the ``w`` encoded columns plus the
    Gaussian KL term (weight 1), i.e. a per-instance negative ELBO. Each
    epoch's mean objective is appended to ``loss_trace``.
    """
    if isinstance(dataset, EncodedDataset):
        schema_fingerprint = schema_fingerprint or dataset.schema.fingerprint()
        if config.n_attributes is None:
            config = ArchitectureConfig(**{**asdict(config), "n_attributes": len(dataset.schema.attributes)})
        X = dataset.matrix
    else:
        X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.input_width:
        raise ValueError(f"training data has shape {X.shape}, config expects width {config.input_width}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")

    model = build(config)
    c = model.config
    vae = c.model_kind == "VAE"
    params = model.encoder.parameters() + model.decoder.parameters()
    adam = nn.AdamState.for_params(params, lr=c.lr)
    shuffle_rng = stream(c.seed, _SHUFFLE)
    eps_rng = stream(c.seed, _EPS)
    drop_rng = stream(c.seed, _DROPOUT)
    n = X.shape[0]

    trace = []
    for epoch in range(c.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, c.batch_size):
            xb = X[order[start:start + c.batch_size]]
            rows = xb.shape[0]
            eps = eps_rng.standard_normal((rows, c.latent)) if vae else None
            mask = None
            if c.mcd_decoder:
                mask = nn.DropoutMask(
                    [None if s is None else nn.draw_keep(drop_rng, s, c.keep_rate)
                     for s in model.decoder_mask_shapes(rows)],
                    c.keep_rate,
                )
            loss, grads = batch_objective(model, xb, eps, mask)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            nn.adam_step(adam, params, grads)
            total += loss * rows
        trace.append(total / n)
        if epoch % 50 == 0 or epoch == c.epochs - 1:
            log.debug("%s epoch %d loss %.6f", model.kind, epoch, trace[-1])

    model.loss_trace = trace
    model.schema_fingerprint = schema_fingerprint
    return model


def encode(model: TrainedModel, x) -> Union[LatentGaussian, np.ndarray]:
    """Deterministic encoder pass; VAE models return a :class:`LatentGaussian`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.config.input_width:
        raise ValueError(f"input width {x.shape[-1]} != model width {model.config.input_width}")
    h = nn.forward(model.encoder, x)
    if model.config.model_kind == "VAE":
        mu, log_var, _ = split_heads(h, model.config.latent)
        return LatentGaussian(mu, log_var)
    return h


def decode(model: TrainedModel, z, mask: Optional[nn.DropoutMask] = None) -> np.ndarray:
    """Decoder pass; ``mask`` (if any) applies to the decoder hidden layers."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.config.latent:
        raise ValueError(f"latent length {z.shape[-1]} != model latent size {model.config.latent}")
    return nn.forward(model.decoder, z, mask)


# -- persistence -----------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _write_network(lines: List[str], name: str, net: nn.NetworkParams):
    lines.append(f"network {name} {len(net.layers)}")
    for layer in net.layers:
        lines.append(f"layer {layer.n_out} {layer.n_in} {layer.activation}")
        for row in layer.weights:
            lines.append(_fmt(row))
        lines.append(_fmt(layer.bias))


def dumps_model(model: TrainedModel) -> str:
    config = json.dumps(asdict(model.config), sort_keys=True)
    lines = [
        MODEL_TAG,
        f"config {config}",
        f"schema {model.schema_fingerprint or '-'}",
        f"loss_trace {len(model.loss_trace)}",
        _fmt(model.loss_trace),
    ]
    _write_network(lines, "encoder", model.encoder)
    _write_network(lines, "decoder", model.decoder)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model: TrainedModel, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_model(model))


class ModelFormatError(ValueError):
    pass


class _Lines:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise ModelFormatError(f"line {self.pos + 1}: unexpected end of file")
        self.pos += 1
        return self.lines[self.pos - 1]

    def reals(self, count: int) -> np.ndarray:
        text = self.next()
        try:
            values = np.array([float(t) for t in text.split()], dtype=np.float64)
        except ValueError:
            raise ModelFormatError(f"line {self.pos}: expected real numbers") from None
        if values.size != count:
            raise ModelFormatError(f"line {self.pos}: expected {count} values, found {values.size}")
        return values

    def keyword(self, word: str) -> List[str]:
        parts = self.next().split(" ")
        if parts[0] != word:
            raise ModelFormatError(f"line {self.pos}: expected {word!r}, found {parts[0]!r}")
        return parts[1:]


def _read_network(src: _Lines, name: str) -> nn.NetworkParams:
    parts = src.keyword("network")
    if len(parts) != 2 or parts[0] != name:
        raise ModelFormatError(f"line {src.pos}: expected network {name!r}")
    layers = []
    for _ in range(int(parts[1])):
        p = src.keyword("layer")
        try:
            n_out, n_in, act = int(p[0]), int(p[1]), p[2]
        except (IndexError, ValueError):
            raise ModelFormatError(f"line {src.pos}: malformed layer header") from None
        if n_out < 1 or n_in < 1:
            raise ModelFormatError(f"line {src.pos}: corrupted layer dimensions {n_out}x{n_in}")
        W = np.vstack([src.reals(n_in) for _ in range(n_out)])
        b = src.reals(n_out)
        layers.append(nn.DenseLayer(W, b, act))
    try:
        return nn.NetworkParams(layers)
    except ValueError as e:
        raise ModelFormatError(f"network {name}: {e}") from None


def loads_model(text: str) -> TrainedModel:
    src = _Lines(text)
    tag = src.next()
    if tag != MODEL_TAG:
        raise ModelFormatError(f"unsupported model format {tag!r}; expected {MODEL_TAG!r}")
    cfg_text = " ".join(src.keyword("config"))
    try:
        raw = json.loads(cfg_text)
        known = {f.name for f in fields(ArchitectureConfig)}
        config = ArchitectureConfig(**{k: v for k, v in raw.items() if k in known})
    except (ValueError, TypeError) as e:
        raise ModelFormatError(f"line 2: bad config: {e}") from None
    fp = " ".join(src.keyword("schema"))
    n_trace = int(src.keyword("loss_trace")[0])
    if n_trace:
        trace = src.reals(n_trace).tolist()
    else:
        src.next()
        trace = []
    encoder = _read_network(src, "encoder")
    decoder = _read_network(src, "decoder")
    src.keyword("end")
    try:
        return TrainedModel(config, encoder, decoder, "" if fp == "-" else fp, trace)
    except ValueError as e:
        raise ModelFormatError(f"corrupted dimensions: {e}") from None


def load_model(path: Union[str, os.PathLike]) -> TrainedModel:
    with open(path, encoding="utf-8") as f:
        return loads_model(f.read())
