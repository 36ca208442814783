"""Seeded generation of new instances from trained models.

Three procedures, each producing ``t`` new rows per seeding instance:

* VAE: encode to ``(mu, log_var)``, draw ``z = mu + sigma * eps`` ``t`` times,
  decode without dropout.
* MCD-VAE: encode to ``mu`` only, push it through the decoder ``t`` times with
  a fresh dropout mask on every pass.
* MCD-AE: as MCD-VAE but with the deterministic AE latent vector.

Randomness for seed ``i`` comes from its own counter-based stream, so the
output does not depend on how seeds are batched or ordered.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from scipy.special import expit

from . import _kernels, models, nn
from .data import EncodedDataset, RawTable, Schema, decode, write_table
from .models import ArchitectureConfig, TrainedModel
from .utils import check_unit_matrix, derive_seed, stream

log = logging.getLogger(__name__)

_EPS_STREAM = 11
# rows of hidden activations materialised at once
_CHUNK_CELLS = 1 << 22


@dataclass
class GenerationRequest:
    model: TrainedModel
    seeds: np.ndarray
    t: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.seeds, EncodedDataset):
            self.seeds = self.seeds.matrix
        self.seeds = np.asarray(self.seeds, dtype=np.float64)
        if self.seeds.ndim != 2 or self.seeds.shape[0] == 0:
            raise ValueError("seeds must be a non-empty 2-D matrix")
        if self.seeds.shape[1] != self.model.config.input_width:
            raise ValueError(
                f"seed width {self.seeds.shape[1]} != model input width {self.model.config.input_width}"
            )
        if int(self.t) < 1:
            raise ValueError(f"t must be >= 1, got {self.t}")
        self.t = int(self.t)


@dataclass
class GeneratedSet:
    """Generated encoded rows; row ``i * t + r`` is replicate ``r`` of seed ``i``."""

    rows: np.ndarray
    provenance: np.ndarray
    generator_kind: str

    @classmethod
    def seed_major(cls, rows: np.ndarray, n_seeds: int, t: int, kind: str) -> "GeneratedSet":
        prov = np.column_stack([np.repeat(np.arange(n_seeds), t), np.tile(np.arange(t), n_seeds)])
        return cls(rows, prov, kind)

    def __len__(self):
        return self.rows.shape[0]


def _chunks(n_seeds: int, t: int, width: int):
    per = max(1, _CHUNK_CELLS // max(1, t * width))
    for start in range(0, n_seeds, per):
        yield start, min(n_seeds, start + per)


def resample_latent(latent: models.LatentGaussian, t: int, rng_seed: int, lo: int = 0,
                    hi: Optional[int] = None) -> np.ndarray:
    """``z = mu + sigma * eps`` for ``t`` replicates of seeds ``lo .. hi - 1``, seed-major."""
    hi = len(latent.mu) if hi is None else hi
    L = latent.mu.shape[1]
    eps = np.concatenate([stream(rng_seed, _EPS_STREAM, i).standard_normal((t, L)) for i in range(lo, hi)])
    z = np.repeat(latent.mu[lo:hi], t, axis=0)
    z += np.repeat(latent.sigma[lo:hi], t, axis=0) * eps
    return z


def vae_generate(request: GenerationRequest, zero_noise: bool = False) -> GeneratedSet:
    """Resample each seed's latent Gaussian ``t`` times and decode.

    ``zero_noise`` forces ``eps = 0`` (every replicate then decodes ``mu``).
    """
    model, t = request.model, request.t
    if model.config.model_kind != "VAE":
        raise ValueError(f"vae_generate needs a VAE model, got {model.kind}")
    latent = models.encode(model, request.seeds)
    n = len(latent.mu)
    first, second, last = model.decoder.layers
    out = np.empty((n * t, model.config.input_width))
    for lo, hi in _chunks(n, t, first.n_out + second.n_out):
        if zero_noise:
            z = np.repeat(latent.mu[lo:hi], t, axis=0)
        else:
            z = resample_latent(latent, t, request.rng_seed, lo, hi)
        h = z @ first.weights.T + first.bias
        np.maximum(h, 0.0, out=h)
        h = h @ second.weights.T + second.bias
        np.maximum(h, 0.0, out=h)
        out[lo * t:hi * t] = expit(h @ last.weights.T + last.bias)
    return GeneratedSet.seed_major(out, n, t, "VAE")


def _mask_base(rng_seed: int) -> int:
    return derive_seed(rng_seed, "mcd-mask")


def mcd_dropout_mask(model: TrainedModel, rng_seed: int, seed_index: int, replicates) -> nn.DropoutMask:
    """The decoder mask that MC-dropout generation uses for the given replicates of one seed.

    Decoding the seed's latent vector (repeated per replicate) with this mask
    reproduces the generated rows exactly.
    """
    keep = model.config.keep_rate
    thr = _kernels.keep_threshold(keep)
    key = _kernels.seed_keys(_mask_base(rng_seed), [seed_index])[0]
    replicates = np.atleast_1d(replicates)
    masks = []
    for layer_index, layer in enumerate(model.decoder.layers[:-1]):
        bits = _kernels.mask_bits(key, replicates, layer_index, layer.n_out, thr)
        masks.append(bits * (1.0 / keep))
    return nn.DropoutMask(masks + [None], keep, rng_seed)


def _mcd_decode(model: TrainedModel, z: np.ndarray, t: int, rng_seed: int) -> np.ndarray:
    """``t`` dropout passes of the decoder for every latent row of ``z``.

    The first hidden activation depends only on the seed, so it is computed
    once per seed; masking happens inside the fused kernels.
    """
    keep = model.config.keep_rate
    thr = _kernels.keep_threshold(keep)
    scale = 1.0 / keep
    first, second, last = model.decoder.layers
    n = z.shape[0]
    keys = _kernels.seed_keys(_mask_base(rng_seed), np.arange(n))
    a1 = np.maximum(z @ first.weights.T + first.bias, 0.0)
    out = np.empty((n * t, last.n_out))
    for lo, hi in _chunks(n, t, first.n_out + second.n_out):
        h = np.empty(((hi - lo) * t, first.n_out))
        _kernels.masked_repeat(a1[lo:hi], t, keys[lo:hi], thr, scale, 0, h)
        pre = h @ second.weights.T + second.bias
        _kernels.relu_mask(pre, t, keys[lo:hi], thr, scale, 1)
        out[lo * t:hi * t] = expit(pre @ last.weights.T + last.bias)
    return out


def _check_mcd(model: TrainedModel, base: str):
    if model.config.model_kind != base or not model.config.mcd_decoder:
        raise ValueError(f"expected an MCD-{base} model, got {model.kind}")
    if model.config.keep_rate >= 1.0:
        warnings.warn("keep_rate=1: MC-dropout replicates of a seed are all identical", RuntimeWarning)


def mcd_vae_generate(request: GenerationRequest) -> GeneratedSet:
    """Decode each seed's latent mean ``t`` times through the dropout decoder."""
    model = request.model
    _check_mcd(model, "VAE")
    latent = models.encode(model, request.seeds)
    log.debug("MCD-VAE: discarding latent sigma (mean %.4g)", float(np.mean(latent.sigma)))
    rows = _mcd_decode(model, latent.mu, request.t, request.rng_seed)
    return GeneratedSet.seed_major(rows, len(latent.mu), request.t, "MCD-VAE")


def mcd_ae_generate(request: GenerationRequest) -> GeneratedSet:
    """Decode each seed's AE latent vector ``t`` times through the dropout decoder."""
    model = request.model
    _check_mcd(model, "AE")
    z = models.encode(model, request.seeds)
    rows = _mcd_decode(model, z, request.t, request.rng_seed)
    return GeneratedSet.seed_major(rows, len(z), request.t, "MCD-AE")


_PROCEDURES = {"VAE": vae_generate, "MCD-VAE": mcd_vae_generate, "MCD-AE": mcd_ae_generate}


def generate(request: GenerationRequest) -> GeneratedSet:
    """Dispatch on the model's generator kind."""
    try:
        proc = _PROCEDURES[request.model.kind]
    except KeyError:
        raise ValueError(f"no generation procedure for model kind {request.model.kind!r}") from None
    return proc(request)


def materialize(gen: GeneratedSet, schema: Schema) -> RawTable:
    """Decode generated rows into the original schema (class included)."""
    return decode(gen.rows, schema)


def write_generated(gen: GeneratedSet, schema: Schema, path: Union[str, os.PathLike],
                    provenance_path: Optional[Union[str, os.PathLike]] = None) -> None:
    write_table(materialize(gen, schema), path)
    if provenance_path is not None:
        with open(provenance_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["seed_index", "replicate_index"])
            w.writerows(gen.provenance.tolist())


class _Generator(BaseEstimator):
    _model_kind = "VAE"
    _mcd = False

    def __init__(self, hidden1=None, hidden2=None, latent=None, keep_rate=0.9, epochs=200,
                 lr=1e-3, batch_size=32, loss="bce", random_state=0):
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.latent = latent
        self.keep_rate = keep_rate
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.loss = loss
        self.random_state = random_state

    @property
    def generator_kind(self) -> str:
        return f"MCD-{self._model_kind}" if self._mcd else self._model_kind

    def fit(self, X, y=None):
        """Train on an encoded matrix (or :class:`EncodedDataset`) with entries in [0, 1]."""
        n_attributes = None
        fingerprint = ""
        if isinstance(X, EncodedDataset):
            n_attributes = len(X.schema.attributes)
            fingerprint = X.schema.fingerprint()
            X = X.matrix
        X = check_unit_matrix(X)
        config = ArchitectureConfig(
            input_width=X.shape[1], n_attributes=n_attributes, hidden1=self.hidden1,
            hidden2=self.hidden2, latent=self.latent, keep_rate=self.keep_rate,
            model_kind=self._model_kind, mcd_decoder=self._mcd, epochs=self.epochs,
            lr=self.lr, batch_size=self.batch_size, seed=int(self.random_state or 0), loss=self.loss,
        )
        self.model_ = models.train(X, config, schema_fingerprint=fingerprint)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Latent representation (the mean for variational models)."""
        check_is_fitted(self, "model_")
        z = models.encode(self.model_, check_unit_matrix(_matrix(X), width=self.n_features_in_))
        return z.mu if isinstance(z, models.LatentGaussian) else z

    def generate_set(self, X, t: int = 2, random_state: Optional[int] = None) -> GeneratedSet:
        check_is_fitted(self, "model_")
        seeds = check_unit_matrix(_matrix(X), width=self.n_features_in_)
        seed = self.random_state if random_state is None else random_state
        return generate(GenerationRequest(self.model_, seeds, t, int(seed or 0)))

    def generate(self, X, t: int = 2, random_state: Optional[int] = None) -> np.ndarray:
        """``len(X) * t`` encoded rows; rows ``i*t .. i*t+t-1`` come from seed ``i``."""
        return self.generate_set(X, t, random_state).rows


def _matrix(X):
    return X.matrix if isinstance(X, EncodedDataset) else X


class VAEGenerator(_Generator):
    """Variational autoencoder; new rows are decoded latent resamples. ``keep_rate`` is unused."""

    _model_kind, _mcd = "VAE", False


class MCDVAEGenerator(_Generator):
    """VAE whose decoder keeps dropout active; generation decodes the latent mean."""

    _model_kind, _mcd = "VAE", True


class MCDAEGenerator(_Generator):
    """Plain autoencoder with an MC-dropout decoder."""

    _model_kind, _mcd = "AE", True


GENERATORS = {"VAE": VAEGenerator, "MCD-VAE": MCDVAEGenerator, "MCD-AE": MCDAEGenerator}
