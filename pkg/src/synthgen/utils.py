"""Seed derivation and input validation shared across the package."""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.utils import check_array


def derive_seed(master: int, label: str) -> int:
    """Child seed from ``sha256(master || label)``.

    Adding a new labelled stage never perturbs the seeds of existing ones.
    """
    digest = hashlib.sha256(f"{int(master)}\x00{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def stream(rng_seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the stream addressed by ``key``.

    Streams for distinct keys are independent, so the order in which they are
    consumed does not change what each one produces.
    """
    ss = np.random.SeedSequence(entropy=int(rng_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def check_unit_matrix(X, name: str = "X", width: int | None = None) -> np.ndarray:
    """2-D finite float array with entries in [0, 1] and optionally a fixed width."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if width is not None and X.shape[1] != width:
        raise ValueError(f"{name} has {X.shape[1]} columns, expected {width}")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError(f"{name} must be scaled to [0, 1]")
    return X
