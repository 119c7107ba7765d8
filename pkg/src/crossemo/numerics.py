"""Small numeric helpers shared across modules."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DataValidationError


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def sigmoid(x):
    # Overflow-safe in both tails.
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def require_finite(arr, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataValidationError(f"{name} contains non-finite values")


def derive_seed(*parts) -> int:
    """Stable 48-bit seed from printable parts, independent of call order elsewhere.

    48 bits keeps recorded seeds exact in JSON consumers that read numbers as
    IEEE doubles.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:6], "little")


def derive_rng(*parts) -> np.random.Generator:
    """Independent generator keyed by the given parts."""
    return np.random.default_rng(derive_seed(*parts))
