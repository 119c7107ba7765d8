"""Frechet distance between Gaussian summaries of two embedding sets.

The score for sets with statistics (mu_a, S_a) and (mu_b, S_b) is

    ||mu_a - mu_b||^2 + tr(S_a) + tr(S_b) - 2 tr(sqrt(S_a^1/2 S_b S_a^1/2))

The cross term is evaluated in its symmetric similarity-equivalent form so
the square root only ever touches a symmetric PSD matrix; its trace equals
tr(sqrt(S_a S_b)). Covariances from small per-emotion sets are routinely
rank-deficient, so a trace-scaled epsilon ridge is added before the root
when the smallest eigenvalue sits inside the clamp tolerance of zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DataValidationError,
    DimensionMismatchError,
    InsufficientDataError,
    NotPSDError,
)
from .pooling import pool_record
from .store import EMOTIONS

EIG_CLAMP_TOL = 1e-6  # relative: eigenvalues below -tol * ||M|| are an error
SCORE_CLAMP = 1e-6  # final scores in (-SCORE_CLAMP, 0) clamp to 0
RIDGE_SCALE = 1e-10


@dataclass
class GaussianStats:
    """Mean, covariance, and sample count summarizing one embedding set."""

    mu: np.ndarray
    sigma: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def gaussian_stats(embeddings: np.ndarray) -> GaussianStats:
    """Column mean and unbiased (N-1) covariance, explicitly symmetrized."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected (N, D), got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise InsufficientDataError(
            f"need at least 2 samples for covariance, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise DataValidationError("embeddings contain non-finite values")
    mu = arr.mean(axis=0)
    centered = arr - mu
    sigma = centered.T @ centered / (arr.shape[0] - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=sigma, count=arr.shape[0])


def matrix_sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues within tolerance below zero are clamped; anything more
    negative is treated as a genuinely non-PSD input and raised, never
    silently clamped.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {m.shape}")
    sym = (m + m.T) / 2.0
    eigval, eigvec = np.linalg.eigh(sym)
    norm = max(float(np.abs(eigval).max()), 1e-300)
    if eigval.min() < -EIG_CLAMP_TOL * norm:
        raise NotPSDError(
            f"matrix is not PSD: min eigenvalue {eigval.min():.3e} "
            f"vs norm {norm:.3e}"
        )
    root = (eigvec * np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T
    return (root + root.T) / 2.0


def _maybe_ridge(sigma: np.ndarray) -> np.ndarray:
    eigval = np.linalg.eigvalsh(sigma)
    norm = float(np.abs(eigval).max())
    if eigval.min() < EIG_CLAMP_TOL * norm:
        d = sigma.shape[0]
        return sigma + np.eye(d) * (RIDGE_SCALE * np.trace(sigma) / d)
    return sigma


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Symmetric, non-negative distance between two Gaussian summaries.

    Tiny negative round-off (above -1e-6) is clamped to zero; anything more
    negative indicates a logic error upstream and raises.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dims disagree: {a.dim} vs {b.dim}")
    sigma_a = _maybe_ridge(a.sigma)
    sigma_b = _maybe_ridge(b.sigma)
    root_a = matrix_sqrt_psd(sigma_a)
    inner = root_a @ sigma_b @ root_a
    cross = matrix_sqrt_psd(inner)
    delta = a.mu - b.mu
    score = float(
        delta @ delta + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(cross)
    )
    if score < -SCORE_CLAMP:
        raise NotPSDError(
            f"Frechet distance {score:.3e} is negative beyond round-off; "
            f"counts ({a.count}, {b.count}), dim {a.dim}"
        )
    return max(score, 0.0)


def frechet_distance_sets(set_a: np.ndarray, set_b: np.ndarray) -> float:
    return frechet_distance(gaussian_stats(set_a), gaussian_stats(set_b))


# ---------------------------------------------------------------------------
# Per-layer, per-emotion sweep
# ---------------------------------------------------------------------------


ALL_EMOTIONS = "all"
SWEEP_EMOTIONS = EMOTIONS + (ALL_EMOTIONS,)


@dataclass
class FADResult:
    model_tag: str
    layer: int  # 1-based
    emotion: str  # one of the six, or "all"
    score: float | None
    n_speech: int
    n_music: int
    error: str | None = None


def fad_sweep(
    records,
    model_tag: str,
    manifest=None,
    per_frame: bool = False,
) -> list[FADResult]:
    """Speech-vs-music distance for every (layer, emotion) cell plus "all".

    Embeddings are time-pooled per utterance by default (one vector per
    recording); ``per_frame`` switches to individual frame vectors. FAD needs
    no training, so all records take part regardless of split; a manifest, if
    given, restricts the sweep to its ids. Cells whose emotion is missing in
    one domain record an error and the sweep continues.
    """
    records = list(records)
    if manifest is not None:
        keep = {m.utterance_id for m in manifest.records}
        records = [r for r in records if r.utterance_id in keep]
    if not records:
        raise DataValidationError("no records to sweep")
    num_layers = records[0].num_layers

    # vectors[(domain, emotion)] -> list of (num_layers, D) pooled stacks,
    # or (num_layers, T, D) slabs in per-frame mode.
    vectors: dict[tuple[str, str], list[np.ndarray]] = {}
    for rec in records:
        if rec.num_layers != num_layers:
            raise DimensionMismatchError(
                f"record '{rec.utterance_id}' has {rec.num_layers} layers, "
                f"expected {num_layers}"
            )
        arr = (
            np.asarray(rec.layers, dtype=np.float64)
            if per_frame
            else pool_record(rec.layers)
        )
        vectors.setdefault((rec.domain, rec.emotion), []).append(arr)

    def layer_matrix(domain: str, emotion: str, layer: int) -> np.ndarray:
        if emotion == ALL_EMOTIONS:
            stacks = [
                arr
                for emo in EMOTIONS
                for arr in vectors.get((domain, emo), [])
            ]
        else:
            stacks = vectors.get((domain, emotion), [])
        if not stacks:
            return np.empty((0, 0))
        if per_frame:
            return np.concatenate([arr[layer] for arr in stacks], axis=0)
        return np.stack([arr[layer] for arr in stacks])

    results = []
    for layer in range(num_layers):
        for emotion in SWEEP_EMOTIONS:
            speech = layer_matrix("speech", emotion, layer)
            music = layer_matrix("music", emotion, layer)
            result = FADResult(
                model_tag=model_tag,
                layer=layer + 1,
                emotion=emotion,
                score=None,
                n_speech=speech.shape[0],
                n_music=music.shape[0],
            )
            try:
                if speech.shape[0] == 0 or music.shape[0] == 0:
                    missing = [
                        d
                        for d, arr in (("speech", speech), ("music", music))
                        if arr.shape[0] == 0
                    ]
                    raise InsufficientDataError(
                        f"emotion '{emotion}' missing in domain(s): {missing}"
                    )
                result.score = frechet_distance_sets(speech, music)
            except (InsufficientDataError, NotPSDError, DataValidationError) as exc:
                result.error = str(exc)
            results.append(result)
    return results
