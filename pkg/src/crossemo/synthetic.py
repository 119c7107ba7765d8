"""Synthetic embedding fixtures: class-conditional Gaussians with tunable cross-domain coupling.

The generator exists so every experiment in the toolkit can run with no
upstream extractor: records are drawn per (domain, emotion) from configured
Gaussians. A coupling coefficient in [0, 1] blends each music class mean
toward the matching speech class mean; at 1.0 the two domains share class
means exactly, at 0.0 each domain keeps its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numerics import derive_rng
from .store import DOMAINS, EMOTIONS, DatasetManifest, EmbeddingRecord, make_stratified_split

PSD_TOL = 1e-8


def _cov_sqrt(cov: np.ndarray, context: str) -> np.ndarray:
    """Symmetric square-root factor used to color unit-normal draws."""
    eigval, eigvec = np.linalg.eigh((cov + cov.T) / 2.0)
    scale = max(1.0, float(eigval.max()))
    if eigval.min() < -PSD_TOL * scale:
        raise ConfigError(f"{context}: configured covariance is not PSD")
    return (eigvec * np.sqrt(np.clip(eigval, 0.0, None))) @ eigvec.T


@dataclass
class SyntheticConfig:
    """Per-class Gaussian spec for both domains.

    ``means[domain][emotion]`` is a D-vector; ``covs`` entries may be a
    scalar variance, a D-vector diagonal, or a full D x D matrix (default:
    identity). ``signal_layers`` lists 1-based layers that carry the class
    mean; other layers get zero-mean noise. None means every layer carries it.
    """

    num_layers: int
    frames: int
    dim: int
    counts: dict[str, int]
    means: dict[str, dict[str, np.ndarray]]
    covs: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    coupling: float = 1.0
    signal_layers: tuple[int, ...] | None = None
    model_tag: str = "synthetic"

    def __post_init__(self):
        if self.num_layers < 1 or self.frames < 1 or self.dim < 1:
            raise ConfigError("num_layers, frames, and dim must all be >= 1")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must be in [0, 1], got {self.coupling}")
        for emotion in EMOTIONS:
            if self.counts.get(emotion, 0) < 1:
                raise ConfigError(f"counts['{emotion}'] must be >= 1")
        for domain in DOMAINS:
            for emotion in EMOTIONS:
                mean = np.asarray(self.means[domain][emotion], dtype=np.float64)
                if mean.shape != (self.dim,):
                    raise ConfigError(
                        f"means[{domain}][{emotion}] must have shape ({self.dim},)"
                    )
                self.means[domain][emotion] = mean
        if self.signal_layers is not None:
            layers = tuple(sorted(set(int(l) for l in self.signal_layers)))
            if not layers or layers[0] < 1 or layers[-1] > self.num_layers:
                raise ConfigError("signal_layers must be 1-based layer indices")
            self.signal_layers = layers

    def cov_matrix(self, domain: str, emotion: str) -> np.ndarray:
        raw = self.covs.get(domain, {}).get(emotion)
        if raw is None:
            return np.eye(self.dim)
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim == 0:
            return np.eye(self.dim) * float(arr)
        if arr.ndim == 1:
            if arr.shape != (self.dim,):
                raise ConfigError(f"covs[{domain}][{emotion}]: bad diagonal length")
            return np.diag(arr)
        if arr.shape != (self.dim, self.dim):
            raise ConfigError(f"covs[{domain}][{emotion}]: bad matrix shape")
        return arr

    def to_json(self) -> str:
        obj = {
            "num_layers": self.num_layers,
            "frames": self.frames,
            "dim": self.dim,
            "counts": self.counts,
            "coupling": self.coupling,
            "signal_layers": list(self.signal_layers) if self.signal_layers else None,
            "model_tag": self.model_tag,
            "means": {
                d: {e: self.means[d][e].tolist() for e in EMOTIONS} for d in DOMAINS
            },
            "covs": {
                d: {e: np.asarray(v).tolist() for e, v in by_emotion.items()}
                for d, by_emotion in self.covs.items()
            },
        }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SyntheticConfig":
        obj = json.loads(text)
        signal = obj.get("signal_layers")
        return cls(
            num_layers=obj["num_layers"],
            frames=obj["frames"],
            dim=obj["dim"],
            counts=obj["counts"],
            means={
                d: {e: np.asarray(v, dtype=np.float64) for e, v in by_emotion.items()}
                for d, by_emotion in obj["means"].items()
            },
            covs={
                d: {e: np.asarray(v, dtype=np.float64) for e, v in by_emotion.items()}
                for d, by_emotion in obj.get("covs", {}).items()
            },
            coupling=obj.get("coupling", 1.0),
            signal_layers=tuple(signal) if signal else None,
            model_tag=obj.get("model_tag", "synthetic"),
        )

    @classmethod
    def from_file(cls, path) -> "SyntheticConfig":
        return cls.from_json(Path(path).read_text())


def effective_mean(config: SyntheticConfig, domain: str, emotion: str) -> np.ndarray:
    """Class mean after coupling: music means are blended toward speech means."""
    if domain == "speech":
        return config.means["speech"][emotion]
    c = config.coupling
    return c * config.means["speech"][emotion] + (1.0 - c) * config.means["music"][emotion]


def generate_synthetic_manifest(
    config: SyntheticConfig, seed: int
) -> tuple[list[EmbeddingRecord], DatasetManifest]:
    """Draw records for every (domain, emotion) and split them.

    Each record gets its own generator keyed by (seed, domain, emotion,
    index), so the output is identical regardless of generation order.
    """
    signal = (
        set(config.signal_layers)
        if config.signal_layers is not None
        else set(range(1, config.num_layers + 1))
    )
    records: list[EmbeddingRecord] = []
    for domain in DOMAINS:
        for emotion in EMOTIONS:
            mean = effective_mean(config, domain, emotion)
            sqrt_cov = _cov_sqrt(
                config.cov_matrix(domain, emotion), f"covs[{domain}][{emotion}]"
            )
            layer_means = np.stack(
                [
                    mean if (l + 1) in signal else np.zeros(config.dim)
                    for l in range(config.num_layers)
                ]
            )
            for i in range(config.counts[emotion]):
                rng = derive_rng(seed, "synth", domain, emotion, i)
                noise = rng.standard_normal(
                    (config.num_layers, config.frames, config.dim)
                )
                layers = layer_means[:, None, :] + noise @ sqrt_cov.T
                records.append(
                    EmbeddingRecord(
                        utterance_id=f"{domain}-{emotion}-{i:04d}",
                        domain=domain,
                        emotion=emotion,
                        layers=layers.astype(np.float32),
                        model_tag=config.model_tag,
                    )
                )
    manifest = make_stratified_split(records, seed)
    return records, manifest


# ---------------------------------------------------------------------------
# Preset fixtures
# ---------------------------------------------------------------------------


def separated_means(dim: int, separation: float) -> dict[str, np.ndarray]:
    """One class mean per emotion, each on its own axis, ``separation`` apart."""
    if dim < len(EMOTIONS):
        raise ConfigError(f"dim must be >= {len(EMOTIONS)} for separated class means")
    means = {}
    for idx, emotion in enumerate(EMOTIONS):
        v = np.zeros(dim)
        v[idx] = separation
        means[emotion] = v
    return means


def coupled_config(
    *,
    dim: int = 16,
    frames: int = 5,
    num_layers: int = 2,
    count_per_class: int = 40,
    separation: float = 10.0,
    model_tag: str = "synthetic",
) -> SyntheticConfig:
    """Fully coupled domains: music shares every class mean with speech."""
    means = separated_means(dim, separation)
    return SyntheticConfig(
        num_layers=num_layers,
        frames=frames,
        dim=dim,
        counts={e: count_per_class for e in EMOTIONS},
        means={"speech": dict(means), "music": dict(means)},
        coupling=1.0,
        model_tag=model_tag,
    )


def layer_signal_config(
    *,
    signal_layer: int = 3,
    num_layers: int = 6,
    dim: int = 8,
    frames: int = 5,
    count_per_class: int = 30,
    separation: float = 10.0,
    model_tag: str = "synthetic",
) -> SyntheticConfig:
    """Only one layer carries class information; every other layer is noise."""
    config = coupled_config(
        dim=dim,
        frames=frames,
        num_layers=num_layers,
        count_per_class=count_per_class,
        separation=separation,
        model_tag=model_tag,
    )
    config.signal_layers = (signal_layer,)
    return config


def disjoint_config(
    *,
    dim: int = 8,
    frames: int = 5,
    num_layers: int = 2,
    count_per_class: int = 40,
    separation: float = 10.0,
    domain_shift: float = 10.0,
    model_tag: str = "synthetic",
) -> SyntheticConfig:
    """Uncoupled domains whose class means sit ``domain_shift`` sigma apart."""
    speech = separated_means(dim, separation)
    shift = np.zeros(dim)
    shift[dim - 1] = domain_shift
    music = {e: v + shift for e, v in speech.items()}
    return SyntheticConfig(
        num_layers=num_layers,
        frames=frames,
        dim=dim,
        counts={e: count_per_class for e in EMOTIONS},
        means={"speech": speech, "music": music},
        coupling=0.0,
        model_tag=model_tag,
    )


PRESETS = {
    "coupled": coupled_config,
    "layer_signal": layer_signal_config,
    "disjoint": disjoint_config,
}


def preset_config(name: str, **params) -> SyntheticConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}")
    try:
        return PRESETS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset '{name}': {exc}") from exc
