"""crossemo: cross-domain emotion representation toolkit.

Layerwise linear probing, two-stage cross-domain adaptation (baseline /
weighted-sum / PEFT), and Frechet-distance similarity sweeps over cached
per-layer audio embeddings, runnable end to end on synthetic fixtures.
"""

__version__ = "0.1.0"

from .errors import CrossemoError
from .fad import FADResult, GaussianStats, fad_sweep, frechet_distance, gaussian_stats, matrix_sqrt_psd
from .pooling import AggregatorParams, aggregate_layers, mean_pool_time
from .probe import MetricsReport, ProbeParams, TrainConfig, evaluate, layerwise_probe_sweep, train_probe
from .store import (
    DOMAINS,
    EMOTIONS,
    DatasetManifest,
    EmbeddingRecord,
    make_stratified_split,
    read_embedding_file,
    write_embedding_file,
)
from .synthetic import SyntheticConfig, generate_synthetic_manifest

__all__ = [
    "__version__",
    "CrossemoError",
    "DOMAINS",
    "EMOTIONS",
    "AggregatorParams",
    "DatasetManifest",
    "EmbeddingRecord",
    "FADResult",
    "GaussianStats",
    "MetricsReport",
    "ProbeParams",
    "SyntheticConfig",
    "TrainConfig",
    "aggregate_layers",
    "evaluate",
    "fad_sweep",
    "frechet_distance",
    "gaussian_stats",
    "generate_synthetic_manifest",
    "layerwise_probe_sweep",
    "make_stratified_split",
    "matrix_sqrt_psd",
    "mean_pool_time",
    "read_embedding_file",
    "train_probe",
    "write_embedding_file",
]
