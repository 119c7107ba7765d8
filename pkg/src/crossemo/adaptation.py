"""Two-stage cross-domain fine-tuning: baseline, weighted-sum, and PEFT approaches.

Stage one trains an approach's trainable set on the source domain and saves
the best-validation-UA snapshot; stage two reloads it, resets optimizer
state, and continues training the same trainable set on the target domain.
The trainable sets nest: baseline trains only the probe, ws adds the layer
weights, peft adds the gate and every adapter tensor while the encoder
backbone stays frozen throughout.

Baseline and ws consume cached per-layer features. PEFT needs the upstream
itself, so at desk scale the corpus must carry raw input sequences (single-
layer records) that are pushed through the frozen mini encoder; the same
encoder's outputs then serve as the cached features for the other two
approaches, keeping all grid cells comparable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

from .encoder import (
    AdapterConfig,
    AdapterParams,
    EncoderWeights,
    MiniEncoderConfig,
    PeftPipeline,
    encoder_forward,
    peft_assemble,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataValidationError,
    DimensionMismatchError,
)
from .numerics import derive_seed, softmax
from .pooling import (
    AggregatorParams,
    aggregate_backward_batch,
    aggregate_layers_batch,
    pool_record,
)
from .probe import (
    EMOTIONS,
    TASK_DOMAIN,
    TASKS,
    FitResult,
    MetricsReport,
    ProbeParams,
    TrainConfig,
    fit_model,
    metrics_from_predictions,
)

APPROACHES = ("baseline", "ws", "peft")

BASELINE_LR = 1e-3
PEFT_LR = 1e-4


# ---------------------------------------------------------------------------
# Data container
# ---------------------------------------------------------------------------


@dataclass
class AdaptationData:
    """Per-domain features, labels, and split indices for adaptation runs.

    ``features[domain]`` is (N, L, D) time-pooled per-layer features;
    ``inputs[domain]`` is (N, T, D_in) raw sequences, present only when the
    corpus supports PEFT.
    """

    features: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]
    splits: dict[str, dict[str, np.ndarray]]
    inputs: dict[str, np.ndarray] | None = None
    encoder_config: MiniEncoderConfig | None = None
    encoder_weights: EncoderWeights | None = None

    @property
    def num_layers(self) -> int:
        return next(iter(self.features.values())).shape[1]

    @property
    def feature_dim(self) -> int:
        return next(iter(self.features.values())).shape[2]

    @classmethod
    def from_records(cls, records, manifest) -> "AdaptationData":
        """Cached multi-layer embeddings; supports baseline and ws only."""
        features, labels, splits = {}, {}, {}
        for domain in ("speech", "music"):
            subset = sorted(
                (r for r in records if r.domain == domain),
                key=lambda r: r.utterance_id,
            )
            if not subset:
                raise DataValidationError(f"no records for domain '{domain}'")
            features[domain] = np.stack([pool_record(r.layers) for r in subset])
            labels[domain] = np.array(
                [EMOTIONS.index(r.emotion) for r in subset], dtype=np.int64
            )
            splits[domain] = _split_indices(subset, manifest, domain)
        return cls(features=features, labels=labels, splits=splits)

    @classmethod
    def from_inputs(
        cls,
        input_records,
        manifest,
        encoder_config: MiniEncoderConfig,
    ) -> "AdaptationData":
        """Raw input sequences pushed through the frozen encoder once.

        ``input_records`` must be single-layer records whose one layer slice
        is the (T, model_dim) input sequence. The frozen encoder's pooled
        per-layer outputs become the cached features for baseline/ws, and the
        raw inputs stay available for PEFT.
        """
        weights = EncoderWeights(encoder_config)
        features, labels, splits, inputs = {}, {}, {}, {}
        for domain in ("speech", "music"):
            subset = sorted(
                (r for r in input_records if r.domain == domain),
                key=lambda r: r.utterance_id,
            )
            if not subset:
                raise DataValidationError(f"no records for domain '{domain}'")
            for rec in subset:
                if rec.num_layers != 1:
                    raise DimensionMismatchError(
                        f"record '{rec.utterance_id}': input corpora store one "
                        f"layer per record, got {rec.num_layers}"
                    )
                if rec.dim != encoder_config.model_dim:
                    raise DimensionMismatchError(
                        f"record '{rec.utterance_id}': input dim {rec.dim} does "
                        f"not match model_dim {encoder_config.model_dim}"
                    )
            x = np.stack([r.layers[0] for r in subset]).astype(np.float64)
            states = encoder_forward(encoder_config, weights, x)
            inputs[domain] = x
            features[domain] = states.mean(axis=2).transpose(1, 0, 2)
            labels[domain] = np.array(
                [EMOTIONS.index(r.emotion) for r in subset], dtype=np.int64
            )
            splits[domain] = _split_indices(subset, manifest, domain)
        return cls(
            features=features,
            labels=labels,
            splits=splits,
            inputs=inputs,
            encoder_config=encoder_config,
            encoder_weights=weights,
        )


def _split_indices(subset, manifest, domain) -> dict[str, np.ndarray]:
    out = {}
    for name in ("train", "val", "test"):
        ids = set(manifest.ids(name, domain=domain))
        out[name] = np.array(
            [i for i, r in enumerate(subset) if r.utterance_id in ids],
            dtype=np.int64,
        )
        if out[name].size == 0:
            raise DataValidationError(f"no {domain} records in split '{name}'")
    return out


# ---------------------------------------------------------------------------
# Approach models (fit_model contract)
# ---------------------------------------------------------------------------


class _AggregateProbeModel:
    """Probe over aggregated cached features; aggregator optionally trainable."""

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        aggregator: AggregatorParams,
        probe: ProbeParams,
    ):
        self.features = features
        self.labels = labels
        self.aggregator = aggregator
        self.probe = probe

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.aggregator.trainable(), **self.probe.trainable()}

    def loss_and_grads(self, idx):
        pooled = self.features[idx]
        labels = self.labels[idx]
        n = labels.size
        feat = aggregate_layers_batch(pooled, self.aggregator)
        logits = feat @ self.probe.W.T + self.probe.b
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -float(logp[np.arange(n), labels].mean())
        dlogits = softmax(logits, axis=1)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        grads = {"probe.W": dlogits.T @ feat, "probe.b": dlogits.sum(axis=0)}
        if self.aggregator.mode != "layer_mean":
            dfeat = dlogits @ self.probe.W
            agg_grads, _ = aggregate_backward_batch(pooled, self.aggregator, dfeat)
            grads.update(agg_grads)
        return loss, grads

    def predict(self, idx):
        feat = aggregate_layers_batch(self.features[idx], self.aggregator)
        return (feat @ self.probe.W.T + self.probe.b).argmax(axis=1)

    def targets(self, idx):
        return self.labels[idx]


class _PeftModel:
    """fit_model adapter around a full PEFT pipeline on raw inputs."""

    def __init__(self, pipeline: PeftPipeline, inputs: np.ndarray, labels: np.ndarray):
        self.pipeline = pipeline
        self.inputs = inputs
        self.labels = labels

    def parameters(self) -> dict[str, np.ndarray]:
        return self.pipeline.parameters()

    def loss_and_grads(self, idx):
        loss, _, cache = self.pipeline.forward_loss(
            self.inputs[idx], self.labels[idx]
        )
        return loss, self.pipeline.backward(cache)

    def predict(self, idx):
        logits, _ = self.pipeline.forward_logits(self.inputs[idx])
        return logits.argmax(axis=1)

    def targets(self, idx):
        return self.labels[idx]


def build_model(plan: "StagePlan", data: AdaptationData):
    """Fresh trainable model for the plan's approach over the given corpus."""
    num_layers, dim = data.num_layers, data.feature_dim
    probe = ProbeParams.zeros(dim)
    if plan.approach == "baseline":
        agg = AggregatorParams.init("layer_mean", num_layers)
        return _AggregateProbeModel(None, None, agg, probe)
    if plan.approach == "ws":
        agg = AggregatorParams.init("weighted_sum", num_layers)
        return _AggregateProbeModel(None, None, agg, probe)
    if data.inputs is None or data.encoder_weights is None:
        raise ConfigError(
            "peft requires an input corpus (single-layer records) and an "
            "encoder config; cached multi-layer embeddings are not enough"
        )
    agg = AggregatorParams.init("weighting_gate", num_layers)
    adapters = AdapterParams.init(
        data.encoder_config, plan.adapter_config, seed=plan.adapter_seed
    )
    pipeline = peft_assemble(
        data.encoder_config, data.encoder_weights, adapters, agg, probe
    )
    return _PeftModel(pipeline, None, None)


def _bind_domain(model, data: AdaptationData, domain: str):
    """Point an approach model at one domain's arrays; parameters persist."""
    if isinstance(model, _PeftModel):
        model.inputs = data.inputs[domain]
        model.labels = data.labels[domain]
    else:
        model.features = data.features[domain]
        model.labels = data.labels[domain]
    return model


# ---------------------------------------------------------------------------
# Stage plans and checkpoints
# ---------------------------------------------------------------------------


def default_train_config(approach: str, *, epochs: int = 300, seed: int = 0) -> TrainConfig:
    """Per-approach defaults: probe-style lr for baseline/ws, lower lr for peft."""
    lr = PEFT_LR if approach == "peft" else BASELINE_LR
    return TrainConfig(learning_rate=lr, epochs=epochs, seed=seed)


@dataclass
class StagePlan:
    approach: str
    source_task: str
    target_task: str
    stage_one: TrainConfig
    stage_two: TrainConfig
    checkpoint_path: Path
    adapter_config: AdapterConfig = field(default_factory=AdapterConfig)
    adapter_seed: int = 0

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ConfigError(f"unknown approach '{self.approach}'")
        if self.source_task not in TASKS or self.target_task not in TASKS:
            raise ConfigError(f"tasks must be in {TASKS}")
        if self.source_task == self.target_task:
            raise ConfigError("source and target tasks must differ")
        self.checkpoint_path = Path(self.checkpoint_path)

    @property
    def direction(self) -> str:
        return f"{self.source_task}->{self.target_task}"


def plan_config_hash(plan: StagePlan, data: AdaptationData) -> str:
    """Fingerprint of everything a checkpoint must agree on to be loadable."""
    payload = {
        "approach": plan.approach,
        "num_layers": data.num_layers,
        "feature_dim": data.feature_dim,
        "num_classes": len(EMOTIONS),
        "encoder": data.encoder_config.to_dict() if data.encoder_config else None,
        "adapter": plan.adapter_config.to_dict() if plan.approach == "peft" else None,
    }
    return sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"t.{name}": value for name, value in tensors.items()}
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    ).copy()
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint '{path}' does not exist")
    with np.load(path, allow_pickle=False) as bundle:
        meta = json.loads(bundle["meta"].tobytes().decode())
        tensors = {
            key[2:]: bundle[key] for key in bundle.files if key.startswith("t.")
        }
    return tensors, meta


# ---------------------------------------------------------------------------
# Stage runners
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    report: MetricsReport  # test metrics on the stage's domain
    val_ua: float
    trainable_names: list[str]
    checkpoint_path: Path | None = None


def _run_training(model, data, task, config) -> tuple[FitResult, MetricsReport]:
    domain = TASK_DOMAIN[task]
    _bind_domain(model, data, domain)
    splits = data.splits[domain]
    fit = fit_model(model, config, splits["train"], splits["val"])
    test_report = metrics_from_predictions(
        model.targets(splits["test"]), model.predict(splits["test"])
    )
    return fit, test_report


def run_stage_one(plan: StagePlan, data: AdaptationData) -> StageResult:
    """Train on the source domain, checkpoint the best-val snapshot, test on source."""
    model = build_model(plan, data)
    fit, test_report = _run_training(model, data, plan.source_task, plan.stage_one)
    params = model.parameters()
    meta = {
        "config_hash": plan_config_hash(plan, data),
        "approach": plan.approach,
        "stage": 1,
        "source_task": plan.source_task,
        "val_ua": fit.report.ua,
        "epoch_of_best": fit.report.epoch_of_best,
        "seed": plan.stage_one.seed,
    }
    save_checkpoint(plan.checkpoint_path, params, meta)
    return StageResult(
        report=test_report,
        val_ua=fit.report.ua,
        trainable_names=sorted(params),
        checkpoint_path=plan.checkpoint_path,
    )


def run_stage_two(
    plan: StagePlan, data: AdaptationData, checkpoint_path=None
) -> StageResult:
    """Load the stage-one snapshot and continue on the target domain.

    Optimizer state is reset (fresh moments, step 0); the trainable set is
    unchanged. Raises if the checkpoint was built for a different geometry.
    """
    tensors, meta = load_checkpoint(checkpoint_path or plan.checkpoint_path)
    expected = plan_config_hash(plan, data)
    if meta.get("config_hash") != expected:
        raise CheckpointError(
            f"checkpoint hash {meta.get('config_hash')} does not match current "
            f"plan/data hash {expected}"
        )
    model = build_model(plan, data)
    params = model.parameters()
    if set(tensors) != set(params):
        raise CheckpointError("checkpoint tensors do not match the trainable set")
    for name, value in tensors.items():
        if params[name].shape != value.shape:
            raise CheckpointError(f"checkpoint tensor '{name}' has wrong shape")
        params[name][...] = value
    fit, test_report = _run_training(model, data, plan.target_task, plan.stage_two)
    return StageResult(
        report=test_report, val_ua=fit.report.ua, trainable_names=sorted(params)
    )


def train_single_stage(
    approach: str,
    task: str,
    data: AdaptationData,
    config: TrainConfig,
    adapter_config: AdapterConfig | None = None,
    adapter_seed: int = 0,
) -> StageResult:
    """From-scratch run on one domain; the transfer oracle's comparison arm."""
    other = "MER" if task == "SER" else "SER"
    plan = StagePlan(
        approach=approach,
        source_task=task,
        target_task=other,
        stage_one=config,
        stage_two=config,
        checkpoint_path=Path("unused"),
        adapter_config=adapter_config or AdapterConfig(),
        adapter_seed=adapter_seed,
    )
    model = build_model(plan, data)
    fit, test_report = _run_training(model, data, task, config)
    return StageResult(
        report=test_report,
        val_ua=fit.report.ua,
        trainable_names=sorted(model.parameters()),
    )


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass
class GridRow:
    model_tag: str
    approach: str
    direction: str
    stage_one_ua: float | None = None
    stage_two_ua: float | None = None
    stage_one_val_ua: float | None = None
    stage_two_val_ua: float | None = None
    scratch_ua: float | None = None
    seed_stage_one: int = 0
    seed_stage_two: int = 0
    error: str | None = None


def adaptation_grid(
    datasets: dict[str, AdaptationData],
    checkpoint_dir,
    *,
    approaches=APPROACHES,
    directions=("SER->MER", "MER->SER"),
    epochs: int = 300,
    base_seed: int = 0,
    include_scratch: bool = False,
    adapter_config: AdapterConfig | None = None,
    learning_rates: dict[str, float] | None = None,
) -> list[GridRow]:
    """One row per (model_tag, approach, direction); failures stay per-cell.

    Every cell derives its own stage seeds from (base_seed, tag, approach,
    direction), so cells are reproducible independently and in any order.
    The optional scratch column trains on the target domain from scratch
    with the combined epoch budget of both stages.
    """
    checkpoint_dir = Path(checkpoint_dir)
    adapter_config = adapter_config or AdapterConfig()
    rows = []
    for tag in sorted(datasets):
        data = datasets[tag]
        for approach in approaches:
            if approach not in APPROACHES:
                raise ConfigError(f"unknown approach '{approach}'")
            for direction in directions:
                source, target = direction.split("->")
                seed_one = derive_seed(base_seed, tag, approach, direction, 1)
                seed_two = derive_seed(base_seed, tag, approach, direction, 2)
                row = GridRow(
                    model_tag=tag,
                    approach=approach,
                    direction=direction,
                    seed_stage_one=seed_one,
                    seed_stage_two=seed_two,
                )
                rows.append(row)
                lr = (learning_rates or {}).get(
                    approach, PEFT_LR if approach == "peft" else BASELINE_LR
                )
                try:
                    plan = StagePlan(
                        approach=approach,
                        source_task=source,
                        target_task=target,
                        stage_one=TrainConfig(
                            learning_rate=lr, epochs=epochs, seed=seed_one
                        ),
                        stage_two=TrainConfig(
                            learning_rate=lr, epochs=epochs, seed=seed_two
                        ),
                        checkpoint_path=checkpoint_dir
                        / f"{tag}_{approach}_{source}_{target}.npz",
                        adapter_config=adapter_config,
                        adapter_seed=derive_seed(base_seed, tag, approach, "adapter"),
                    )
                    one = run_stage_one(plan, data)
                    row.stage_one_ua = one.report.ua
                    row.stage_one_val_ua = one.val_ua
                    two = run_stage_two(plan, data)
                    row.stage_two_ua = two.report.ua
                    row.stage_two_val_ua = two.val_ua
                    if include_scratch:
                        scratch = train_single_stage(
                            approach,
                            target,
                            data,
                            TrainConfig(
                                learning_rate=lr,
                                epochs=2 * epochs,
                                seed=derive_seed(
                                    base_seed, tag, approach, direction, "scratch"
                                ),
                            ),
                            adapter_config=adapter_config,
                            adapter_seed=derive_seed(
                                base_seed, tag, approach, "adapter"
                            ),
                        )
                        row.scratch_ua = scratch.report.ua
                except (ConfigError, DataValidationError, DimensionMismatchError,
                        CheckpointError) as exc:
                    row.error = str(exc)
    return rows
