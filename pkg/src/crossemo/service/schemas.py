"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..encoder import AdapterConfig, MiniEncoderConfig
from ..probe import TrainConfig

_NO_PROTECTED = ConfigDict(protected_namespaces=())


class TrainSettings(BaseModel):
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 32
    weight_decay: float = 0.01
    seed: int = 0

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )


class EncoderSettings(BaseModel):
    num_layers: int = 2
    model_dim: int = 16
    num_heads: int = 2
    ffn_dim: int = 32
    seed: int = 0
    use_positions: bool = False

    def to_config(self) -> MiniEncoderConfig:
        return MiniEncoderConfig(
            num_layers=self.num_layers,
            model_dim=self.model_dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            seed=self.seed,
            use_positions=self.use_positions,
        )


class AdapterSettings(BaseModel):
    rank: int = 8
    alpha: float = 16.0
    bottleneck_dim: int = 32

    def to_config(self) -> AdapterConfig:
        return AdapterConfig(
            rank=self.rank, alpha=self.alpha, bottleneck_dim=self.bottleneck_dim
        )


# -- synth -------------------------------------------------------------------


class SynthRequest(BaseModel):
    out_dir: str
    name: str = "fixture"
    seed: int = 0
    preset: str = "coupled"
    params: dict[str, float | int] = Field(default_factory=dict)
    config: dict | None = None  # full synthetic config JSON; overrides preset


class SynthResponse(BaseModel):
    embedding_path: str
    manifest_path: str
    config_path: str
    record_count: int
    counts: dict[str, dict[str, int]]


# -- validate ----------------------------------------------------------------


class ValidateRequest(BaseModel):
    path: str


class ValidateResponse(BaseModel):
    model_config = _NO_PROTECTED

    valid: bool
    errors: list[str]
    record_count: int | None = None
    num_layers: int | None = None
    dim: int | None = None
    model_tags: list[str] = Field(default_factory=list)


# -- probe -------------------------------------------------------------------


class ProbeRequest(BaseModel):
    embeddings: dict[str, str]  # model_tag -> embedding file path
    tasks: list[str] = Field(default_factory=lambda: ["SER", "MER"])
    split_seed: int = 0
    manifest: str | None = None  # manifest JSON path; default: derive from split_seed
    train: TrainSettings = Field(default_factory=TrainSettings)
    jobs: int = 1


class ProbeRowModel(BaseModel):
    model_config = _NO_PROTECTED

    model_tag: str
    task: str
    layer: int
    val_ua: float
    test_ua: float
    per_class_recall: dict[str, float | None]
    epoch_of_best: int


class SummaryRowModel(BaseModel):
    model_config = _NO_PROTECTED

    model_tag: str
    task: str
    row: str
    test_ua: float
    layers: str


class FailureModel(BaseModel):
    model_config = _NO_PROTECTED

    model_tag: str
    task: str | None = None
    error: str


class ProbeResponse(BaseModel):
    rows: list[ProbeRowModel]
    summary: list[SummaryRowModel]
    failures: list[FailureModel] = Field(default_factory=list)


# -- adapt -------------------------------------------------------------------


class AdaptRequest(BaseModel):
    embeddings: dict[str, str] = Field(default_factory=dict)  # multi-layer records
    inputs: dict[str, str] = Field(default_factory=dict)  # single-layer input corpora
    encoder: EncoderSettings | None = None
    adapter: AdapterSettings = Field(default_factory=AdapterSettings)
    approaches: list[str] = Field(default_factory=lambda: ["baseline", "ws", "peft"])
    directions: list[str] = Field(default_factory=lambda: ["SER->MER", "MER->SER"])
    split_seed: int = 0
    manifest: str | None = None
    seed: int = 0
    epochs: int = 300
    include_scratch: bool = False
    checkpoint_dir: str
    learning_rates: dict[str, float] = Field(default_factory=dict)


class AdaptRowModel(BaseModel):
    model_config = _NO_PROTECTED

    model_tag: str
    approach: str
    direction: str
    stage_one_ua: float | None = None
    stage_two_ua: float | None = None
    scratch_ua: float | None = None
    stage_one_val_ua: float | None = None
    stage_two_val_ua: float | None = None
    seed_stage_one: int = 0
    seed_stage_two: int = 0
    error: str | None = None


class AdaptResponse(BaseModel):
    rows: list[AdaptRowModel]


# -- fad ---------------------------------------------------------------------


class FadRequest(BaseModel):
    embeddings: dict[str, str]
    manifest: str | None = None
    per_frame: bool = False


class FadRowModel(BaseModel):
    model_config = _NO_PROTECTED

    model_tag: str
    layer: int
    emotion: str
    fad: float | None = None
    n_speech: int = 0
    n_music: int = 0
    error: str | None = None


class FadResponse(BaseModel):
    rows: list[FadRowModel]
    failures: list[FailureModel] = Field(default_factory=list)


class HealthResponse(BaseModel):
    status: str
    version: str
