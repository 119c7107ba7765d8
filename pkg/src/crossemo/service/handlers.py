"""Endpoint implementations; plain functions the CLI can also call in-process."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..adaptation import AdaptationData, GridRow, adaptation_grid
from ..errors import ConfigError, CrossemoError
from ..fad import fad_sweep
from ..probe import layerwise_probe_sweep
from ..reporting import probe_summary_rows
from ..store import (
    DatasetManifest,
    EMOTIONS,
    make_stratified_split,
    read_embedding_file,
    validate_embedding_file,
    write_embedding_file,
)
from ..synthetic import SyntheticConfig, generate_synthetic_manifest, preset_config
from .schemas import (
    AdaptRequest,
    AdaptResponse,
    AdaptRowModel,
    FadRequest,
    FadResponse,
    FadRowModel,
    FailureModel,
    ProbeRequest,
    ProbeResponse,
    ProbeRowModel,
    SummaryRowModel,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)


def handle_synth(req: SynthRequest) -> SynthResponse:
    """Generate a synthetic corpus and write embedding file + manifest + config."""
    if req.config is not None:
        config = SyntheticConfig.from_json(json.dumps(req.config))
    else:
        config = preset_config(req.preset, **req.params)
    records, manifest = generate_synthetic_manifest(config, req.seed)

    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    embedding_path = out_dir / f"{req.name}.xemb"
    offsets = write_embedding_file(records, embedding_path)
    for meta, offset in zip(manifest.records, offsets):
        meta.file_offset = offset
    manifest_path = out_dir / f"{req.name}.manifest.json"
    manifest_path.write_text(manifest.to_json())
    config_path = out_dir / f"{req.name}.synth.json"
    config_path.write_text(config.to_json())
    return SynthResponse(
        embedding_path=str(embedding_path),
        manifest_path=str(manifest_path),
        config_path=str(config_path),
        record_count=len(records),
        counts=manifest.counts,
    )


def handle_validate(req: ValidateRequest) -> ValidateResponse:
    info, errors = validate_embedding_file(req.path)
    return ValidateResponse(
        valid=not errors,
        errors=errors,
        record_count=info.get("record_count"),
        num_layers=info.get("num_layers"),
        dim=info.get("dim"),
        model_tags=info.get("model_tags", []),
    )


def _load_corpus(path: str, manifest: DatasetManifest | None, split_seed: int):
    records = read_embedding_file(path)
    if manifest is None:
        manifest = make_stratified_split(records, split_seed)
    return records, manifest


def _shared_manifest(manifest_path: str | None) -> DatasetManifest | None:
    # A broken shared manifest is a request-level error, not a per-model one.
    return DatasetManifest.load(manifest_path) if manifest_path else None


def handle_probe(req: ProbeRequest) -> ProbeResponse:
    if not req.embeddings:
        raise ConfigError("no embedding files given")
    config = req.train.to_config()
    shared = _shared_manifest(req.manifest)

    def run_pair(tag_task):
        tag, task = tag_task
        try:
            records, manifest = _load_corpus(
                req.embeddings[tag], shared, req.split_seed
            )
            return tag_task, layerwise_probe_sweep(records, manifest, task, config)
        except CrossemoError as exc:
            return tag_task, FailureModel(model_tag=tag, task=task, error=str(exc))

    pairs = [(tag, task) for tag in sorted(req.embeddings) for task in req.tasks]
    if req.jobs > 1:
        with ThreadPoolExecutor(max_workers=req.jobs) as pool:
            outcomes = dict(pool.map(run_pair, pairs))
    else:
        outcomes = dict(map(run_pair, pairs))
    failures = [v for v in outcomes.values() if isinstance(v, FailureModel)]
    results = {k: v for k, v in outcomes.items() if not isinstance(v, FailureModel)}

    rows = []
    for (tag, task) in sorted(results):
        for row in results[(tag, task)]:
            recalls = {
                emotion: (None if np.isnan(r) else float(r))
                for emotion, r in zip(EMOTIONS, row.per_class_recall)
            }
            rows.append(
                ProbeRowModel(
                    model_tag=tag,
                    task=task,
                    layer=row.layer,
                    val_ua=row.val_ua,
                    test_ua=row.test_ua,
                    per_class_recall=recalls,
                    epoch_of_best=row.epoch_of_best,
                )
            )
    summary = [
        SummaryRowModel(model_tag=tag, task=task, row=label, test_ua=ua, layers=layers)
        for tag, task, label, ua, layers in probe_summary_rows(results)
    ]
    return ProbeResponse(rows=rows, summary=summary, failures=failures)


def handle_adapt(req: AdaptRequest) -> AdaptResponse:
    overlap = set(req.embeddings) & set(req.inputs)
    if overlap:
        raise ConfigError(
            f"model tags {sorted(overlap)} appear in both embeddings and inputs"
        )
    if not req.embeddings and not req.inputs:
        raise ConfigError("no embedding or input files given")
    if req.inputs and req.encoder is None:
        raise ConfigError("input corpora require encoder settings")

    shared = _shared_manifest(req.manifest)
    datasets: dict[str, AdaptationData] = {}
    load_errors: dict[str, str] = {}
    for tag in sorted(req.embeddings):
        try:
            records, manifest = _load_corpus(req.embeddings[tag], shared, req.split_seed)
            datasets[tag] = AdaptationData.from_records(records, manifest)
        except CrossemoError as exc:
            load_errors[tag] = str(exc)
    for tag in sorted(req.inputs):
        try:
            records, manifest = _load_corpus(req.inputs[tag], shared, req.split_seed)
            datasets[tag] = AdaptationData.from_inputs(
                records, manifest, req.encoder.to_config()
            )
        except CrossemoError as exc:
            load_errors[tag] = str(exc)

    grid_rows = adaptation_grid(
        datasets,
        req.checkpoint_dir,
        approaches=tuple(req.approaches),
        directions=tuple(req.directions),
        epochs=req.epochs,
        base_seed=req.seed,
        include_scratch=req.include_scratch,
        adapter_config=req.adapter.to_config(),
        learning_rates=req.learning_rates or None,
    )
    for tag in sorted(load_errors):
        for approach in req.approaches:
            for direction in req.directions:
                grid_rows.append(
                    GridRow(
                        model_tag=tag,
                        approach=approach,
                        direction=direction,
                        error=load_errors[tag],
                    )
                )
    grid_rows.sort(
        key=lambda r: (
            r.model_tag,
            req.approaches.index(r.approach),
            req.directions.index(r.direction),
        )
    )
    rows = [
        AdaptRowModel(
            model_tag=row.model_tag,
            approach=row.approach,
            direction=row.direction,
            stage_one_ua=row.stage_one_ua,
            stage_two_ua=row.stage_two_ua,
            scratch_ua=row.scratch_ua,
            stage_one_val_ua=row.stage_one_val_ua,
            stage_two_val_ua=row.stage_two_val_ua,
            seed_stage_one=row.seed_stage_one,
            seed_stage_two=row.seed_stage_two,
            error=row.error,
        )
        for row in grid_rows
    ]
    return AdaptResponse(rows=rows)


def handle_fad(req: FadRequest) -> FadResponse:
    if not req.embeddings:
        raise ConfigError("no embedding files given")
    shared = _shared_manifest(req.manifest)
    rows = []
    failures = []
    for tag in sorted(req.embeddings):
        try:
            records = read_embedding_file(req.embeddings[tag])
            results = fad_sweep(records, tag, manifest=shared, per_frame=req.per_frame)
        except CrossemoError as exc:
            failures.append(FailureModel(model_tag=tag, error=str(exc)))
            continue
        for result in results:
            rows.append(
                FadRowModel(
                    model_tag=result.model_tag,
                    layer=result.layer,
                    emotion=result.emotion,
                    fad=result.score,
                    n_speech=result.n_speech,
                    n_music=result.n_music,
                    error=result.error,
                )
            )
    return FadResponse(rows=rows, failures=failures)
