"""Two-stage adaptation: trainable sets, checkpoints, and the grid."""

import numpy as np
import pytest

from crossemo.adaptation import (
    AdaptationData,
    GridRow,
    StagePlan,
    adaptation_grid,
    build_model,
    default_train_config,
    load_checkpoint,
    plan_config_hash,
    run_stage_one,
    run_stage_two,
    train_single_stage,
)
from crossemo.encoder import AdapterConfig, MiniEncoderConfig
from crossemo.errors import CheckpointError, ConfigError
from crossemo.probe import TrainConfig
from crossemo.synthetic import coupled_config, generate_synthetic_manifest

ENCODER = MiniEncoderConfig(
    num_layers=2, model_dim=16, num_heads=2, ffn_dim=24, seed=4
)
ADAPTER = AdapterConfig(rank=2, alpha=4.0, bottleneck_dim=4)


def input_corpus(count_per_class=15, seed=21, frames=4):
    """Single-layer records usable as encoder inputs (dim == model_dim)."""
    config = coupled_config(
        dim=ENCODER.model_dim, frames=frames, num_layers=1, count_per_class=count_per_class
    )
    return generate_synthetic_manifest(config, seed)


@pytest.fixture(scope="module")
def peft_data():
    records, manifest = input_corpus()
    return AdaptationData.from_inputs(records, manifest, ENCODER)


@pytest.fixture(scope="module")
def cached_data():
    config = coupled_config(dim=8, frames=3, num_layers=3, count_per_class=15)
    records, manifest = generate_synthetic_manifest(config, 22)
    return AdaptationData.from_records(records, manifest)


def make_plan(approach, tmp_path, epochs=15, source="SER", target="MER"):
    return StagePlan(
        approach=approach,
        source_task=source,
        target_task=target,
        stage_one=default_train_config(approach, epochs=epochs, seed=1),
        stage_two=default_train_config(approach, epochs=epochs, seed=2),
        checkpoint_path=tmp_path / f"{approach}.npz",
        adapter_config=ADAPTER,
    )


class TestTrainableSets:
    def test_baseline_trains_probe_only(self, cached_data, tmp_path):
        plan = make_plan("baseline", tmp_path, epochs=2)
        result = run_stage_one(plan, cached_data)
        assert result.trainable_names == ["probe.W", "probe.b"]

    def test_ws_adds_layer_weights(self, cached_data, tmp_path):
        plan = make_plan("ws", tmp_path, epochs=2)
        result = run_stage_one(plan, cached_data)
        assert result.trainable_names == ["agg.ws_logits", "probe.W", "probe.b"]

    def test_peft_adds_gates_and_adapters(self, peft_data, tmp_path):
        plan = make_plan("peft", tmp_path, epochs=2)
        result = run_stage_one(plan, peft_data)
        names = set(result.trainable_names)
        assert {"probe.W", "probe.b", "agg.ws_logits", "agg.gate_logits"} <= names
        adapter_names = {n for n in names if n.startswith("adapter.")}
        assert len(adapter_names) == ENCODER.num_layers * 6  # q.A/B, v.A/B, down, up

    def test_sets_nest(self, cached_data, peft_data, tmp_path):
        base = set(run_stage_one(make_plan("baseline", tmp_path, 2), cached_data).trainable_names)
        ws = set(run_stage_one(make_plan("ws", tmp_path, 2), cached_data).trainable_names)
        peft = set(run_stage_one(make_plan("peft", tmp_path, 2), peft_data).trainable_names)
        assert base < ws < peft

    def test_peft_requires_inputs(self, cached_data, tmp_path):
        plan = make_plan("peft", tmp_path, epochs=2)
        with pytest.raises(ConfigError, match="input corpus"):
            build_model(plan, cached_data)

    def test_default_learning_rates(self):
        assert default_train_config("baseline").learning_rate == 1e-3
        assert default_train_config("ws").learning_rate == 1e-3
        assert default_train_config("peft").learning_rate == 1e-4


class TestStages:
    def test_stage_one_converges_on_coupled_fixture(self, cached_data, tmp_path):
        plan = make_plan("baseline", tmp_path, epochs=25)
        result = run_stage_one(plan, cached_data)
        assert result.report.ua >= 0.95

    def test_stage_two_does_not_collapse_on_same_distribution(self, cached_data, tmp_path):
        # coupling=1.0: target distribution equals source distribution
        plan = make_plan("baseline", tmp_path, epochs=25)
        one = run_stage_one(plan, cached_data)
        two = run_stage_two(plan, cached_data)
        assert two.report.ua >= one.report.ua - 0.05

    def test_checkpoint_roundtrip_val_ua_bit_exact(self, cached_data, tmp_path):
        plan = make_plan("ws", tmp_path, epochs=10)
        result = run_stage_one(plan, cached_data)
        tensors, meta = load_checkpoint(plan.checkpoint_path)
        model = build_model(plan, cached_data)
        for name, value in tensors.items():
            model.parameters()[name][...] = value
        from crossemo.probe import metrics_from_predictions
        from crossemo.adaptation import _bind_domain

        _bind_domain(model, cached_data, "speech")
        val_idx = cached_data.splits["speech"]["val"]
        report = metrics_from_predictions(model.targets(val_idx), model.predict(val_idx))
        assert report.ua == meta["val_ua"]
        assert meta["val_ua"] == result.val_ua

    def test_checkpoint_geometry_mismatch_rejected(self, cached_data, peft_data, tmp_path):
        plan = make_plan("baseline", tmp_path, epochs=2)
        run_stage_one(plan, cached_data)
        with pytest.raises(CheckpointError, match="hash"):
            run_stage_two(plan, peft_data)  # different L and D

    def test_missing_checkpoint_rejected(self, cached_data, tmp_path):
        plan = make_plan("baseline", tmp_path, epochs=2)
        with pytest.raises(CheckpointError, match="does not exist"):
            run_stage_two(plan, cached_data)

    def test_config_hash_captures_dims(self, cached_data, peft_data, tmp_path):
        plan = make_plan("baseline", tmp_path)
        assert plan_config_hash(plan, cached_data) != plan_config_hash(plan, peft_data)

    def test_plan_validation(self, tmp_path):
        with pytest.raises(ConfigError):
            StagePlan(
                approach="baseline",
                source_task="SER",
                target_task="SER",
                stage_one=TrainConfig(epochs=1),
                stage_two=TrainConfig(epochs=1),
                checkpoint_path=tmp_path / "x.npz",
            )

    def test_peft_backbone_frozen_through_both_stages(self, peft_data, tmp_path):
        before = peft_data.encoder_weights.checksum()
        plan = make_plan("peft", tmp_path, epochs=3)
        run_stage_one(plan, peft_data)
        run_stage_two(plan, peft_data)
        assert peft_data.encoder_weights.checksum() == before


class TestGrid:
    def test_grid_shape_and_rerun_equality(self, peft_data, tmp_path):
        kwargs = dict(
            approaches=("baseline", "ws", "peft"),
            directions=("SER->MER", "MER->SER"),
            epochs=4,
            base_seed=3,
            adapter_config=ADAPTER,
        )
        rows_a = adaptation_grid({"mini": peft_data}, tmp_path / "a", **kwargs)
        rows_b = adaptation_grid({"mini": peft_data}, tmp_path / "b", **kwargs)
        assert len(rows_a) == 6
        assert all(r.error is None for r in rows_a)
        assert [r.__dict__ for r in rows_a] == [r.__dict__ for r in rows_b]
        # 12 UA cells, all populated
        cells = [r.stage_one_ua for r in rows_a] + [r.stage_two_ua for r in rows_a]
        assert all(c is not None for c in cells)

    def test_partial_failure_recorded(self, cached_data, tmp_path):
        rows = adaptation_grid(
            {"cached": cached_data},
            tmp_path,
            approaches=("baseline", "peft"),
            directions=("SER->MER",),
            epochs=2,
            adapter_config=ADAPTER,
        )
        by_approach = {r.approach: r for r in rows}
        assert by_approach["baseline"].error is None
        assert by_approach["baseline"].stage_two_ua is not None
        assert "input corpus" in by_approach["peft"].error
        assert by_approach["peft"].stage_one_ua is None

    def test_seeds_recorded_per_cell(self, cached_data, tmp_path):
        rows = adaptation_grid(
            {"cached": cached_data},
            tmp_path,
            approaches=("baseline",),
            directions=("SER->MER", "MER->SER"),
            epochs=2,
        )
        seeds = {(r.seed_stage_one, r.seed_stage_two) for r in rows}
        assert len(seeds) == 2  # distinct per direction

    def test_scratch_column(self, cached_data, tmp_path):
        rows = adaptation_grid(
            {"cached": cached_data},
            tmp_path,
            approaches=("baseline",),
            directions=("SER->MER",),
            epochs=10,
            include_scratch=True,
        )
        assert rows[0].scratch_ua is not None


class TestTransferProperty:
    def test_two_stage_tracks_scratch_on_coupled_domains(self):
        # Identical domains: pretraining on the source cannot hurt the target
        # beyond seed noise. Smoke version of the acceptance criterion.
        records, manifest = input_corpus(count_per_class=12, seed=31)
        data = AdaptationData.from_inputs(records, manifest, ENCODER)
        deltas = []
        for seed in range(3):
            plan = StagePlan(
                approach="baseline",
                source_task="SER",
                target_task="MER",
                stage_one=TrainConfig(learning_rate=1e-3, epochs=12, seed=seed),
                stage_two=TrainConfig(learning_rate=1e-3, epochs=12, seed=100 + seed),
                checkpoint_path=f"/tmp/crossemo-test-{seed}.npz",
            )
            run_stage_one(plan, data)
            two = run_stage_two(plan, data)
            scratch = train_single_stage(
                "baseline",
                "MER",
                data,
                TrainConfig(learning_rate=1e-3, epochs=24, seed=200 + seed),
            )
            deltas.append(two.report.ua - scratch.report.ua)
        assert float(np.mean(deltas)) >= -0.02


def test_grid_row_fields_stay_in_sync_with_schema():
    # reporting + service both reconstruct GridRow from dict fields
    row = GridRow(model_tag="m", approach="baseline", direction="SER->MER")
    expected = {
        "model_tag", "approach", "direction", "stage_one_ua", "stage_two_ua",
        "stage_one_val_ua", "stage_two_val_ua", "scratch_ua",
        "seed_stage_one", "seed_stage_two", "error",
    }
    assert set(row.__dict__) == expected
