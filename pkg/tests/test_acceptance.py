"""Acceptance suite: one test per criterion, all on synthetic fixtures.

Run with ``pytest tests/test_acceptance.py -s`` to see one PASS/FAIL line per
criterion. Everything here is deterministic and finishes in a few minutes on
a laptop.
"""

import json
import subprocess
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from crossemo.adaptation import AdaptationData, StagePlan, run_stage_one, run_stage_two, train_single_stage
from crossemo.encoder import (
    AdapterConfig,
    AdapterParams,
    EncoderWeights,
    MiniEncoderConfig,
    peft_assemble,
)
from crossemo.fad import GaussianStats, frechet_distance, matrix_sqrt_psd
from crossemo.pooling import AggregatorParams, aggregate_backward, aggregate_layers
from crossemo.probe import (
    AdamW,
    ProbeParams,
    TrainConfig,
    forward_loss,
    layerwise_probe_sweep,
    loss_and_grads,
    train_probe,
)
from crossemo.reporting import probe_summary_rows
from crossemo.store import EMOTIONS, EmbeddingRecord, make_stratified_split, split_sizes
from crossemo.synthetic import coupled_config, generate_synthetic_manifest, layer_signal_config

from test_encoder import assemble_random_pipeline, check_adapter_gradients, tiny_config

CLI = [sys.executable, "-m", "crossemo"]


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except Exception:
        print(f"\n[acceptance] criterion {number}: FAIL - {description}")
        raise
    print(f"\n[acceptance] criterion {number}: PASS - {description}")


def blobs(per_class, dim, separation, seed):
    rng = np.random.default_rng(seed)
    features, labels = [], []
    for c in range(6):
        mean = np.zeros(dim)
        mean[c % dim] = separation
        features.append(rng.normal(size=(per_class, dim)) + mean)
        labels.append(np.full(per_class, c))
    return np.concatenate(features), np.concatenate(labels)


# ---------------------------------------------------------------------------
# 1. FAD correctness
# ---------------------------------------------------------------------------


def test_criterion_1_fad_correctness():
    with criterion(1, "FAD: self-distance, 1-D oracle, diagonal closed form"):
        rng = np.random.default_rng(0)
        for dim in (1, 2, 5, 12):
            factor = rng.normal(size=(dim, dim))
            stats = GaussianStats(
                mu=rng.normal(size=dim), sigma=factor @ factor.T, count=dim + 2
            )
            assert frechet_distance(stats, stats) <= 1e-8

        a = GaussianStats(mu=np.array([0.0]), sigma=np.array([[1.0]]), count=4)
        b = GaussianStats(mu=np.array([3.0]), sigma=np.array([[1.0]]), count=4)
        assert abs(frechet_distance(a, b) - 9.0) <= 1e-9

        for seed in range(1000):
            case = np.random.default_rng(seed)
            dim = int(case.integers(1, 9))
            var_a = case.uniform(0.05, 5.0, dim)
            var_b = case.uniform(0.05, 5.0, dim)
            mu_a = case.normal(size=dim)
            mu_b = case.normal(size=dim)
            got = frechet_distance(
                GaussianStats(mu_a, np.diag(var_a), 8),
                GaussianStats(mu_b, np.diag(var_b), 8),
            )
            want = float(
                np.sum((mu_a - mu_b) ** 2)
                + np.sum((np.sqrt(var_a) - np.sqrt(var_b)) ** 2)
            )
            assert abs(got - want) <= 1e-9, f"seed {seed}: {got} vs {want}"


# ---------------------------------------------------------------------------
# 2. Matrix square root
# ---------------------------------------------------------------------------


def test_criterion_2_matrix_sqrt():
    with criterion(2, "matrix sqrt: ||S.S - M||_F / ||M||_F < 1e-8 on 1000 PSD matrices"):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            dim = int(rng.integers(1, 65))
            rank = int(rng.integers(1, dim + 1)) if seed % 3 == 0 else dim
            factor = rng.normal(size=(dim, rank))
            matrix = factor @ factor.T
            root = matrix_sqrt_psd(matrix)
            err = np.linalg.norm(root @ root - matrix) / max(
                1e-300, np.linalg.norm(matrix)
            )
            assert err < 1e-8, f"seed {seed}, dim {dim}: {err}"


# ---------------------------------------------------------------------------
# 3. Gradient checks
# ---------------------------------------------------------------------------


def _rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def test_criterion_3_gradient_checks():
    with criterion(3, "gradients: probe/aggregator at 1e-4, adapters at 1e-3, 100 instances each"):
        # probe loss vs central differences, step 1e-5
        for seed in range(100):
            rng = np.random.default_rng(seed)
            dim = int(rng.integers(2, 6))
            n = int(rng.integers(1, 9))
            params = ProbeParams(W=rng.normal(size=(6, dim)), b=rng.normal(size=6))
            features = rng.normal(size=(n, dim))
            labels = rng.integers(0, 6, n)
            _, _, grads = loss_and_grads(params, features, labels)
            for arr, key in ((params.W, "probe.W"), (params.b, "probe.b")):
                flat = arr.reshape(-1)
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + 1e-5
                    up, _ = forward_loss(params, features, labels)
                    flat[j] = orig - 1e-5
                    down, _ = forward_loss(params, features, labels)
                    flat[j] = orig
                    assert _rel_err(grads[key].reshape(-1)[j], (up - down) / 2e-5) < 1e-4

        # aggregator (weighted sum + gate), step 1e-5
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            num_layers = int(rng.integers(2, 7))
            dim = int(rng.integers(2, 6))
            pooled = rng.normal(size=(num_layers, dim))
            upstream = rng.normal(size=dim)
            params = AggregatorParams(
                mode="weighting_gate",
                ws_logits=rng.normal(size=num_layers),
                gate_logits=rng.normal(size=num_layers),
            )
            grads = aggregate_backward(pooled, params, upstream)
            for key, logits in (
                ("agg.ws_logits", params.ws_logits),
                ("agg.gate_logits", params.gate_logits),
            ):
                for j in range(num_layers):
                    orig = logits[j]
                    logits[j] = orig + 1e-5
                    up = upstream @ aggregate_layers(pooled, params)
                    logits[j] = orig - 1e-5
                    down = upstream @ aggregate_layers(pooled, params)
                    logits[j] = orig
                    assert _rel_err(grads[key][j], (up - down) / 2e-5) < 1e-4

        # every adapter tensor through the assembled pipeline, step 1e-4;
        # instances whose relu pre-activations sit within the step of a kink
        # are discarded (the finite-difference oracle is invalid there)
        config = tiny_config(num_layers=2, model_dim=8, num_heads=2, ffn_dim=10)
        checked = 0
        seed = 0
        while checked < 100:
            seed += 1
            pipeline = assemble_random_pipeline(config, seed=seed)
            rng = np.random.default_rng(20_000 + seed)
            x = rng.normal(size=(1, 2, 8))
            y = rng.integers(0, 6, 1)
            if check_adapter_gradients(pipeline, x, y, h=1e-4, stride=8, tol=1e-3):
                checked += 1
        assert checked == 100


# ---------------------------------------------------------------------------
# 4. Probe convergence
# ---------------------------------------------------------------------------


def test_criterion_4_probe_convergence():
    with criterion(4, "probe: separable fixture >= 0.99 val UA; shuffled labels near chance"):
        config = TrainConfig(learning_rate=1e-3, epochs=500, batch_size=32, seed=0)
        train_x, train_y = blobs(120, 16, 10.0, seed=1)
        val_x, val_y = blobs(40, 16, 10.0, seed=2)
        result = train_probe(train_x, train_y, val_x, val_y, config)
        assert result.report.ua >= 0.99

        chance = 1.0 / 6.0
        uas = []
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            tx, ty = blobs(120, 16, 10.0, seed=200 + seed)
            vx, vy = blobs(40, 16, 10.0, seed=300 + seed)
            shuffled = train_probe(
                tx,
                rng.permutation(ty),
                vx,
                rng.permutation(vy),
                TrainConfig(learning_rate=1e-3, epochs=500, batch_size=32, seed=seed),
            )
            uas.append(shuffled.report.ua)
        mean_ua = float(np.mean(uas))
        assert chance - 0.1 <= mean_ua <= chance + 0.1, f"mean shuffled UA {mean_ua}"


# ---------------------------------------------------------------------------
# 5. Identity at init + frozen backbone
# ---------------------------------------------------------------------------


def test_criterion_5_identity_at_init_and_frozen_backbone():
    with criterion(5, "PEFT: zero-init adapters reproduce baseline logits; checksum stable"):
        config = MiniEncoderConfig(
            num_layers=2, model_dim=16, num_heads=2, ffn_dim=24, seed=4
        )
        weights = EncoderWeights(config)
        rng = np.random.default_rng(5)
        probe = ProbeParams(W=rng.normal(size=(6, 16)), b=rng.normal(size=6))
        aggregator = AggregatorParams.init("weighting_gate", 2)
        adapters = AdapterParams.init(
            config, AdapterConfig(rank=4, alpha=8.0, bottleneck_dim=6), seed=6
        )
        peft = peft_assemble(config, weights, adapters, aggregator, probe)
        baseline = peft_assemble(config, weights, None, aggregator, probe)
        x = rng.normal(size=(5, 4, 16))
        logits_peft, _ = peft.forward_logits(x)
        logits_base, _ = baseline.forward_logits(x)
        assert np.array_equal(logits_peft, logits_base)

        before = peft.backbone_checksum()
        labels = rng.integers(0, 6, 5)
        optimizer = AdamW(peft.parameters(), TrainConfig(learning_rate=1e-4, epochs=1))
        for _ in range(100):
            _, _, cache = peft.forward_loss(x, labels)
            optimizer.step(peft.backward(cache))
        assert peft.backbone_checksum() == before


# ---------------------------------------------------------------------------
# 6. Transfer property
# ---------------------------------------------------------------------------


def test_criterion_6_transfer_property(tmp_path):
    with criterion(6, "transfer: two-stage >= scratch - 0.02 over 10 seeds; layer 3 named best"):
        config = coupled_config(dim=8, frames=3, num_layers=2, count_per_class=40)
        records, manifest = generate_synthetic_manifest(config, 41)
        data = AdaptationData.from_records(records, manifest)
        two_stage, scratch = [], []
        for seed in range(10):
            plan = StagePlan(
                approach="baseline",
                source_task="SER",
                target_task="MER",
                stage_one=TrainConfig(learning_rate=1e-3, epochs=30, seed=seed),
                stage_two=TrainConfig(learning_rate=1e-3, epochs=30, seed=500 + seed),
                checkpoint_path=tmp_path / f"transfer-{seed}.npz",
            )
            run_stage_one(plan, data)
            two_stage.append(run_stage_two(plan, data).report.ua)
            scratch.append(
                train_single_stage(
                    "baseline",
                    "MER",
                    data,
                    TrainConfig(learning_rate=1e-3, epochs=60, seed=900 + seed),
                ).report.ua
            )
        assert float(np.mean(two_stage)) >= float(np.mean(scratch)) - 0.02

        signal = layer_signal_config(signal_layer=3, num_layers=6, dim=8, count_per_class=30)
        records, manifest = generate_synthetic_manifest(signal, 42)
        rows = layerwise_probe_sweep(
            records, manifest, "SER", TrainConfig(learning_rate=1e-3, epochs=150, seed=0)
        )
        summary = probe_summary_rows({("fixture", "SER"): rows})
        best = next(row for row in summary if row[2] == "Best")
        assert best[4] == "3", f"Best row names layers {best[4]!r}"


# ---------------------------------------------------------------------------
# 7. Determinism
# ---------------------------------------------------------------------------


def _run_cli(*args):
    result = subprocess.run(
        [*CLI, *map(str, args)], capture_output=True, text=True
    )
    assert result.returncode == 0, result.stderr
    return result


def _artifact_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix != ".npz"  # checkpoints are scratch, not artifacts
    }


def test_criterion_7_determinism(tmp_path):
    with criterion(7, "byte-identical CLI artifacts across reruns; split rounding rule"):
        assert split_sizes(92) == (55, 18, 19)
        assert split_sizes(184) == (110, 36, 38)
        records = []
        for emotion in EMOTIONS:
            n = 92 if emotion == "neutral" else 184
            for i in range(n):
                records.append(
                    EmbeddingRecord(
                        utterance_id=f"speech-{emotion}-{i:04d}",
                        domain="speech",
                        emotion=emotion,
                        layers=np.zeros((1, 1, 1), dtype=np.float32) + 1,
                    )
                )
        manifest = make_stratified_split(records, seed=7)
        for emotion, expected in (("neutral", (55, 18, 19)), ("angry", (110, 36, 38))):
            got = tuple(
                sum(
                    1
                    for m in manifest.records
                    if m.emotion == emotion and manifest.split[m.utterance_id] == s
                )
                for s in ("train", "val", "test")
            )
            assert got == expected

        runs = []
        for run in ("one", "two"):
            root = tmp_path / run
            _run_cli(
                "synth", "--out", root, "--name", "corpus", "--seed", 5,
                "--preset", "coupled", "--param", "dim=8", "--param", "frames=3",
                "--param", "num_layers=2", "--param", "count_per_class=12",
            )
            _run_cli(
                "synth", "--out", root, "--name", "inputs", "--seed", 6,
                "--preset", "coupled", "--param", "dim=16", "--param", "frames=3",
                "--param", "num_layers=1", "--param", "count_per_class=10",
            )
            _run_cli(
                "probe", "--embeddings", f"demo={root / 'corpus.xemb'}",
                "--epochs", 6, "--seed", 0, "--split-seed", 1, "--out", root / "probe",
            )
            _run_cli(
                "fad", "--embeddings", f"demo={root / 'corpus.xemb'}",
                "--out", root / "fad",
            )
            adapt_config = {
                "inputs": {"mini": str(root / "inputs.xemb")},
                "split_seed": 1,
                "adapt": {
                    "encoder": {
                        "num_layers": 2, "model_dim": 16, "num_heads": 2,
                        "ffn_dim": 24, "seed": 4,
                    },
                    "adapter": {"rank": 2, "alpha": 4.0, "bottleneck_dim": 4},
                    "seed": 0,
                },
            }
            (root / "adapt.json").write_text(json.dumps(adapt_config))
            _run_cli(
                "adapt", "--config", root / "adapt.json", "--epochs", 3,
                "--out", root / "adapt",
            )
            runs.append(
                {
                    "corpus.xemb": (root / "corpus.xemb").read_bytes(),
                    "corpus.manifest.json": (root / "corpus.manifest.json").read_bytes(),
                    **{
                        f"probe/{k}": v
                        for k, v in _artifact_bytes(root / "probe").items()
                    },
                    **{f"fad/{k}": v for k, v in _artifact_bytes(root / "fad").items()},
                    **{
                        f"adapt/{k}": v
                        for k, v in _artifact_bytes(root / "adapt").items()
                    },
                }
            )
        assert set(runs[0]) == set(runs[1])
        for name in runs[0]:
            assert runs[0][name] == runs[1][name], f"{name} differs between reruns"
