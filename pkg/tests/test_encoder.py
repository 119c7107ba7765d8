"""Mini encoder and adapters: forward values, gradient checks, frozen contract."""

import numpy as np
import pytest

from crossemo.encoder import (
    LN_EPS,
    AdapterConfig,
    AdapterParams,
    EncoderWeights,
    MiniEncoderConfig,
    encode_sequence,
    encoder_backward,
    encoder_forward,
    peft_assemble,
)
from crossemo.errors import ConfigError, DimensionMismatchError
from crossemo.pooling import AggregatorParams
from crossemo.probe import AdamW, ProbeParams, TrainConfig


def tiny_config(num_layers=2, model_dim=8, num_heads=2, ffn_dim=12, seed=3, **kw):
    return MiniEncoderConfig(
        num_layers=num_layers,
        model_dim=model_dim,
        num_heads=num_heads,
        ffn_dim=ffn_dim,
        seed=seed,
        **kw,
    )


def tiny_adapter_config():
    return AdapterConfig(rank=2, alpha=4.0, bottleneck_dim=3)


def assemble_random_pipeline(config, seed=0, mode="weighting_gate"):
    rng = np.random.default_rng(seed)
    weights = EncoderWeights(config)
    adapters = AdapterParams.random(config, tiny_adapter_config(), seed=seed)
    aggregator = AggregatorParams(
        mode=mode,
        ws_logits=rng.normal(size=config.num_layers),
        gate_logits=rng.normal(size=config.num_layers) if mode == "weighting_gate" else None,
    )
    probe = ProbeParams(
        W=rng.normal(size=(6, config.model_dim)) * 0.3, b=rng.normal(size=6) * 0.1
    )
    return peft_assemble(config, weights, adapters, aggregator, probe)


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            MiniEncoderConfig(num_layers=1, model_dim=10, num_heads=4, ffn_dim=8, seed=0)

    def test_positive_dims(self):
        with pytest.raises(ConfigError):
            MiniEncoderConfig(num_layers=0, model_dim=8, num_heads=2, ffn_dim=8, seed=0)


class TestForward:
    def test_identity_at_init_is_bitwise(self):
        config = tiny_config()
        weights = EncoderWeights(config)
        adapters = AdapterParams.init(config, tiny_adapter_config(), seed=1)
        x = np.random.default_rng(0).normal(size=(3, 4, 8))
        plain = encoder_forward(config, weights, x)
        adapted = encoder_forward(config, weights, x, adapters)
        assert np.array_equal(plain, adapted)

    def test_single_layer_matches_scalar_recomputation(self):
        """Independent step-by-step recomputation with explicit loops."""
        config = tiny_config(num_layers=1, model_dim=4, num_heads=1, ffn_dim=5, seed=9)
        weights = EncoderWeights(config)
        w = weights.layers[0]
        x = np.random.default_rng(1).normal(size=(2, 4))

        def norm(row, g, b):
            mean = sum(row) / len(row)
            var = sum((v - mean) ** 2 for v in row) / len(row)
            return [
                (v - mean) / np.sqrt(var + LN_EPS) * gi + bi
                for v, gi, bi in zip(row, g, b)
            ]

        def matvec(mat, vec):
            return [sum(mat[i][j] * vec[j] for j in range(len(vec))) for i in range(len(mat))]

        u = [norm(list(x[t]), w["ln1_g"], w["ln1_b"]) for t in range(2)]
        q = [[a + b for a, b in zip(matvec(w["wq"], u[t]), w["bq"])] for t in range(2)]
        k = [[a + b for a, b in zip(matvec(w["wk"], u[t]), w["bk"])] for t in range(2)]
        v = [[a + b for a, b in zip(matvec(w["wv"], u[t]), w["bv"])] for t in range(2)]
        scale = 1.0 / np.sqrt(4.0)
        ctx = []
        for t in range(2):
            scores = [
                sum(q[t][d] * k[s][d] for d in range(4)) * scale for s in range(2)
            ]
            m = max(scores)
            expo = [np.exp(s - m) for s in scores]
            attn = [e / sum(expo) for e in expo]
            ctx.append(
                [sum(attn[s] * v[s][d] for s in range(2)) for d in range(4)]
            )
        h = [
            [x[t][d] + matvec(w["wo"], ctx[t])[d] + w["bo"][d] for d in range(4)]
            for t in range(2)
        ]
        z = [norm(h[t], w["ln2_g"], w["ln2_b"]) for t in range(2)]
        out = []
        for t in range(2):
            f1 = [a + b for a, b in zip(matvec(w["w1"], z[t]), w["b1"])]
            a1 = [max(vv, 0.0) for vv in f1]
            f2 = [a + b for a, b in zip(matvec(w["w2"], a1), w["b2"])]
            out.append([h[t][d] + f2[d] for d in range(4)])

        got = encode_sequence(config, weights, x)
        np.testing.assert_allclose(got[0], np.array(out), atol=1e-10)

    def test_equal_frames_get_equal_outputs(self):
        config = tiny_config(use_positions=False)
        weights = EncoderWeights(config)
        frame = np.random.default_rng(2).normal(size=8)
        states = encode_sequence(config, weights, np.stack([frame, frame]))
        for layer_state in states:
            np.testing.assert_array_equal(layer_state[0], layer_state[1])

    def test_permutation_equivariance_without_positions(self):
        config = tiny_config(use_positions=False)
        weights = EncoderWeights(config)
        x = np.random.default_rng(3).normal(size=(5, 8))
        perm = np.array([4, 2, 0, 3, 1])
        states = encode_sequence(config, weights, x)
        states_perm = encode_sequence(config, weights, x[perm])
        np.testing.assert_allclose(states[:, perm, :], states_perm, atol=1e-12)

    def test_positions_break_permutation_symmetry(self):
        config = tiny_config(use_positions=True)
        weights = EncoderWeights(config)
        frame = np.random.default_rng(4).normal(size=8)
        states = encode_sequence(config, weights, np.stack([frame, frame]))
        assert not np.allclose(states[-1][0], states[-1][1])

    def test_input_dim_checked(self):
        config = tiny_config()
        weights = EncoderWeights(config)
        with pytest.raises(DimensionMismatchError):
            encoder_forward(config, weights, np.zeros((1, 3, 5)))

    def test_backbone_is_write_protected(self):
        weights = EncoderWeights(tiny_config())
        with pytest.raises(ValueError):
            weights.layers[0]["wq"][0, 0] = 1.0


def relu_kink_margin(cache) -> float:
    """Smallest |pre-activation| of any relu in the cached forward.

    Central differences are only a valid oracle while no perturbation crosses
    a relu kink, so instances with tiny margins must be discarded.
    """
    margin = np.inf
    for layer_cache in cache["enc_cache"]["layers"]:
        margin = min(margin, float(np.abs(layer_cache["f1"]).min()))
        if layer_cache["bdown"] is not None:
            margin = min(margin, float(np.abs(layer_cache["bdown"]).min()))
    return margin


def check_adapter_gradients(pipeline, x, y, h=1e-4, stride=4, tol=1e-3):
    """Returns False if the instance sits too close to a relu kink for FD."""
    _, _, cache = pipeline.forward_loss(x, y)
    if relu_kink_margin(cache) < 20 * h:
        return False
    grads = pipeline.backward(cache)
    for name, arr in pipeline.parameters().items():
        flat = arr.reshape(-1)
        for j in range(0, flat.size, max(1, flat.size // stride)):
            orig = flat[j]
            flat[j] = orig + h
            up, _, _ = pipeline.forward_loss(x, y)
            flat[j] = orig - h
            down, _, _ = pipeline.forward_loss(x, y)
            flat[j] = orig
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[j]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            assert rel < tol, f"{name}[{j}]: analytic {an}, fd {fd}, rel {rel}"
    return True


class TestBackward:
    def test_adapter_gradients_match_finite_differences(self):
        config = tiny_config(num_layers=2, model_dim=8, num_heads=2, ffn_dim=10)
        checked = 0
        seed = 0
        while checked < 5:
            seed += 1
            pipeline = assemble_random_pipeline(config, seed=seed)
            rng = np.random.default_rng(1000 + seed)
            x = rng.normal(size=(2, 3, 8))
            y = rng.integers(0, 6, 2)
            if check_adapter_gradients(pipeline, x, y):
                checked += 1
        assert checked == 5

    def test_gated_off_final_layer_has_negligible_gradients(self):
        # The last layer feeds only its own aggregation branch; with both its
        # mixture weight and gate driven to ~0, its adapter gradients vanish.
        config = tiny_config(num_layers=2)
        pipeline = assemble_random_pipeline(config, seed=7)
        pipeline.aggregator.ws_logits[:] = [0.0, -40.0]
        pipeline.aggregator.gate_logits[:] = [0.0, -40.0]
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 3, 8))
        y = rng.integers(0, 6, 3)
        _, _, cache = pipeline.forward_loss(x, y)
        grads = pipeline.backward(cache)
        for name, g in grads.items():
            if name.startswith("adapter.1."):
                assert np.max(np.abs(g)) < 1e-8, name

    def test_zero_upstream_gives_exact_zero_adapter_gradients(self):
        config = tiny_config()
        weights = EncoderWeights(config)
        adapters = AdapterParams.random(config, tiny_adapter_config(), seed=9)
        x = np.random.default_rng(10).normal(size=(2, 3, 8))
        states, cache = encoder_forward(config, weights, x, adapters, return_cache=True)
        grads = encoder_backward(
            config, weights, adapters, states, cache, np.zeros_like(states)
        )
        for name, g in grads.items():
            assert np.array_equal(g, np.zeros_like(g)), name


class TestPipeline:
    def test_trainable_parameter_count_formula(self):
        # L=2 layers, D=64, r=8, d_b=32, C=6 classes:
        #   lora: L * 2 projections * (r*D + D*r); bottleneck: L * 2 * d_b * D;
        #   aggregator: 2L logits; probe: C*D + C.
        config = tiny_config(num_layers=2, model_dim=64, num_heads=4, ffn_dim=128)
        adapters = AdapterParams.init(config, AdapterConfig(rank=8, alpha=16, bottleneck_dim=32))
        pipeline = peft_assemble(
            config,
            EncoderWeights(config),
            adapters,
            AggregatorParams.init("weighting_gate", 2),
            ProbeParams.zeros(64),
        )
        num_layers, dim, rank, db, classes = 2, 64, 8, 32, 6
        expected = (
            num_layers * 2 * (rank * dim + dim * rank)
            + num_layers * 2 * (db * dim)
            + 2 * num_layers
            + (classes * dim + classes)
        )
        assert expected == 12682
        assert sum(v.size for v in pipeline.parameters().values()) == expected

    def test_backbone_checksum_stable_across_training(self):
        config = tiny_config()
        pipeline = assemble_random_pipeline(config, seed=11)
        before = pipeline.backbone_checksum()
        rng = np.random.default_rng(12)
        x = rng.normal(size=(4, 3, 8))
        y = rng.integers(0, 6, 4)
        opt = AdamW(pipeline.parameters(), TrainConfig(learning_rate=1e-3, epochs=1))
        for _ in range(100):
            _, _, cache = pipeline.forward_loss(x, y)
            opt.step(pipeline.backward(cache))
        assert pipeline.backbone_checksum() == before

    def test_lora_update_rank_bounded(self):
        config = tiny_config(model_dim=16, num_heads=2)
        adapters = AdapterParams.random(config, AdapterConfig(rank=3, alpha=6, bottleneck_dim=4), seed=13)
        a, b = adapters.lora(0, "q")
        update = b @ a  # (D, D)
        singular = np.linalg.svd(update, compute_uv=False)
        assert np.all(singular[3:] < 1e-10)

    def test_assemble_layer_mismatch_rejected(self):
        config = tiny_config(num_layers=2)
        weights = EncoderWeights(config)
        adapters = AdapterParams.init(config, tiny_adapter_config())
        with pytest.raises(DimensionMismatchError):
            peft_assemble(
                config,
                weights,
                adapters,
                AggregatorParams.init("weighting_gate", 3),
                ProbeParams.zeros(8),
            )

    def test_assemble_probe_dim_rejected(self):
        config = tiny_config(num_layers=2)
        with pytest.raises(DimensionMismatchError):
            peft_assemble(
                config,
                EncoderWeights(config),
                AdapterParams.init(config, tiny_adapter_config()),
                AggregatorParams.init("weighting_gate", 2),
                ProbeParams.zeros(99),
            )

    def test_identity_at_init_logits_match_adapter_free_pipeline(self):
        config = tiny_config()
        weights = EncoderWeights(config)
        rng = np.random.default_rng(14)
        probe = ProbeParams(W=rng.normal(size=(6, 8)), b=rng.normal(size=6))
        agg = AggregatorParams.init("weighting_gate", 2)
        with_adapters = peft_assemble(
            config, weights, AdapterParams.init(config, tiny_adapter_config()), agg, probe
        )
        without = peft_assemble(config, weights, None, agg, probe)
        x = rng.normal(size=(3, 4, 8))
        logits_a, _ = with_adapters.forward_logits(x)
        logits_b, _ = without.forward_logits(x)
        assert np.array_equal(logits_a, logits_b)
