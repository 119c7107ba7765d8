"""Compact frozen transformer encoder with injectable LoRA and bottleneck adapters.

The encoder mirrors the usual pre-norm block at toy scale and stands in for
a frozen self-supervised upstream: backbone tensors are drawn once from a
seeded Gaussian, write-protected, and never updated. Adapters inject into
the attention query/value projections (low-rank additive updates scaled by
alpha/rank) and after each block's FFN output (residual bottleneck with a
relu between down- and up-projection). With the low-rank B factors and the
bottleneck up-projections at zero, the adapted forward pass is bit-identical
to the frozen one.

All backward passes here are hand-derived; gradients are materialized only
for adapter tensors, never for the backbone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataValidationError, DimensionMismatchError
from .numerics import derive_rng, log_softmax, softmax
from .pooling import AggregatorParams, aggregate_backward_batch, aggregate_layers_batch
from .probe import ProbeParams

LN_EPS = 1e-5
INIT_STD = 0.02

_BACKBONE_MATRICES = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass
class MiniEncoderConfig:
    num_layers: int
    model_dim: int
    num_heads: int
    ffn_dim: int
    seed: int
    use_positions: bool = False

    def __post_init__(self):
        if min(self.num_layers, self.model_dim, self.num_heads, self.ffn_dim) < 1:
            raise ConfigError("all encoder dimensions must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "seed": self.seed,
            "use_positions": self.use_positions,
        }


class EncoderWeights:
    """Frozen backbone tensors; arrays are write-protected after init."""

    def __init__(self, config: MiniEncoderConfig):
        self.config = config
        d, f = config.model_dim, config.ffn_dim
        self.layers: list[dict[str, np.ndarray]] = []
        for l in range(config.num_layers):
            shapes = {
                "ln1_g": (d,), "ln1_b": (d,),
                "wq": (d, d), "bq": (d,),
                "wk": (d, d), "bk": (d,),
                "wv": (d, d), "bv": (d,),
                "wo": (d, d), "bo": (d,),
                "ln2_g": (d,), "ln2_b": (d,),
                "w1": (f, d), "b1": (f,),
                "w2": (d, f), "b2": (d,),
            }
            tensors = {}
            for name, shape in shapes.items():
                if name in _BACKBONE_MATRICES:
                    arr = derive_rng(config.seed, "backbone", l, name).normal(
                        0.0, INIT_STD, shape
                    )
                elif name.endswith("_g"):
                    arr = np.ones(shape)
                else:
                    arr = np.zeros(shape)
                arr.flags.writeable = False
                tensors[name] = arr
            self.layers.append(tensors)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for l, tensors in enumerate(self.layers):
            for name in sorted(tensors):
                digest.update(f"{l}:{name}:".encode())
                digest.update(tensors[name].tobytes())
        return digest.hexdigest()


@dataclass
class AdapterConfig:
    rank: int = 8
    alpha: float = 16.0
    bottleneck_dim: int = 32

    def __post_init__(self):
        if self.rank < 1 or self.bottleneck_dim < 1:
            raise ConfigError("rank and bottleneck_dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "alpha": self.alpha,
            "bottleneck_dim": self.bottleneck_dim,
        }


class AdapterParams:
    """Trainable LoRA (q, v) and bottleneck tensors for every encoder layer.

    Low-rank B factors and bottleneck up-projections start at zero so an
    adapted encoder initially reproduces the frozen one exactly.
    """

    def __init__(self, num_layers: int, model_dim: int, config: AdapterConfig,
                 tensors: dict[str, np.ndarray]):
        self.num_layers = num_layers
        self.model_dim = model_dim
        self.config = config
        self.tensors = tensors

    @property
    def scaling(self) -> float:
        return self.config.alpha / self.config.rank

    @classmethod
    def init(
        cls,
        encoder_config: MiniEncoderConfig,
        config: AdapterConfig | None = None,
        seed: int = 0,
    ) -> "AdapterParams":
        config = config or AdapterConfig()
        d, r, db = encoder_config.model_dim, config.rank, config.bottleneck_dim
        tensors: dict[str, np.ndarray] = {}
        for l in range(encoder_config.num_layers):
            for proj in ("q", "v"):
                tensors[f"adapter.{l}.{proj}.A"] = derive_rng(
                    seed, "lora", l, proj
                ).normal(0.0, INIT_STD, (r, d))
                tensors[f"adapter.{l}.{proj}.B"] = np.zeros((d, r))
            tensors[f"adapter.{l}.ba.down"] = derive_rng(seed, "ba", l).normal(
                0.0, INIT_STD, (db, d)
            )
            tensors[f"adapter.{l}.ba.up"] = np.zeros((d, db))
        return cls(encoder_config.num_layers, d, config, tensors)

    @classmethod
    def random(
        cls,
        encoder_config: MiniEncoderConfig,
        config: AdapterConfig | None = None,
        seed: int = 0,
        std: float = 0.1,
    ) -> "AdapterParams":
        """Dense-random adapters (B and up nonzero); used by gradient checks."""
        params = cls.init(encoder_config, config, seed)
        for name, arr in params.tensors.items():
            arr[...] = derive_rng(seed, "dense", name).normal(0.0, std, arr.shape)
        return params

    def lora(self, layer: int, proj: str) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.tensors[f"adapter.{layer}.{proj}.A"],
            self.tensors[f"adapter.{layer}.{proj}.B"],
        )

    def bottleneck(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.tensors[f"adapter.{layer}.ba.down"],
            self.tensors[f"adapter.{layer}.ba.up"],
        )

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            self.num_layers,
            self.model_dim,
            self.config,
            {k: v.copy() for k, v in self.tensors.items()},
        )


def sinusoidal_positions(num_frames: int, dim: int) -> np.ndarray:
    positions = np.arange(num_frames)[:, None]
    freqs = np.exp(-np.log(10000.0) * (np.arange(dim // 2 * 2, step=2) / dim))
    pe = np.zeros((num_frames, dim))
    pe[:, 0 : freqs.size * 2 : 2] = np.sin(positions * freqs)
    pe[:, 1 : freqs.size * 2 : 2] = np.cos(positions * freqs)
    return pe


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _layer_norm(x, gamma, beta):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, xhat, inv_std


def _layer_norm_backward(dout, gamma, xhat, inv_std):
    dxhat = dout * gamma
    return inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def _split_heads(x, num_heads):
    n, t, d = x.shape
    return x.reshape(n, t, num_heads, d // num_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)


def _layer_forward(config, tensors, adapters, layer, x, cache_list):
    w = tensors
    u, xhat1, inv_std1 = _layer_norm(x, w["ln1_g"], w["ln1_b"])

    q = u @ w["wq"].T + w["bq"]
    k = u @ w["wk"].T + w["bk"]
    v = u @ w["wv"].T + w["bv"]
    m_q = m_v = None
    if adapters is not None:
        s = adapters.scaling
        a_q, b_q = adapters.lora(layer, "q")
        a_v, b_v = adapters.lora(layer, "v")
        m_q = u @ a_q.T
        m_v = u @ a_v.T
        q = q + s * (m_q @ b_q.T)
        v = v + s * (m_v @ b_v.T)

    qh = _split_heads(q, config.num_heads)
    kh = _split_heads(k, config.num_heads)
    vh = _split_heads(v, config.num_heads)
    scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(config.head_dim)
    attn = softmax(scores, axis=-1)
    ctx = _merge_heads(attn @ vh)
    h = x + ctx @ w["wo"].T + w["bo"]

    z, xhat2, inv_std2 = _layer_norm(h, w["ln2_g"], w["ln2_b"])
    f1 = z @ w["w1"].T + w["b1"]
    h2 = h + np.maximum(f1, 0.0) @ w["w2"].T + w["b2"]

    y = h2
    bdown = br = None
    if adapters is not None:
        w_down, w_up = adapters.bottleneck(layer)
        bdown = h2 @ w_down.T
        br = np.maximum(bdown, 0.0)
        y = h2 + br @ w_up.T

    if cache_list is not None:
        cache_list.append(
            dict(
                u=u, xhat1=xhat1, inv_std1=inv_std1,
                m_q=m_q, m_v=m_v, qh=qh, kh=kh, vh=vh, attn=attn,
                xhat2=xhat2, inv_std2=inv_std2, f1=f1, h2=h2,
                bdown=bdown, br=br,
            )
        )
    return y


def encoder_forward(
    config: MiniEncoderConfig,
    weights: EncoderWeights,
    x: np.ndarray,
    adapters: AdapterParams | None = None,
    return_cache: bool = False,
):
    """Per-layer hidden states for a batch of sequences.

    ``x`` is (N, T, model_dim); returns states of shape (L, N, T, model_dim),
    plus the backward cache when requested.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != config.model_dim:
        raise DimensionMismatchError(
            f"input must be (N, T, {config.model_dim}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise DataValidationError("encoder input contains non-finite values")
    if adapters is not None and (
        adapters.num_layers != config.num_layers
        or adapters.model_dim != config.model_dim
    ):
        raise DimensionMismatchError(
            "adapters were built for a different encoder geometry"
        )
    if config.use_positions:
        x = x + sinusoidal_positions(x.shape[1], config.model_dim)

    cache_layers: list[dict] | None = [] if return_cache else None
    states = np.empty((config.num_layers, *x.shape))
    current = x
    for layer in range(config.num_layers):
        current = _layer_forward(
            config, weights.layers[layer], adapters, layer, current, cache_layers
        )
        states[layer] = current
    if return_cache:
        return states, {"x0": x, "layers": cache_layers}
    return states


def encode_sequence(
    config: MiniEncoderConfig,
    weights: EncoderWeights,
    sequence: np.ndarray,
    adapters: AdapterParams | None = None,
) -> np.ndarray:
    """Single (T, D) sequence helper; returns (L, T, D) layer states."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2:
        raise DimensionMismatchError(f"expected (T, D), got {sequence.shape}")
    return encoder_forward(config, weights, sequence[None], adapters)[:, 0]


# ---------------------------------------------------------------------------
# Backward (adapter gradients only)
# ---------------------------------------------------------------------------


def _layer_backward(config, tensors, adapters, layer, cache, dy, grads):
    """Gradient of this layer w.r.t. its input; adapter grads accumulate into ``grads``."""
    w = tensors
    c = cache

    # Bottleneck: y = h2 + relu(h2 Wd^T) Wu^T
    dh2 = dy
    if adapters is not None:
        w_down, w_up = adapters.bottleneck(layer)
        dbr = dy @ w_up
        grads[f"adapter.{layer}.ba.up"] += np.einsum("ntd,ntb->db", dy, c["br"])
        dbdown = dbr * (c["bdown"] > 0.0)
        grads[f"adapter.{layer}.ba.down"] += np.einsum("ntb,ntd->bd", dbdown, c["h2"])
        dh2 = dy + dbdown @ w_down

    # FFN: h2 = h + relu(LN2(h) W1^T + b1) W2^T + b2
    da = dh2 @ w["w2"]
    df1 = da * (c["f1"] > 0.0)
    dz = df1 @ w["w1"]
    dh = dh2 + _layer_norm_backward(dz, w["ln2_g"], c["xhat2"], c["inv_std2"])

    # Attention: h = x + merge(softmax(q k^T / sqrt(dh)) v) Wo^T + bo
    dctx = dh @ w["wo"]
    dctx_h = _split_heads(dctx, config.num_heads)
    dattn = dctx_h @ c["vh"].transpose(0, 1, 3, 2)
    dvh = c["attn"].transpose(0, 1, 3, 2) @ dctx_h
    dscores = c["attn"] * (dattn - (dattn * c["attn"]).sum(axis=-1, keepdims=True))
    scale = 1.0 / np.sqrt(config.head_dim)
    dqh = dscores @ c["kh"] * scale
    dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"] * scale
    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)

    du = dq @ w["wq"] + dk @ w["wk"] + dv @ w["wv"]
    if adapters is not None:
        s = adapters.scaling
        for proj, dproj, m in (("q", dq, c["m_q"]), ("v", dv, c["m_v"])):
            a_mat, b_mat = adapters.lora(layer, proj)
            dm = s * (dproj @ b_mat)
            du += dm @ a_mat
            grads[f"adapter.{layer}.{proj}.A"] += np.einsum("ntr,ntd->rd", dm, c["u"])
            grads[f"adapter.{layer}.{proj}.B"] += s * np.einsum(
                "ntd,ntr->dr", dproj, m
            )

    return dh + _layer_norm_backward(du, w["ln1_g"], c["xhat1"], c["inv_std1"])


def encoder_backward(
    config: MiniEncoderConfig,
    weights: EncoderWeights,
    adapters: AdapterParams | None,
    states: np.ndarray,
    cache: dict,
    dstates: np.ndarray,
) -> dict[str, np.ndarray]:
    """Adapter gradients given per-layer upstream gradients.

    ``dstates`` has one (N, T, D) gradient per layer output. Gradients flow
    through the frozen backbone but are materialized only for adapter
    tensors; with no adapters the result is an empty dict.
    """
    if dstates.shape != states.shape:
        raise DimensionMismatchError("dstates must match the per-layer states shape")
    grads: dict[str, np.ndarray] = {}
    if adapters is not None:
        grads = {k: np.zeros_like(v) for k, v in adapters.tensors.items()}
    g = np.asarray(dstates[-1], dtype=np.float64)
    for layer in range(config.num_layers - 1, -1, -1):
        dx = _layer_backward(
            config,
            weights.layers[layer],
            adapters,
            layer,
            cache["layers"][layer],
            g,
            grads,
        )
        if not np.all(np.isfinite(dx)):
            raise DataValidationError(f"non-finite gradient at encoder layer {layer}")
        if layer > 0:
            g = dstates[layer - 1] + dx
    return grads


# ---------------------------------------------------------------------------
# Assembled PEFT pipeline
# ---------------------------------------------------------------------------


class PeftPipeline:
    """Frozen encoder + adapters + layer aggregation + linear probe as one unit.

    Trainable parameters are the union of adapter, aggregator, and probe
    tensors; the backbone is excluded by construction.
    """

    def __init__(
        self,
        config: MiniEncoderConfig,
        weights: EncoderWeights,
        adapters: AdapterParams | None,
        aggregator: AggregatorParams,
        probe: ProbeParams,
    ):
        if adapters is not None and (
            adapters.num_layers != config.num_layers
            or adapters.model_dim != config.model_dim
        ):
            raise DimensionMismatchError(
                f"adapters cover {adapters.num_layers} layers of dim "
                f"{adapters.model_dim}; encoder has {config.num_layers} layers "
                f"of dim {config.model_dim}"
            )
        if aggregator.mode != "layer_mean" and aggregator.ws_logits.shape != (
            config.num_layers,
        ):
            raise DimensionMismatchError(
                f"aggregator has {aggregator.ws_logits.shape[0]} layer logits, "
                f"encoder has {config.num_layers} layers"
            )
        if probe.dim != config.model_dim:
            raise DimensionMismatchError(
                f"probe dim {probe.dim} does not match model_dim {config.model_dim}"
            )
        self.config = config
        self.weights = weights
        self.adapters = adapters
        self.aggregator = aggregator
        self.probe = probe

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.adapters is not None:
            out.update(self.adapters.tensors)
        out.update(self.aggregator.trainable())
        out.update(self.probe.trainable())
        return out

    def backbone_checksum(self) -> str:
        return self.weights.checksum()

    def forward_logits(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        states, enc_cache = encoder_forward(
            self.config, self.weights, x, self.adapters, return_cache=True
        )
        pooled = states.mean(axis=2).transpose(1, 0, 2)  # (N, L, D)
        feat = aggregate_layers_batch(pooled, self.aggregator)
        logits = feat @ self.probe.W.T + self.probe.b
        cache = dict(
            states=states, enc_cache=enc_cache, pooled=pooled, feat=feat,
            logits=logits, num_frames=x.shape[1],
        )
        return logits, cache

    def forward_loss(
        self, x: np.ndarray, labels: np.ndarray
    ) -> tuple[float, np.ndarray, dict]:
        logits, cache = self.forward_logits(x)
        labels = np.asarray(labels, dtype=np.int64)
        logp = log_softmax(logits, axis=1)
        loss = -float(logp[np.arange(labels.size), labels].mean())
        cache["labels"] = labels
        return loss, logits, cache

    def backward(self, cache: dict) -> dict[str, np.ndarray]:
        logits = cache["logits"]
        labels = cache["labels"]
        n = labels.size
        dlogits = softmax(logits, axis=1)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n

        grads: dict[str, np.ndarray] = {
            "probe.W": dlogits.T @ cache["feat"],
            "probe.b": dlogits.sum(axis=0),
        }
        dfeat = dlogits @ self.probe.W
        agg_grads, dpooled = aggregate_backward_batch(
            cache["pooled"], self.aggregator, dfeat, need_input_grad=True
        )
        grads.update(agg_grads)

        # Undo the frame mean-pool: each frame receives 1/T of the pooled grad.
        dstates = np.broadcast_to(
            dpooled.transpose(1, 0, 2)[:, :, None, :] / cache["num_frames"],
            cache["states"].shape,
        )
        grads.update(
            encoder_backward(
                self.config,
                self.weights,
                self.adapters,
                cache["states"],
                cache["enc_cache"],
                dstates,
            )
        )
        return grads


def peft_assemble(
    config: MiniEncoderConfig,
    weights: EncoderWeights,
    adapters: AdapterParams | None,
    aggregator: AggregatorParams,
    probe: ProbeParams,
) -> PeftPipeline:
    """Bundle the components into a trainable unit; raises on any dim mismatch."""
    return PeftPipeline(config, weights, adapters, aggregator, probe)
