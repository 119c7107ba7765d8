"""Frame pooling and layer aggregation: mean pool, weighted sum, weighting gate.

Aggregation modes over per-layer pooled vectors x_1..x_L:

    layer_mean      y = (1/L) * sum_l x_l                      (no parameters)
    weighted_sum    y = sum_l w_l x_l,        w = softmax(ws_logits)
    weighting_gate  y = sum_l w_l g_l x_l,    g = sigmoid(gate_logits)

Gates modulate per-layer contribution before the convex combination; with
uniform ws_logits the weighted sum reduces exactly to the layer mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError, InsufficientDataError
from .numerics import require_finite, sigmoid, softmax

MODES = ("layer_mean", "weighted_sum", "weighting_gate")


@dataclass
class AggregatorParams:
    mode: str
    ws_logits: np.ndarray | None = None
    gate_logits: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown aggregation mode '{self.mode}'")
        if self.mode != "layer_mean" and self.ws_logits is None:
            raise ConfigError(f"mode '{self.mode}' requires ws_logits")
        if self.mode == "weighting_gate" and self.gate_logits is None:
            raise ConfigError("mode 'weighting_gate' requires gate_logits")

    @classmethod
    def init(cls, mode: str, num_layers: int) -> "AggregatorParams":
        """Zero logits: uniform weights, gates at 0.5 (baseline-like start)."""
        ws = np.zeros(num_layers) if mode != "layer_mean" else None
        gate = np.zeros(num_layers) if mode == "weighting_gate" else None
        return cls(mode=mode, ws_logits=ws, gate_logits=gate)

    def weights(self) -> np.ndarray:
        return softmax(self.ws_logits)

    def gates(self) -> np.ndarray:
        return sigmoid(self.gate_logits)

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(
            mode=self.mode,
            ws_logits=None if self.ws_logits is None else self.ws_logits.copy(),
            gate_logits=None if self.gate_logits is None else self.gate_logits.copy(),
        )

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        if self.ws_logits is not None:
            out["agg.ws_logits"] = self.ws_logits
        if self.gate_logits is not None:
            out["agg.gate_logits"] = self.gate_logits
        return out


def mean_pool_time(record_layer: np.ndarray) -> np.ndarray:
    """Arithmetic mean across the frame axis of a (T, D) slice."""
    arr = np.asarray(record_layer, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected (T, D), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise InsufficientDataError("cannot pool an empty frame sequence")
    require_finite(arr, "frames")
    return arr.mean(axis=0)


def pool_record(layers: np.ndarray) -> np.ndarray:
    """Mean-pool every layer of an (L, T, D) record to (L, D)."""
    arr = np.asarray(layers, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] == 0:
        raise DimensionMismatchError(f"expected (L, T, D) with T >= 1, got {arr.shape}")
    return arr.mean(axis=1)


def layer_coefficients(params: AggregatorParams, num_layers: int) -> np.ndarray:
    """Per-layer scalar applied to x_l in the aggregate, as a length-L vector."""
    if params.mode == "layer_mean":
        return np.full(num_layers, 1.0 / num_layers)
    if params.ws_logits.shape != (num_layers,):
        raise DimensionMismatchError(
            f"ws_logits has length {params.ws_logits.shape[0]}, input has {num_layers} layers"
        )
    coeff = params.weights()
    if params.mode == "weighting_gate":
        if params.gate_logits.shape != (num_layers,):
            raise DimensionMismatchError(
                f"gate_logits has length {params.gate_logits.shape[0]}, "
                f"input has {num_layers} layers"
            )
        coeff = coeff * params.gates()
    return coeff


def aggregate_layers(pooled_layers: np.ndarray, params: AggregatorParams) -> np.ndarray:
    """Combine an (L, D) stack of pooled layer vectors into a single D-vector."""
    pooled = np.asarray(pooled_layers, dtype=np.float64)
    if pooled.ndim != 2:
        raise DimensionMismatchError(f"expected (L, D), got shape {pooled.shape}")
    if params.mode == "layer_mean":
        return pooled.mean(axis=0)
    return layer_coefficients(params, pooled.shape[0]) @ pooled


def aggregate_layers_batch(pooled: np.ndarray, params: AggregatorParams) -> np.ndarray:
    """(N, L, D) -> (N, D), same combination as :func:`aggregate_layers`."""
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.ndim != 3:
        raise DimensionMismatchError(f"expected (N, L, D), got shape {pooled.shape}")
    if params.mode == "layer_mean":
        return pooled.mean(axis=1)
    coeff = layer_coefficients(params, pooled.shape[1])
    return np.einsum("l,nld->nd", coeff, pooled)


def aggregate_backward(
    pooled_layers: np.ndarray,
    params: AggregatorParams,
    upstream_gradient: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients of upstream . aggregate_layers(pooled, params) w.r.t. logits.

    With a_l = x_l . upstream and w = softmax(s):

        d/ds_j  sum_l w_l g_l x_l . upstream = w_j * (g_j a_j - sum_l w_l g_l a_l)
        d/dz_j  ...                          = w_j * g_j (1 - g_j) * a_j

    (g = 1 for plain weighted_sum). layer_mean has no parameters and returns {}.
    """
    grads, _ = aggregate_backward_batch(
        np.asarray(pooled_layers, dtype=np.float64)[None, :, :],
        params,
        np.asarray(upstream_gradient, dtype=np.float64)[None, :],
    )
    return grads


def aggregate_backward_batch(
    pooled: np.ndarray,
    params: AggregatorParams,
    upstream: np.ndarray,
    need_input_grad: bool = False,
) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Batched logits gradients, summed over the batch.

    ``pooled`` is (N, L, D), ``upstream`` is (N, D). Optionally also returns
    d(loss)/d(pooled) of shape (N, L, D) for callers that backpropagate
    further into the layer stack.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if pooled.ndim != 3 or upstream.shape != (pooled.shape[0], pooled.shape[2]):
        raise DimensionMismatchError(
            f"pooled {pooled.shape} and upstream {upstream.shape} disagree"
        )
    num_layers = pooled.shape[1]
    coeff = layer_coefficients(params, num_layers)
    dpooled = None
    if need_input_grad:
        dpooled = np.einsum("l,nd->nld", coeff, upstream)
    if params.mode == "layer_mean":
        return {}, dpooled

    a = np.einsum("nld,nd->nl", pooled, upstream)
    w = params.weights()
    grads: dict[str, np.ndarray] = {}
    if params.mode == "weighted_sum":
        b = a
    else:
        g = params.gates()
        b = a * g
        grads["agg.gate_logits"] = np.sum(w * g * (1.0 - g) * a, axis=0)
    mix = b @ w
    grads["agg.ws_logits"] = np.sum(w * (b - mix[:, None]), axis=0)
    return grads, dpooled
