"""Forecasting model: gated GATv2 spatial encoder feeding a transformer.

Per time step, variable values are lifted to node vectors, gated to the
top-k variables, passed through multi-head GATv2 layers on the correlation
graph, and pooled (mean over kept nodes, then a learned projection) into one
embedding per week. A transformer encoder reads the embedded window; the
decoder reads the differenced target history under a causal mask with
cross-attention to the encoder, and a linear head on the last H positions
emits H scaled-difference predictions. Reverse differencing anchored at the
last observation recovers level forecasts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tt
from .data import ScalerState, inverse_difference
from .errors import ConfigError, ContractError, MissingArtifactError
from .graph import VariableGraph, gate_cardinality, gate_mask, gatv2_layer
from .tensor import Tensor

CHECKPOINT_MAGIC = b"EPIGRAPH-CKPT-v1\n"


@dataclass
class ModelConfig:
    d_model: int = 256
    n_heads: int = 8
    d_ff: int = 256
    dropout: float = 0.05
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    node_dim: int = 16
    gat_layers: int = 2
    gat_heads: int = 4
    gat_head_dim: int = 8
    leaky_slope: float = 0.2
    keep_fraction: float = 0.10
    gate_init_scale: float = 0.01  # std of the per-seed jitter on gate logits

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def gat_out_dim(self) -> int:
        return self.gat_heads * self.gat_head_dim


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal position table, reproducible from (length, d_model)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (i // 2 * 2) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(length: int) -> np.ndarray:
    """Lower-triangular keep mask: position i may attend to j <= i."""
    return np.tril(np.ones((length, length), dtype=bool))


def _glorot(rng, shape) -> Tensor:
    fan_in = shape[0] if len(shape) > 1 else 1
    fan_out = shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return tt.param(rng.uniform(-limit, limit, size=shape))


def _linear_params(params, rng, prefix, d_in, d_out):
    params[f"{prefix}.w"] = _glorot(rng, (d_in, d_out))
    params[f"{prefix}.b"] = tt.param(np.zeros(d_out))


def _attention_params(params, rng, prefix, d_model):
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = _glorot(rng, (d_model, d_model))
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = tt.param(np.zeros(d_model))


def _norm_params(params, prefix, d_model):
    params[f"{prefix}.gain"] = tt.param(np.ones(d_model))
    params[f"{prefix}.bias"] = tt.param(np.zeros(d_model))


def init_params(config: ModelConfig, n_features: int, rng) -> dict[str, Tensor]:
    """All trainable tensors, keyed by dotted path; gate logits start at 0."""
    params: dict[str, Tensor] = {}
    params["embed.w"] = _glorot(rng, (config.node_dim,))
    params["embed.b"] = tt.param(np.zeros(config.node_dim))
    params["gate.logits"] = tt.param(
        config.gate_init_scale * rng.normal(size=n_features)
        if config.gate_init_scale
        else np.zeros(n_features)
    )
    d_in = config.node_dim
    for layer in range(config.gat_layers):
        for head in range(config.gat_heads):
            prefix = f"gat{layer}.h{head}"
            params[f"{prefix}.w1"] = _glorot(rng, (d_in, config.gat_head_dim))
            params[f"{prefix}.w2"] = _glorot(rng, (d_in, config.gat_head_dim))
            params[f"{prefix}.att"] = _glorot(rng, (config.gat_head_dim, 1))
        d_in = config.gat_out_dim
    _linear_params(params, rng, "project", config.gat_out_dim, config.d_model)
    for layer in range(config.n_encoder_layers):
        p = f"enc{layer}"
        _attention_params(params, rng, f"{p}.attn", config.d_model)
        _norm_params(params, f"{p}.ln1", config.d_model)
        _linear_params(params, rng, f"{p}.ffn.1", config.d_model, config.d_ff)
        _linear_params(params, rng, f"{p}.ffn.2", config.d_ff, config.d_model)
        _norm_params(params, f"{p}.ln2", config.d_model)
    params["dec.embed.w"] = _glorot(rng, (config.d_model,))
    params["dec.embed.b"] = tt.param(np.zeros(config.d_model))
    for layer in range(config.n_decoder_layers):
        p = f"dec{layer}"
        _attention_params(params, rng, f"{p}.self", config.d_model)
        _norm_params(params, f"{p}.ln1", config.d_model)
        _attention_params(params, rng, f"{p}.cross", config.d_model)
        _norm_params(params, f"{p}.ln2", config.d_model)
        _linear_params(params, rng, f"{p}.ffn.1", config.d_model, config.d_ff)
        _linear_params(params, rng, f"{p}.ffn.2", config.d_ff, config.d_model)
        _norm_params(params, f"{p}.ln3", config.d_model)
    _linear_params(params, rng, "head", config.d_model, 1)
    return params


def _linear(params, prefix, x):
    return tt.add(tt.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _attention(params, prefix, q_in, kv_in, n_heads, mask, rate, rng, training):
    B, wq, d = q_in.shape
    wk = kv_in.shape[1]
    if kv_in.shape[0] != B or kv_in.shape[2] != d:
        raise ContractError(f"attention operands disagree: {q_in.shape} vs {kv_in.shape}")
    if mask is not None and mask.shape != (wq, wk):
        raise ContractError(f"attention mask {mask.shape} does not fit ({wq}, {wk})")
    dk = d // n_heads
    q = tt.add(tt.matmul(q_in, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = tt.add(tt.matmul(kv_in, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = tt.add(tt.matmul(kv_in, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    q = tt.swapaxes(tt.reshape(q, (B, wq, n_heads, dk)), 1, 2)
    k = tt.swapaxes(tt.reshape(k, (B, wk, n_heads, dk)), 1, 2)
    v = tt.swapaxes(tt.reshape(v, (B, wk, n_heads, dk)), 1, 2)
    logits = tt.mul(tt.matmul(q, tt.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dk))
    if mask is not None:
        logits = tt.mask_fill(logits, mask)
    weights = tt.softmax(logits, axis=-1)
    weights = tt.dropout(weights, rate, rng, training)
    context = tt.matmul(weights, v)
    context = tt.reshape(tt.swapaxes(context, 1, 2), (B, wq, d))
    return tt.add(tt.matmul(context, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _ffn(params, prefix, x, rate, rng, training):
    hidden = tt.relu(_linear(params, f"{prefix}.1", x))
    hidden = tt.dropout(hidden, rate, rng, training)
    return _linear(params, f"{prefix}.2", hidden)


def encode(params, config: ModelConfig, z, rng=None, training: bool = False):
    """Transformer encoder stack over the embedded window."""
    if z.ndim != 3 or z.shape[2] != config.d_model:
        raise ContractError(f"encode expects (B, w, {config.d_model}), got {z.shape}")
    if z.shape[1] < 1:
        raise ContractError("encode: empty sequence")
    rate = config.dropout
    for layer in range(config.n_encoder_layers):
        p = f"enc{layer}"
        attended = _attention(params, f"{p}.attn", z, z, config.n_heads, None, rate, rng, training)
        z = tt.layer_norm(tt.add(z, attended), params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
        fed = _ffn(params, f"{p}.ffn", z, rate, rng, training)
        z = tt.layer_norm(tt.add(z, fed), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
    return z


def decode(params, config: ModelConfig, y, z_enc, rng=None, training: bool = False):
    """Masked self-attention over target history, cross-attention to encoder."""
    if z_enc.ndim != 3 or z_enc.shape[1] < 1:
        raise ContractError(f"decode: encoder output must be (B, w>=1, d), got {z_enc.shape}")
    if y.ndim != 3 or y.shape[2] != config.d_model:
        raise ContractError(f"decode expects embedded history (B, w, {config.d_model}), got {y.shape}")
    mask = causal_mask(y.shape[1])
    rate = config.dropout
    for layer in range(config.n_decoder_layers):
        p = f"dec{layer}"
        attended = _attention(params, f"{p}.self", y, y, config.n_heads, mask, rate, rng, training)
        y = tt.layer_norm(tt.add(y, attended), params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
        crossed = _attention(params, f"{p}.cross", y, z_enc, config.n_heads, None, rate, rng, training)
        y = tt.layer_norm(tt.add(y, crossed), params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
        fed = _ffn(params, f"{p}.ffn", y, rate, rng, training)
        y = tt.layer_norm(tt.add(y, fed), params[f"{p}.ln3.gain"], params[f"{p}.ln3.bias"])
    return y


def head(params, z_dec, horizon: int):
    """Project the last ``horizon`` decoder positions to scalar differences."""
    w = z_dec.shape[1]
    if w < horizon:
        raise ContractError(f"head: window {w} shorter than horizon {horizon}")
    tail = tt.narrow(z_dec, 1, w - horizon, horizon)
    out = _linear(params, "head", tail)  # (B, H, 1)
    return tt.reshape(out, out.shape[:-1])


def spatial_encode(params, config: ModelConfig, graph: VariableGraph, X: np.ndarray):
    """Per-week node processing: gate to top-k, lift, GATv2, pool to one vector.

    Equivalent to gating the full node tensor and then discarding zero rows,
    but only the kept columns are ever embedded; dropped variables neither
    contribute values nor receive gradient.
    """
    B, w, M = X.shape
    frames = B * w
    logits = params["gate.logits"]
    gates = tt.sigmoid(logits)
    k = gate_cardinality(M, config.keep_fraction)
    mask = gate_mask(gates.data, k)
    selected = np.flatnonzero(mask)
    x = tt.reshape(Tensor(X[:, :, selected]), (frames, k, 1))
    h = tt.add(tt.mul(x, params["embed.w"]), params["embed.b"])
    kept_gates = tt.take(gates, selected)
    hs = tt.mul(h, tt.reshape(kept_gates, (k, 1)))
    adj = graph.induced(selected)
    for layer in range(config.gat_layers):
        heads = [
            {
                "w1": params[f"gat{layer}.h{i}.w1"],
                "w2": params[f"gat{layer}.h{i}.w2"],
                "att": params[f"gat{layer}.h{i}.att"],
            }
            for i in range(config.gat_heads)
        ]
        hs = gatv2_layer(hs, adj, heads, config.leaky_slope)
    z = tt.mean(hs, axis=1)  # mean over kept nodes
    z = _linear(params, "project", z)
    return tt.reshape(z, (B, w, config.d_model)), mask


def model_forward(
    params,
    config: ModelConfig,
    graph: VariableGraph,
    X: np.ndarray,
    y_history: np.ndarray,
    horizon: int,
    rng=None,
    training: bool = False,
):
    """Full forward pass; returns (scaled-difference predictions, gate mask)."""
    B, w, _ = X.shape
    if y_history.shape != (B, w):
        raise ContractError(f"history shape {y_history.shape} != ({B}, {w})")
    z, mask = spatial_encode(params, config, graph, X)
    pos = Tensor(positional_encoding(w, config.d_model))
    z = tt.add(z, pos)
    z_enc = encode(params, config, z, rng, training)
    y = tt.reshape(Tensor(y_history), (B, w, 1))
    y = tt.add(tt.mul(y, params["dec.embed.w"]), params["dec.embed.b"])
    y = tt.add(y, pos)
    z_dec = decode(params, config, y, z_enc, rng, training)
    return head(params, z_dec, horizon), mask


@dataclass
class ModelState:
    """Everything needed to reproduce forecasts: weights, graph, scalers."""

    config: ModelConfig
    params: dict[str, Tensor]
    graph: VariableGraph
    scaler: ScalerState
    feature_names: list[str]
    target_name: str
    diff_name: str
    horizon: int
    window: int
    seed: int
    train_end_week: int
    extra: dict = field(default_factory=dict)

    def gate_values(self) -> np.ndarray:
        logits = self.params["gate.logits"].data
        return 1.0 / (1.0 + np.exp(-logits))

    def selection_mask(self) -> np.ndarray:
        values = self.gate_values()
        return gate_mask(values, gate_cardinality(values.size, self.config.keep_fraction))

    def predict(self, inputs: np.ndarray, decoder_inputs: np.ndarray) -> np.ndarray:
        """Scaled-difference predictions in evaluation mode (deterministic)."""
        out, _ = model_forward(
            self.params, self.config, self.graph, inputs, decoder_inputs, self.horizon
        )
        return out.data

    def forecast(
        self,
        inputs: np.ndarray,
        decoder_inputs: np.ndarray,
        last_observed: np.ndarray,
    ) -> np.ndarray:
        """Level forecasts: unscale differences, then reverse differencing."""
        deltas = self.scaler.unscale(self.diff_name, self.predict(inputs, decoder_inputs))
        return np.stack(
            [inverse_difference(row, anchor) for row, anchor in zip(deltas, last_observed)]
        )


# --- checkpoint I/O ---


def save_checkpoint(state: ModelState, path) -> None:
    """Single self-describing binary: JSON header plus raw float64 blobs."""
    blobs = [(name, p.data) for name, p in state.params.items()]
    blobs.append(("graph.weights", state.graph.weights))
    header = {
        "format": "epigraph-checkpoint",
        "version": 1,
        "config": asdict(state.config),
        "horizon": state.horizon,
        "window": state.window,
        "seed": state.seed,
        "train_end_week": state.train_end_week,
        "target_name": state.target_name,
        "diff_name": state.diff_name,
        "feature_names": state.feature_names,
        "scaler": {k: list(v) for k, v in state.scaler.entries.items()},
        "extra": state.extra,
        "blobs": [{"name": n, "shape": list(a.shape)} for n, a in blobs],
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack(">Q", len(payload)))
        fh.write(payload)
        for _, arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelState:
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise MissingArtifactError(f"checkpoint not found: {path}") from None
    with fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not an epigraph checkpoint")
        (length,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        arrays = {}
        for blob in header["blobs"]:
            shape = tuple(blob["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[blob["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    weights = arrays.pop("graph.weights")
    params = {name: tt.param(a) for name, a in arrays.items()}
    scaler = ScalerState({k: (v[0], v[1]) for k, v in header["scaler"].items()})
    return ModelState(
        config=ModelConfig(**header["config"]),
        params=params,
        graph=VariableGraph(list(header["feature_names"]), weights),
        scaler=scaler,
        feature_names=list(header["feature_names"]),
        target_name=header["target_name"],
        diff_name=header["diff_name"],
        horizon=header["horizon"],
        window=header["window"],
        seed=header["seed"],
        train_end_week=header["train_end_week"],
        extra=header.get("extra", {}),
    )
