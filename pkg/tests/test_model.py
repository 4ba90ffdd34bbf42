import numpy as np
import pytest

from epigraph import tensor as tt
from epigraph.data import ScalerState
from epigraph.errors import ContractError, MissingArtifactError
from epigraph.graph import VariableGraph
from epigraph.model import (
    ModelConfig,
    ModelState,
    causal_mask,
    decode,
    encode,
    head,
    init_params,
    load_checkpoint,
    model_forward,
    positional_encoding,
    save_checkpoint,
    spatial_encode,
)
from epigraph.tensor import Tensor, make_rng

TINY = ModelConfig(
    d_model=8,
    n_heads=2,
    d_ff=8,
    dropout=0.0,
    n_encoder_layers=1,
    n_decoder_layers=1,
    node_dim=4,
    gat_layers=1,
    gat_heads=2,
    gat_head_dim=3,
    keep_fraction=0.5,
)


def random_graph(M, seed=0):
    rng = make_rng(seed)
    W = rng.random((M, M))
    W = (W + W.T) / 2
    W = np.where(W > 0.35, W, 0.0)
    np.fill_diagonal(W, 1.0)
    return VariableGraph([f"v{i}" for i in range(M)], W)


def tiny_setup(seed=1, M=6, B=2, w=4, H=2):
    rng = make_rng(seed)
    params = init_params(TINY, M, rng)
    graph = random_graph(M, seed)
    X = rng.normal(size=(B, w, M))
    y = rng.normal(size=(B, w))
    return params, graph, X, y


# --- positional encoding and masks ---


def test_positional_encoding_reproducible_and_shaped():
    a = positional_encoding(12, 16)
    b = positional_encoding(12, 16)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (12, 16)
    np.testing.assert_allclose(a[0, 0::2], 0.0)  # sin(0)
    np.testing.assert_allclose(a[0, 1::2], 1.0)  # cos(0)


def test_positional_encoding_known_values():
    P = positional_encoding(4, 4)
    assert P[2, 0] == pytest.approx(np.sin(2.0))
    assert P[2, 1] == pytest.approx(np.cos(2.0))
    assert P[3, 2] == pytest.approx(np.sin(3.0 / 100.0))


def test_causal_mask_lower_triangular():
    m = causal_mask(4)
    assert m[2, 2] and m[2, 0] and not m[2, 3] and not m[0, 1]


# --- config validation ---


def test_model_config_rejects_bad_heads():
    from epigraph.errors import ConfigError

    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=3)


# --- encoder/decoder behavior ---


def test_encoder_single_position_runs_and_attention_sums():
    params, graph, X, y = tiny_setup(w=1)
    rng = make_rng(0)
    z = Tensor(rng.normal(size=(2, 1, 8)))
    out = encode(params, TINY, z)
    assert out.shape == (2, 1, 8)


def test_decoder_rejects_empty_memory():
    params, *_ = tiny_setup()
    rng = make_rng(0)
    y = Tensor(rng.normal(size=(2, 3, 8)))
    memory = Tensor(np.zeros((2, 0, 8)))
    with pytest.raises(ContractError):
        decode(params, TINY, y, memory)


def test_decoder_causality_exact_zero_influence():
    params, graph, X, y = tiny_setup(w=5)
    rng = make_rng(4)
    memory = Tensor(rng.normal(size=(2, 5, 8)))
    y_emb = rng.normal(size=(2, 5, 8))
    base = decode(params, TINY, Tensor(y_emb), memory).data
    for j in range(1, 5):
        bumped = y_emb.copy()
        bumped[:, j, :] += 123.456
        out = decode(params, TINY, Tensor(bumped), memory).data
        # positions before j are bit-identical
        np.testing.assert_array_equal(out[:, :j, :], base[:, :j, :])


def test_cross_attention_reaches_all_memory_positions():
    params, graph, X, y = tiny_setup(w=3)
    rng = make_rng(6)
    memory = rng.normal(size=(2, 3, 8))
    y_emb = Tensor(rng.normal(size=(2, 3, 8)))
    base = decode(params, TINY, y_emb, Tensor(memory)).data
    bumped = memory.copy()
    bumped[:, -1, :] += 50.0
    out = decode(params, TINY, y_emb, Tensor(bumped)).data
    assert np.abs(out - base).max() > 0.0  # memory changes do reach the decoder


# --- head ---


def test_head_uses_last_positions():
    rng = make_rng(2)
    params = {
        "head.w": tt.param(rng.normal(size=(8, 1))),
        "head.b": tt.param(np.zeros(1)),
    }
    z = rng.normal(size=(2, 6, 8))
    out = head(params, Tensor(z), 2)
    assert out.shape == (2, 2)
    expected = z[:, 4:, :] @ params["head.w"].data
    np.testing.assert_allclose(out.data, expected[:, :, 0], atol=1e-12)


def test_head_rejects_short_window():
    params = {"head.w": tt.param(np.zeros((8, 1))), "head.b": tt.param(np.zeros(1))}
    with pytest.raises(ContractError):
        head(params, Tensor(np.zeros((1, 2, 8))), 3)


# --- full forward ---


def test_forward_shapes_and_mask_cardinality():
    params, graph, X, y = tiny_setup()
    out, mask = model_forward(params, TINY, graph, X, y, 2)
    assert out.shape == (2, 2)
    assert mask.sum() == 3  # ceil(0.5 * 6)


def test_forward_deterministic_in_eval_mode():
    params, graph, X, y = tiny_setup()
    a, _ = model_forward(params, TINY, graph, X, y, 2)
    b, _ = model_forward(params, TINY, graph, X, y, 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_unselected_node_has_no_influence():
    params, graph, X, y = tiny_setup()
    _, mask = model_forward(params, TINY, graph, X, y, 2)
    dropped = int(np.flatnonzero(~mask)[0])
    X2 = X.copy()
    X2[:, :, dropped] *= 2.0
    a, _ = model_forward(params, TINY, graph, X, y, 2)
    b, _ = model_forward(params, TINY, graph, X2, y, 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_spatial_encode_all_equal_nodes_is_projection_of_shared_vector():
    # one kept node with only a self-loop: pooled vector is that node's output
    params, graph, X, y = tiny_setup(M=2)
    cfg = ModelConfig(
        d_model=8,
        n_heads=2,
        d_ff=8,
        dropout=0.0,
        n_encoder_layers=1,
        n_decoder_layers=1,
        node_dim=4,
        gat_layers=1,
        gat_heads=2,
        gat_head_dim=3,
        keep_fraction=0.5,  # keeps 1 of 2
    )
    rng = make_rng(3)
    params = init_params(cfg, 2, rng)
    graph = VariableGraph(["a", "b"], np.eye(2))
    X = rng.normal(size=(1, 3, 2))
    z, mask = spatial_encode(params, cfg, graph, X)
    assert z.shape == (1, 3, 8)
    assert mask.sum() == 1


def test_history_shape_check():
    params, graph, X, y = tiny_setup()
    with pytest.raises(ContractError):
        model_forward(params, TINY, graph, X, y[:, :-1], 2)


# --- forecast anchoring ---


def make_state(params, graph, horizon=2, window=4):
    scaler = ScalerState({"cases [diff]": (-2.0, 2.0)})
    return ModelState(
        config=TINY,
        params=params,
        graph=graph,
        scaler=scaler,
        feature_names=graph.node_names,
        target_name="cases",
        diff_name="cases [diff]",
        horizon=horizon,
        window=window,
        seed=0,
        train_end_week=50,
    )


def test_forecast_reverse_differencing_anchor():
    params, graph, X, y = tiny_setup()
    state = make_state(params, graph)
    scaled = state.predict(X, y)
    deltas = state.scaler.unscale("cases [diff]", scaled)
    out = state.forecast(X, y, np.array([100.0, 50.0]))
    np.testing.assert_allclose(out[:, 0], deltas[:, 0] + [100.0, 50.0], atol=1e-12)
    np.testing.assert_allclose(out[:, 1], deltas[:, 0] + deltas[:, 1] + [100.0, 50.0], atol=1e-12)


def test_forecast_zero_deltas_is_flat():
    params, graph, X, y = tiny_setup()
    state = make_state(params, graph)
    state.scaler.entries["cases [diff]"] = (0.0, 0.0)  # unscale collapses to zero
    out = state.forecast(X, y, np.array([7.0, 9.0]))
    np.testing.assert_allclose(out, [[7.0, 7.0], [9.0, 9.0]], atol=1e-12)


def test_forecast_requires_finite_anchor():
    params, graph, X, y = tiny_setup()
    state = make_state(params, graph)
    with pytest.raises(ContractError):
        state.forecast(X, y, np.array([np.nan, 1.0]))


# --- checkpoints ---


def test_checkpoint_roundtrip_and_determinism(tmp_path):
    params, graph, X, y = tiny_setup()
    state = make_state(params, graph)
    state.extra = {"note": 1}
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_checkpoint(state, p1)
    save_checkpoint(state, p2)
    assert p1.read_bytes() == p2.read_bytes()

    loaded = load_checkpoint(p1)
    assert loaded.feature_names == state.feature_names
    assert loaded.scaler.entries == state.scaler.entries
    assert loaded.horizon == state.horizon
    for k, p in state.params.items():
        np.testing.assert_array_equal(loaded.params[k].data, p.data)
    np.testing.assert_array_equal(loaded.graph.weights, graph.weights)
    # forecasts agree bit for bit
    np.testing.assert_array_equal(
        loaded.forecast(X, y, np.array([1.0, 2.0])),
        state.forecast(X, y, np.array([1.0, 2.0])),
    )


def test_checkpoint_missing_file():
    with pytest.raises(MissingArtifactError):
        load_checkpoint("/nonexistent/checkpoint.bin")


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ContractError):
        load_checkpoint(path)
