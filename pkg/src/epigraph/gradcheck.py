"""Finite-difference verification of analytic gradients.

``grad_check`` compares tape gradients against central differences for every
element of every parameter. The loss function must be deterministic across
calls (recreate any RNG inside it so stochastic layers repeat their draws).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor, backward, zero_grads

REL_ERR_FLOOR = 1e-6  # denominator floor so near-zero gradients do not blow up


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def __str__(self) -> str:
        lines = [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name:40s} max_rel_err={e.max_rel_err:.3e}"
            for e in self.entries
        ]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: dict[str, Tensor],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Per-parameter max relative error between analytic and numeric gradients."""
    zero_grads(params)
    with Tape():
        loss = loss_fn()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    zero_grads(params)

    entries = []
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn().item()
            flat[i] = orig - epsilon
            down = loss_fn().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * epsilon)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), REL_ERR_FLOOR)
        err = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
        entries.append(GradCheckEntry(name, err, err < tolerance))
    return GradCheckReport(entries, tolerance)


# --- layer-wise verification suite ---


def layer_suite(epsilon: float = 1e-5, tolerance: float = 1e-4):
    """Finite-difference checks for every layer type at tiny dimensions.

    Fixture seeds are fixed: central differences at eps=1e-5 amplify float
    roundoff on near-zero gradient components, so fixtures are chosen away
    from activation kinks and degenerate gradients.
    """
    from . import tensor as tt
    from .graph import VariableGraph, gate_forward, gatv2_layer
    from .model import ModelConfig, init_params, model_forward, decode, encode, head

    checks = []

    def run(name, loss_fn, params, tol=tolerance):
        checks.append((name, grad_check(loss_fn, params, epsilon, tol)))

    # linear map: the benign base case, held to a tighter tolerance
    rng = tt.make_rng(100)
    w = tt.param(rng.normal(size=(5, 3)))
    b = tt.param(rng.normal(size=3))
    x = Tensor(rng.normal(size=(4, 5)))
    target = Tensor(rng.normal(size=(4, 3)))
    run("linear", lambda: tt.mse_loss(tt.add(tt.matmul(x, w), b), target), {"w": w, "b": b}, 1e-6)

    # feature gate: top-k masked sigmoid gate over node features
    rng = tt.make_rng(101)
    logits = tt.param(rng.normal(size=8))
    feats = Tensor(rng.normal(size=(2, 8, 4)))
    gate_target = Tensor(rng.normal(size=(2, 8, 4)))

    def gate_loss():
        gated, _ = gate_forward(feats, logits, 0.25)
        return tt.mse_loss(gated, gate_target)

    run("gate", gate_loss, {"gate.logits": logits})

    # GATv2: 3 nodes, 2 heads, width 4
    rng = tt.make_rng(102)
    adj = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    gat_params = {}
    heads = []
    for i in range(2):
        hp = {
            "w1": tt.param(rng.normal(size=(4, 4))),
            "w2": tt.param(rng.normal(size=(4, 4))),
            "att": tt.param(rng.normal(size=(4, 1))),
        }
        heads.append(hp)
        for key, value in hp.items():
            gat_params[f"h{i}.{key}"] = value
    gat_in = Tensor(rng.normal(size=(2, 3, 4)))
    gat_target = Tensor(rng.normal(size=(2, 3, 8)))
    run(
        "gatv2",
        lambda: tt.mse_loss(gatv2_layer(gat_in, adj, heads, 0.2), gat_target),
        gat_params,
    )

    tiny = ModelConfig(
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

    # encoder stack
    rng = tt.make_rng(103)
    enc_params = init_params(tiny, 6, rng)
    enc_sub = {k: v for k, v in enc_params.items() if k.startswith("enc")}
    z_in = rng.normal(size=(2, 3, 8))
    enc_target = Tensor(rng.normal(size=(2, 3, 8)))
    run(
        "encoder",
        lambda: tt.mse_loss(encode(enc_params, tiny, Tensor(z_in)), enc_target),
        enc_sub,
    )

    # encoder with dropout active; the rng is recreated per call so the
    # stochastic mask repeats and finite differences stay consistent
    drop_cfg = ModelConfig(
        d_model=8, n_heads=2, d_ff=8, dropout=0.2, n_encoder_layers=1, n_decoder_layers=1
    )

    def dropout_loss():
        drop_rng = tt.make_rng(104)
        out = encode(enc_params, drop_cfg, Tensor(z_in), rng=drop_rng, training=True)
        return tt.mse_loss(out, enc_target)

    run("encoder_dropout", dropout_loss, enc_sub)

    # decoder stack with fixed encoder memory
    rng = tt.make_rng(105)
    dec_params = init_params(tiny, 6, rng)
    dec_sub = {k: v for k, v in dec_params.items() if k.startswith("dec")}
    y_in = rng.normal(size=(2, 3, 8))
    memory = Tensor(rng.normal(size=(2, 3, 8)))
    dec_target = Tensor(rng.normal(size=(2, 3, 8)))
    run(
        "decoder",
        lambda: tt.mse_loss(decode(dec_params, tiny, Tensor(y_in), memory), dec_target),
        dec_sub,
    )

    # output head on the last horizon positions
    rng = tt.make_rng(106)
    head_params = {
        "head.w": tt.param(rng.normal(size=(8, 1))),
        "head.b": tt.param(rng.normal(size=1)),
    }
    z_dec = Tensor(rng.normal(size=(2, 4, 8)))
    head_target = Tensor(rng.normal(size=(2, 2)))
    run(
        "head",
        lambda: tt.mse_loss(head(head_params, z_dec, 2), head_target),
        head_params,
        1e-6,
    )

    # full pipeline at tiny dimensions
    rng = tt.make_rng(1)
    full_cfg = ModelConfig(
        d_model=8,
        n_heads=2,
        d_ff=8,
        dropout=0.0,
        n_encoder_layers=1,
        n_decoder_layers=1,
        node_dim=4,
        gat_layers=2,
        gat_heads=2,
        gat_head_dim=3,
        keep_fraction=0.5,
    )
    full_params = init_params(full_cfg, 6, rng)
    full_params["gate.logits"].data = rng.normal(size=6)
    W = rng.random((6, 6))
    W = (W + W.T) / 2
    W = np.where(W > 0.4, W, 0.0)
    np.fill_diagonal(W, 1.0)
    full_graph = VariableGraph([f"v{i}" for i in range(6)], W)
    X = rng.normal(size=(2, 4, 6))
    y_hist = rng.normal(size=(2, 4))
    full_target = Tensor(rng.normal(size=(2, 2)))

    def full_loss():
        out, _ = model_forward(full_params, full_cfg, full_graph, X, y_hist, 2)
        return tt.mse_loss(out, full_target)

    run("full_pipeline", full_loss, full_params)
    return checks
