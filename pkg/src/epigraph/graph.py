"""Correlation graph over (lagged) variables, top-k feature gate, GATv2.

The graph's edge weights are thresholded absolute Pearson correlations; they
define topology only (who may attend to whom), while attention learns the
weighting. The gate keeps the k = ceil(p*M) largest sigmoid gates each
forward pass and zeroes the rest; attention runs on the induced subgraph of
kept nodes so dropped variables neither send nor receive messages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ContractError, DimensionError

CORRELATION_THRESHOLD = 0.05


def pearson_matrix(values: np.ndarray) -> np.ndarray:
    """Pairwise Pearson correlations of columns; constant columns correlate 0.

    The diagonal is always 1, including for constant columns.
    """
    X = np.asarray(values, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractError(f"pearson_matrix needs a (T>=2, M) matrix, got {X.shape}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc
    sd = np.sqrt(np.diag(cov))
    denom = np.outer(sd, sd)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(rho, 1.0)
    return np.clip(rho, -1.0, 1.0)


@dataclass
class VariableGraph:
    node_names: list[str]
    weights: np.ndarray  # symmetric (M, M), zero below threshold

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights > 0

    def neighborhoods(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.adjacency]

    def induced(self, nodes: np.ndarray) -> np.ndarray:
        """Boolean adjacency among ``nodes``, self-loops preserved."""
        return self.adjacency[np.ix_(nodes, nodes)]


def build_graph(
    rho: np.ndarray, node_names: list[str], threshold: float = CORRELATION_THRESHOLD
) -> VariableGraph:
    """Keep |rho| at or above the threshold as edge weight, zero the rest."""
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] != len(node_names):
        raise ContractError(f"correlation matrix shape {rho.shape} invalid for {len(node_names)} nodes")
    mag = np.abs(rho)
    weights = np.where(mag >= threshold, mag, 0.0)
    weights = (weights + weights.T) / 2.0
    return VariableGraph(list(node_names), weights)


def graph_from_table(values: np.ndarray, names: list[str], threshold: float = CORRELATION_THRESHOLD) -> VariableGraph:
    return build_graph(pearson_matrix(values), names, threshold)


def write_edge_list(graph: VariableGraph, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["u_name", "v_name", "weight"])
        M = len(graph.node_names)
        for u in range(M):
            for v in range(u, M):
                w = graph.weights[u, v]
                if w > 0:
                    writer.writerow([graph.node_names[u], graph.node_names[v], repr(float(w))])


# --- feature gate ---


def gate_cardinality(M: int, keep_fraction: float) -> int:
    k = int(np.ceil(keep_fraction * M))
    if not 1 <= k <= M:
        raise ContractError(f"gate keeps k={k} of M={M} nodes; need 1 <= k <= M")
    return k


def top_k_indices(gate_values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest gates; ties broken by lower node index."""
    if k > gate_values.size:
        raise ContractError(f"top-k with k={k} > M={gate_values.size}")
    order = np.argsort(-gate_values, kind="stable")
    return np.sort(order[:k])


def gate_mask(gate_values: np.ndarray, k: int) -> np.ndarray:
    mask = np.zeros(gate_values.size, dtype=bool)
    mask[top_k_indices(gate_values, k)] = True
    return mask


def gate_forward(node_feats: tt.Tensor, logits: tt.Tensor, keep_fraction: float):
    """Multiply node features by the hard-masked sigmoid gate.

    Returns (gated features with dropped-node rows exactly zero, bool mask).
    Gradients reach only the kept logits; the selection itself is not
    differentiated.
    """
    M = logits.shape[0]
    if node_feats.shape[-2] != M:
        raise DimensionError(
            f"gate_forward: features have {node_feats.shape[-2]} nodes, gate has {M}"
        )
    k = gate_cardinality(M, keep_fraction)
    gates = tt.sigmoid(logits)
    mask = gate_mask(gates.data, k)
    masked = tt.mul(gates, mask.astype(np.float64))
    gated = tt.mul(node_feats, tt.reshape(masked, (M, 1)))
    return gated, mask


def write_gate_mask(names: list[str], gate_values: np.ndarray, mask: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "gate_value", "selected"])
        for name, g, m in zip(names, gate_values, mask):
            writer.writerow([name, repr(float(g)), int(m)])


# --- GATv2 ---


def gatv2_attention(h: tt.Tensor, adj: np.ndarray, w1: tt.Tensor, w2: tt.Tensor, att: tt.Tensor, slope: float) -> tt.Tensor:
    """Attention over each node's neighborhood for one head.

    h: (..., k, d_in); adj: bool (k, k) with self-loops; w1/w2: (d_in, d_head);
    att: (d_head, 1). Row i of the result distributes over j in N(i).
    """
    if adj.shape[0] != adj.shape[1] or adj.shape[0] != h.shape[-2]:
        raise DimensionError(f"adjacency {adj.shape} does not match {h.shape[-2]} nodes")
    if not bool(np.all(adj.diagonal())):
        raise ContractError("adjacency must include self-loops")
    s1 = tt.matmul(h, w1)  # (..., k, d_head), transforms the attending node i
    s2 = tt.matmul(h, w2)  # (..., k, d_head), transforms the neighbor j
    k = h.shape[-2]
    d_head = w1.shape[-1]
    pair = tt.add(
        tt.reshape(s1, s1.shape[:-2] + (k, 1, d_head)),
        tt.reshape(s2, s2.shape[:-2] + (1, k, d_head)),
    )
    logits = tt.matmul(tt.leaky_relu(pair, slope), att)  # (..., k, k, 1)
    logits = tt.reshape(logits, logits.shape[:-1])
    logits = tt.mask_fill(logits, adj)
    return tt.softmax(logits, axis=-1)


def gatv2_layer(
    h: tt.Tensor,
    adj: np.ndarray,
    heads: list[dict[str, tt.Tensor]],
    slope: float,
) -> tt.Tensor:
    """Multi-head GATv2 update: per head ReLU(sum_j alpha_ij * W2 h_j), concatenated.

    Each head dict carries w1, w2 (d_in, d_head) and att (d_head, 1); W2 doubles
    as the value transform, matching the per-head parameter set.
    """
    outputs = []
    for head in heads:
        alpha = gatv2_attention(h, adj, head["w1"], head["w2"], head["att"], slope)
        values = tt.matmul(h, head["w2"])  # (..., k, d_head)
        outputs.append(tt.relu(tt.matmul(alpha, values)))
    return tt.concat(outputs, axis=-1)
