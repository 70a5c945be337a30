"""Loop-based reference implementations used as oracles in tests.

Everything here works on plain numpy arrays with explicit Python loops
over nodes, edges and heads, following the layer definitions directly
and never touching the tape machinery it is used to check.
"""

from __future__ import annotations

import math

import numpy as np

from rootrank.aggregation import AttentionParams, mu_index
from rootrank.graphs import CommitGraph, NodeKind, neighbors_in
from rootrank.network import GruParams, Mode, NetworkParams


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def naive_project(h_prev: np.ndarray, kinds, w, b) -> np.ndarray:
    out = np.zeros_like(h_prev)
    for i, kind in enumerate(kinds):
        out[i] = h_prev[i] @ w[kind].data + b[kind].data
    return out


def naive_attention_forward(h_prev: np.ndarray, g: CommitGraph,
                            params: AttentionParams) -> np.ndarray:
    """Edge-by-edge, head-by-head attention layer."""
    n, dim = h_prev.shape
    heads = params.heads
    d = dim // heads
    kinds = [node.kind for node in g.nodes]

    k_full = naive_project(h_prev, kinds, params.w_k, params.b_k)
    q_full = naive_project(h_prev, kinds, params.w_q, params.b_q)
    v_full = naive_project(h_prev, kinds, params.w_v, params.b_v)

    h_tilde = np.zeros((n, dim))
    for t in range(n):
        incoming = neighbors_in(g, t)
        if not incoming:
            continue
        for i in range(heads):
            sl = slice(i * d, (i + 1) * d)
            logits = []
            messages = []
            for s, ekind in incoming:
                w_att_block = params.w_att[ekind].data[sl, sl]
                w_msg_block = params.w_msg[ekind].data[sl, sl]
                prior = params.mu.data[mu_index(kinds[s], ekind, kinds[t]), 0]
                logit = (k_full[s, sl] @ w_att_block @ q_full[t, sl]) * prior / math.sqrt(d)
                logits.append(logit)
                messages.append(v_full[s, sl] @ w_msg_block)
            logits = np.array(logits)
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            acc = np.zeros(d)
            for w_edge, msg in zip(weights, messages):
                acc += w_edge * msg
            h_tilde[t, sl] = acc
    return h_tilde


def naive_gru(h_tilde: np.ndarray, h_prev: np.ndarray, p: GruParams) -> np.ndarray:
    out = np.zeros_like(h_prev)
    for row in range(h_prev.shape[0]):
        x = h_tilde[row]
        h = h_prev[row]
        r = _sigmoid(x @ p.w_ir.data + p.b_ir.data + h @ p.w_hr.data + p.b_hr.data)
        z = _sigmoid(x @ p.w_iz.data + p.b_iz.data + h @ p.w_hz.data + p.b_hz.data)
        cand = np.tanh(x @ p.w_in.data + p.b_in.data + r * (h @ p.w_hn.data + p.b_hn.data))
        out[row] = (1.0 - z) * cand + z * h
    return out


def naive_layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                     eps: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(x)
    for row in range(x.shape[0]):
        v = x[row]
        mean = v.mean()
        var = ((v - mean) ** 2).mean()
        out[row] = (v - mean) / math.sqrt(var + eps) * gain + bias
    return out


def naive_network_forward(h0: np.ndarray, g: CommitGraph, params: NetworkParams,
                          mode: Mode = Mode.FULL) -> np.ndarray:
    h = h0.copy()
    for attn, gru in params.layers:
        if mode is Mode.FULL:
            h = naive_gru(naive_attention_forward(h, g, attn), h, gru)
        elif mode is Mode.AGGREGATION_ONLY:
            h = naive_attention_forward(h, g, attn)
        else:
            h = naive_gru(h, h, gru)
    normed = naive_layer_norm(h, params.norm_gain.data, params.norm_bias.data)
    return np.maximum(normed @ params.w_proj.data + params.b_proj.data, 0.0)


def random_graph(rng: np.random.Generator, max_nodes: int = 6,
                 require_deleted: bool = True) -> CommitGraph:
    """Random small commit graph with mixed node and edge kinds."""
    from rootrank.graphs import DepEdge, EdgeKind, LineNode

    n = int(rng.integers(2, max_nodes + 1))
    kinds = [NodeKind.DELETED if rng.random() < 0.5 else NodeKind.ADDED for _ in range(n)]
    if require_deleted and not any(k is NodeKind.DELETED for k in kinds):
        kinds[int(rng.integers(0, n))] = NodeKind.DELETED
    deleted = [i for i, k in enumerate(kinds) if k is NodeKind.DELETED]
    root = int(rng.choice(deleted))
    nodes = tuple(
        LineNode(i, kinds[i], text=f"line {i}", is_root_cause=(i == root))
        for i in range(n)
    )
    edges = []
    seen = set()
    for src in range(n):
        for dst in range(n):
            if src == dst or rng.random() > 0.45:
                continue
            if kinds[src] is NodeKind.DELETED and kinds[dst] is NodeKind.ADDED and rng.random() < 0.2:
                kind = EdgeKind.LINE_MAPPING
            else:
                kind = list(EdgeKind)[int(rng.integers(0, 4))]
            if (src, dst, kind) in seen:
                continue
            seen.add((src, dst, kind))
            edges.append(DepEdge(src, dst, kind))
    return CommitGraph(commit_id=f"rand-{rng.integers(1 << 30)}", nodes=nodes, edges=tuple(edges))
