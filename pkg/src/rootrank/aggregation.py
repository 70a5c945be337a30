"""Typed multi-head attention over a commit graph.

One layer turns the previous node states (n x D) into a neighbor
aggregation matrix of the same shape: every node attends over its
incoming edges, with projections selected by node kind and attention /
message maps selected by edge kind, plus a learnable prior per
(source kind, edge kind, target kind) triple.

All per-head structure lives in contiguous column slices of width D/H.
Per-edge-kind maps are stored as D x D tensors whose off-diagonal head
blocks are masked to zero in the forward pass, so head i only ever sees
its own block.

Graph-shaped constants (edge selectors, incidence, head block masks) are
precomputed once per graph into a :class:`GraphPlan` and reused across
training steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, constant
from .graphs import (
    NUM_EDGE_KINDS,
    NUM_NODE_KINDS,
    CommitGraph,
    EdgeKind,
    NodeKind,
)

MU_SIZE = NUM_NODE_KINDS * NUM_EDGE_KINDS * NUM_NODE_KINDS


def mu_index(src_kind: NodeKind, edge_kind: EdgeKind, dst_kind: NodeKind) -> int:
    """Flat index of one (source kind, edge kind, target kind) prior."""
    return (src_kind.ordinal * NUM_EDGE_KINDS + edge_kind.ordinal) * NUM_NODE_KINDS + dst_kind.ordinal


@dataclass
class AttentionParams:
    """Learnable tensors of one attention layer.

    ``w_k``/``w_q``/``w_v`` and their biases are per node kind; weights
    apply by right multiplication on row vectors (state @ W + b).
    ``w_att``/``w_msg`` are per edge kind, block-diagonal per head.
    ``mu`` is the flattened (kind, kind, kind) prior, shape (MU_SIZE, 1).
    """

    dim: int
    heads: int
    w_k: dict[NodeKind, Tensor]
    b_k: dict[NodeKind, Tensor]
    w_q: dict[NodeKind, Tensor]
    b_q: dict[NodeKind, Tensor]
    w_v: dict[NodeKind, Tensor]
    b_v: dict[NodeKind, Tensor]
    w_att: dict[EdgeKind, Tensor]
    w_msg: dict[EdgeKind, Tensor]
    mu: Tensor

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def init_attention_params(dim: int, heads: int, rng: np.random.Generator) -> AttentionParams:
    """Fresh layer parameters.

    Projections draw symmetric-uniform Xavier bounds; the per-edge-kind
    maps start at identity plus small uniform noise inside each head
    block; priors start at 1.
    """
    if dim % heads != 0:
        raise ValueError(f"heads ({heads}) must divide dim ({dim})")
    d = dim // heads
    bound = math.sqrt(6.0 / (dim + dim))

    def proj():
        return Tensor(rng.uniform(-bound, bound, size=(dim, dim)), requires_grad=True)

    def bias():
        return Tensor(np.zeros(dim), requires_grad=True)

    def blockwise():
        w = np.zeros((dim, dim))
        for i in range(heads):
            lo = i * d
            w[lo:lo + d, lo:lo + d] = np.eye(d) + rng.uniform(-0.01, 0.01, size=(d, d))
        return Tensor(w, requires_grad=True)

    w_k = {k: proj() for k in NodeKind}
    b_k = {k: bias() for k in NodeKind}
    w_q = {k: proj() for k in NodeKind}
    b_q = {k: bias() for k in NodeKind}
    w_v = {k: proj() for k in NodeKind}
    b_v = {k: bias() for k in NodeKind}
    w_att = {e: blockwise() for e in EdgeKind}
    w_msg = {e: blockwise() for e in EdgeKind}
    mu = Tensor(np.ones((MU_SIZE, 1)), requires_grad=True)
    return AttentionParams(
        dim=dim, heads=heads,
        w_k=w_k, b_k=b_k, w_q=w_q, b_q=b_q, w_v=w_v, b_v=b_v,
        w_att=w_att, w_msg=w_msg, mu=mu,
    )


@dataclass(frozen=True)
class PlanEdge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass
class GraphPlan:
    """Constant matrices derived from one graph's structure.

    Edges are reordered canonically by (dst, src, kind ordinal) so each
    target's incoming edges are contiguous and match neighbors_in order.
    """

    n: int
    dim: int
    heads: int
    kinds: tuple[NodeKind, ...]
    edges: tuple[PlanEdge, ...]
    kind_rows: dict[NodeKind, Tensor]          # (n, n) diagonal node-kind mask
    src_sel: dict[EdgeKind, Tensor]            # (E, n) source selector, zero rows off-kind
    dst_sel: dict[EdgeKind, Tensor]            # (E, n) target selector, zero rows off-kind
    mu_sel: Tensor                             # (E, MU_SIZE) prior selector
    incidence: Tensor                          # (n, E) edge -> target scatter
    targets: tuple[tuple[int, Tensor, Tensor], ...]  # (node, gather (m,E), scatter (E,m))
    head_sum: Tensor                           # (D, H) sums each head block
    head_expand: Tensor                        # (H, D) repeats head weights across the block
    block_mask: Tensor                         # (D, D) in-head-block indicator


def build_plan(g: CommitGraph, dim: int, heads: int) -> GraphPlan:
    n = len(g.nodes)
    d = dim // heads
    kinds = tuple(node.kind for node in g.nodes)

    order = sorted(g.edges, key=lambda e: (e.dst, e.src, e.kind.ordinal))
    edges = tuple(PlanEdge(e.src, e.dst, e.kind) for e in order)
    n_edges = len(edges)

    kind_rows = {}
    for kind in NodeKind:
        m = np.zeros((n, n))
        for i, node_kind in enumerate(kinds):
            if node_kind is kind:
                m[i, i] = 1.0
        kind_rows[kind] = constant(m)

    src_sel = {}
    dst_sel = {}
    for kind in EdgeKind:
        if not any(e.kind is kind for e in edges):
            continue
        s = np.zeros((n_edges, n))
        t = np.zeros((n_edges, n))
        for row, e in enumerate(edges):
            if e.kind is kind:
                s[row, e.src] = 1.0
                t[row, e.dst] = 1.0
        src_sel[kind] = constant(s)
        dst_sel[kind] = constant(t)

    mu_sel = np.zeros((n_edges, MU_SIZE))
    inc = np.zeros((n, n_edges))
    for row, e in enumerate(edges):
        mu_sel[row, mu_index(kinds[e.src], e.kind, kinds[e.dst])] = 1.0
        inc[e.dst, row] = 1.0

    targets = []
    row = 0
    while row < n_edges:
        t = edges[row].dst
        hi = row
        while hi < n_edges and edges[hi].dst == t:
            hi += 1
        gather = np.zeros((hi - row, n_edges))
        gather[np.arange(hi - row), np.arange(row, hi)] = 1.0
        targets.append((t, constant(gather), constant(gather.T.copy())))
        row = hi

    head_sum = np.zeros((dim, heads))
    for i in range(heads):
        head_sum[i * d:(i + 1) * d, i] = 1.0
    block_mask = np.zeros((dim, dim))
    for i in range(heads):
        lo = i * d
        block_mask[lo:lo + d, lo:lo + d] = 1.0

    return GraphPlan(
        n=n, dim=dim, heads=heads, kinds=kinds, edges=edges,
        kind_rows=kind_rows, src_sel=src_sel, dst_sel=dst_sel,
        mu_sel=constant(mu_sel), incidence=constant(inc),
        targets=tuple(targets),
        head_sum=constant(head_sum),
        head_expand=constant(head_sum.T.copy()),
        block_mask=constant(block_mask),
    )


@dataclass
class HeadVectors:
    """Key/query/value states, n x D each; head i is columns [i*D/H, (i+1)*D/H)."""

    k: Tensor
    q: Tensor
    v: Tensor
    heads: int

    def head(self, which: str, i: int) -> np.ndarray:
        full = getattr(self, which).data
        d = full.shape[1] // self.heads
        return full[:, i * d:(i + 1) * d]


def project_kqv(tape: Tape | None, h_prev: Tensor, params: AttentionParams,
                plan: GraphPlan) -> HeadVectors:
    """Project node states through the projection of each node's own kind."""

    def typed(w: dict[NodeKind, Tensor], b: dict[NodeKind, Tensor]) -> Tensor:
        parts = []
        for kind in NodeKind:
            projected = ad.add(tape, ad.matmul(tape, h_prev, w[kind]), b[kind])
            parts.append(ad.matmul(tape, plan.kind_rows[kind], projected))
        return ad.add(tape, parts[0], parts[1])

    return HeadVectors(
        k=typed(params.w_k, params.b_k),
        q=typed(params.w_q, params.b_q),
        v=typed(params.w_v, params.b_v),
        heads=params.heads,
    )


def attention_logits(tape: Tape | None, plan: GraphPlan, kv: HeadVectors,
                     params: AttentionParams) -> Tensor:
    """Per-edge, per-head scaled attention logits, shape (E, H).

    Row order is the plan's canonical edge order.  Each logit is
    K_head(src) @ W_att_block @ Q_head(dst), scaled by the (source kind,
    edge kind, target kind) prior and 1/sqrt(D/H).
    """
    raw = None
    for kind, sel in plan.src_sel.items():
        masked = ad.mul(tape, params.w_att[kind], plan.block_mask)
        kw = ad.matmul(tape, kv.k, masked)
        k_rows = ad.matmul(tape, sel, kw)
        q_rows = ad.matmul(tape, plan.dst_sel[kind], kv.q)
        per_head = ad.matmul(tape, ad.mul(tape, k_rows, q_rows), plan.head_sum)
        raw = per_head if raw is None else ad.add(tape, raw, per_head)
    if raw is None:
        raise ValueError("attention_logits on a graph without edges")
    mu_edges = ad.matmul(tape, plan.mu_sel, params.mu)
    ones_row = constant(np.ones((1, params.heads)))
    mu_grid = ad.matmul(tape, mu_edges, ones_row)
    scale = 1.0 / math.sqrt(params.dim / params.heads)
    return ad.scalar_mul(tape, ad.mul(tape, raw, mu_grid), scale)


def attention_weights(tape: Tape | None, logits: Tensor, plan: GraphPlan, t: int) -> Tensor:
    """Softmax over all incoming edges of target ``t``, independently per head.

    Every incoming edge competes in one softmax regardless of its kind.
    Shape (in-degree of t, H); rows follow neighbors_in order.
    """
    for node, gather, _scatter in plan.targets:
        if node == t:
            return ad.softmax(tape, ad.matmul(tape, gather, logits), axis=0)
    raise ValueError(f"node {t} has no incoming edges")


def edge_messages(tape: Tape | None, plan: GraphPlan, kv: HeadVectors,
                  params: AttentionParams) -> Tensor:
    """Per-edge message content, shape (E, D): V_head(src) @ W_msg_block per head."""
    out = None
    for kind, sel in plan.src_sel.items():
        masked = ad.mul(tape, params.w_msg[kind], plan.block_mask)
        vw = ad.matmul(tape, kv.v, masked)
        rows = ad.matmul(tape, sel, vw)
        out = rows if out is None else ad.add(tape, out, rows)
    if out is None:
        raise ValueError("edge_messages on a graph without edges")
    return out


def aggregate(tape: Tape | None, plan: GraphPlan, weights: list[Tensor],
              messages: Tensor) -> Tensor:
    """Attention-weighted sum of messages into each target, shape (n, D).

    ``weights[i]`` must be the weight matrix for ``plan.targets[i]``.
    Targets with no incoming edges get an exactly zero row.
    """
    if len(weights) != len(plan.targets):
        raise ValueError("one weight matrix per attended target required")
    if not plan.targets:
        return constant(np.zeros((plan.n, plan.dim)))
    w_edges = None
    for (node, _gather, scatter), w in zip(plan.targets, weights):
        scattered = ad.matmul(tape, scatter, w)
        w_edges = scattered if w_edges is None else ad.add(tape, w_edges, scattered)
    w_full = ad.matmul(tape, w_edges, plan.head_expand)
    weighted = ad.mul(tape, w_full, messages)
    return ad.matmul(tape, plan.incidence, weighted)


def attention_forward(tape: Tape | None, h_prev: Tensor, plan: GraphPlan,
                      params: AttentionParams) -> Tensor:
    """Full layer: project, score, normalize, message, aggregate."""
    if not plan.edges:
        return constant(np.zeros((plan.n, plan.dim)))
    kv = project_kqv(tape, h_prev, params, plan)
    logits = attention_logits(tape, plan, kv, params)
    weights = [
        ad.softmax(tape, ad.matmul(tape, gather, logits), axis=0)
        for _node, gather, _scatter in plan.targets
    ]
    messages = edge_messages(tape, plan, kv, params)
    return aggregate(tape, plan, weights, messages)
