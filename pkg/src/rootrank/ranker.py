"""Pairwise ranking of deleted lines.

Each deleted line of a commit receives a scalar score from its task
embedding; training pulls root-cause lines above their siblings by
pushing the logistic of score differences toward pair labels with a
cross-entropy loss, one optimizer step per commit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregation import GraphPlan, build_plan
from .autodiff import Tape, Tensor, constant
from .embedding import EmbeddedGraph
from .graphs import CommitGraph, DepEdge, EdgeKind, LineNode, NodeKind
from .network import (
    ModelConfig,
    NetworkParams,
    init_network_params,
    named_tensors,
    network_forward,
)


class TrainingError(RuntimeError):
    """Raised when training aborts (for example on a non-finite loss)."""


@dataclass(frozen=True)
class PairSample:
    commit_id: str
    i: int
    j: int
    label: float


def pair_label(node_i: LineNode, node_j: LineNode) -> float:
    """1.0 / 0.0 when exactly one of the pair is a root cause, else 0.5."""
    for node in (node_i, node_j):
        if node.kind is not NodeKind.DELETED:
            raise ValueError(f"pair labels are defined on deleted nodes, got node {node.id}")
    if node_i.is_root_cause and not node_j.is_root_cause:
        return 1.0
    if node_j.is_root_cause and not node_i.is_root_cause:
        return 0.0
    return 0.5


def build_pairs(g: CommitGraph, include_ties: bool = False) -> list[PairSample]:
    """All unordered deleted-line pairs of one commit, as (i < j) samples.

    Tie pairs (label 0.5: both or neither root cause) are emitted only
    when ``include_ties`` is set.
    """
    deleted = g.deleted_ids()
    pairs = []
    for a in range(len(deleted)):
        for b in range(a + 1, len(deleted)):
            i, j = deleted[a], deleted[b]
            label = pair_label(g.nodes[i], g.nodes[j])
            if label == 0.5 and not include_ties:
                continue
            pairs.append(PairSample(commit_id=g.commit_id, i=i, j=j, label=label))
    return pairs


def score(task_embedding: np.ndarray, params: NetworkParams) -> float:
    """Affine map of one task embedding to a scalar score."""
    return float(task_embedding @ params.scorer_w.data + params.scorer_b.data)


def pair_probability(s_i: float, s_j: float, sigma: float = 1.0) -> float:
    """Probability that item i outranks item j: logistic of sigma * (s_i - s_j)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return ad.sigmoid(None, constant(sigma * (s_i - s_j))).item()


def pairwise_loss(p: float, p_bar: float) -> float:
    """Cross entropy between predicted and target pair orderings."""
    eps = 1e-12
    p = min(max(p, eps), 1.0 - eps)
    return float(-p_bar * np.log(p) - (1.0 - p_bar) * np.log(1.0 - p))


@dataclass
class AdamState:
    """Adam accumulators for one fixed list of parameter tensors."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, tensors: list[Tensor]) -> "AdamState":
        state = cls()
        state.m = [np.zeros_like(t.data) for t in tensors]
        state.v = [np.zeros_like(t.data) for t in tensors]
        return state

    def step(self, tensors: list[Tensor], grads: list[np.ndarray], lr: float) -> None:
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for t, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t.data = t.data - lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


@dataclass(frozen=True)
class _CommitBatch:
    """Per-commit constants reused every epoch."""

    graph: CommitGraph
    h0: Tensor
    plan: GraphPlan
    deleted_sel: Tensor            # (k, n) rows of the deleted nodes
    pair_i: Tensor | None          # (P, k) selector of each pair's first score
    pair_j: Tensor | None
    labels: np.ndarray | None      # (P,)
    pairs: tuple[PairSample, ...]


def _prepare(eg: EmbeddedGraph, cfg: ModelConfig) -> _CommitBatch:
    g = eg.graph
    deleted = g.deleted_ids()
    n = len(g.nodes)
    sel = np.zeros((len(deleted), n))
    for row, node_id in enumerate(deleted):
        sel[row, node_id] = 1.0
    pairs = tuple(build_pairs(g, include_ties=cfg.include_tie_pairs))
    pair_i = pair_j = labels = None
    if pairs:
        pos = {node_id: row for row, node_id in enumerate(deleted)}
        pi = np.zeros((len(pairs), len(deleted)))
        pj = np.zeros((len(pairs), len(deleted)))
        for row, pair in enumerate(pairs):
            pi[row, pos[pair.i]] = 1.0
            pj[row, pos[pair.j]] = 1.0
        pair_i = constant(pi)
        pair_j = constant(pj)
        labels = np.array([pair.label for pair in pairs])
    return _CommitBatch(
        graph=g,
        h0=constant(eg.h0),
        plan=build_plan(g, cfg.dim, cfg.heads),
        deleted_sel=constant(sel),
        pair_i=pair_i,
        pair_j=pair_j,
        labels=labels,
        pairs=pairs,
    )


def _deleted_scores(tape: Tape | None, batch: _CommitBatch, params: NetworkParams,
                    cfg: ModelConfig) -> Tensor:
    embeddings = network_forward(tape, batch.h0, batch.plan, params, cfg.mode)
    picked = ad.matmul(tape, batch.deleted_sel, embeddings)
    return ad.add(tape, ad.matmul(tape, picked, params.scorer_w), params.scorer_b)


def _pair_loss_from_scores(tape: Tape | None, scores: Tensor, batch: _CommitBatch,
                           cfg: ModelConfig, subset: slice | None = None) -> Tensor:
    pair_i, pair_j, labels = batch.pair_i, batch.pair_j, batch.labels
    if subset is not None:
        pair_i = constant(pair_i.data[subset])
        pair_j = constant(pair_j.data[subset])
        labels = labels[subset]
    s_i = ad.matmul(tape, pair_i, scores)
    s_j = ad.matmul(tape, pair_j, scores)
    logit = ad.scalar_mul(tape, ad.sub(tape, s_i, s_j), cfg.sigma)
    p = ad.clamp_unit_interval(tape, ad.sigmoid(tape, logit))
    ones = constant(np.ones_like(labels))
    pos = ad.mul(tape, ad.log(tape, p), constant(labels))
    neg = ad.mul(tape, ad.log(tape, ad.sub(tape, ones, p)), constant(1.0 - labels))
    return ad.scalar_mul(tape, ad.reduce_sum(tape, ad.add(tape, pos, neg)), -1.0)


def commit_loss(tape: Tape | None, batch: _CommitBatch, params: NetworkParams,
                cfg: ModelConfig) -> Tensor | None:
    """Summed pair cross-entropy of one commit; None when it has no pairs."""
    if not batch.pairs:
        return None
    scores = _deleted_scores(tape, batch, params, cfg)
    return _pair_loss_from_scores(tape, scores, batch, cfg)


@dataclass
class TrainedModel:
    params: NetworkParams
    cfg: ModelConfig
    training_log: list[float]


def train(embedded: list[EmbeddedGraph], cfg: ModelConfig,
          params: NetworkParams | None = None,
          on_epoch=None) -> TrainedModel:
    """Deterministic pairwise training over a list of embedded commits.

    Commits are visited in a seeded shuffled order each epoch; every
    commit with at least one pair contributes one optimizer step (or one
    step per pair with ``cfg.step_per_pair``).  ``on_epoch(epoch, loss)``
    is called after each epoch with the mean per-commit loss.
    """
    cfg.validate()
    for eg in embedded:
        if eg.h0.shape[1] != cfg.dim:
            raise ValueError(
                f"commit {eg.graph.commit_id!r}: embedding dim {eg.h0.shape[1]} != model dim {cfg.dim}"
            )
        if not eg.graph.root_cause_ids():
            raise ValueError(f"commit {eg.graph.commit_id!r} has no root-cause label")

    if params is None:
        params = init_network_params(cfg, np.random.default_rng(cfg.seed))
    tensors = [t for _name, t in named_tensors(params)]
    adam = AdamState.for_params(tensors)
    batches = [_prepare(eg, cfg) for eg in embedded]
    rng = np.random.default_rng(cfg.seed)

    log: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(batches))
        losses = []
        for idx in order:
            batch = batches[idx]
            if not batch.pairs:
                continue
            try:
                if cfg.step_per_pair:
                    total = 0.0
                    for row in range(len(batch.pairs)):
                        tape = Tape()
                        scores = _deleted_scores(tape, batch, params, cfg)
                        loss = _pair_loss_from_scores(
                            tape, scores, batch, cfg, subset=slice(row, row + 1))
                        grads = ad.backward(tape, loss)
                        adam.step(tensors, [grads[t] for t in tensors], cfg.lr)
                        total += loss.item()
                    losses.append(total)
                else:
                    tape = Tape()
                    loss = commit_loss(tape, batch, params, cfg)
                    grads = ad.backward(tape, loss)
                    adam.step(tensors, [grads[t] for t in tensors], cfg.lr)
                    losses.append(loss.item())
            except FloatingPointError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, commit {batch.graph.commit_id!r}: {exc}"
                ) from exc
        mean_loss = float(np.mean(losses)) if losses else 0.0
        log.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return TrainedModel(params=params, cfg=cfg, training_log=log)


def gradient_check_full_loss(dim: int = 8, heads: int = 2, layers: int = 1,
                             proj_dim: int = 4, seed: int = 42,
                             h: float = 1e-5) -> float:
    """Max relative error of tape gradients vs central differences.

    Runs the whole pipeline loss (attention, gating, normalization,
    projection, scoring, pair cross-entropy) on a fixed 4-node graph
    with mixed edge kinds and seeded random parameters, checking every
    learnable tensor.
    """
    cfg = ModelConfig(dim=dim, heads=heads, layers=layers, proj_dim=proj_dim, seed=seed)
    cfg.validate()
    rng = np.random.default_rng(seed)
    graph = CommitGraph(
        commit_id="gradcheck",
        nodes=(
            LineNode(0, NodeKind.DELETED, text="a", is_root_cause=True),
            LineNode(1, NodeKind.DELETED, text="b"),
            LineNode(2, NodeKind.ADDED, text="c"),
            LineNode(3, NodeKind.ADDED, text="d"),
        ),
        edges=(
            DepEdge(0, 1, EdgeKind.CONTROL_FLOW),
            DepEdge(2, 0, EdgeKind.DATA_DEPENDENCY),
            DepEdge(3, 0, EdgeKind.CALL),
            DepEdge(1, 0, EdgeKind.CLASS_MEMBER_REF),
            DepEdge(0, 2, EdgeKind.LINE_MAPPING),
            DepEdge(3, 1, EdgeKind.DATA_DEPENDENCY),
        ),
    )
    h0 = rng.normal(size=(4, dim))
    eg = EmbeddedGraph(graph=graph, h0=h0)
    params = init_network_params(cfg, rng, random_scorer=True)
    batch = _prepare(eg, cfg)
    tensors = [t for _name, t in named_tensors(params)]

    def loss_fn(tape, _params):
        return commit_loss(tape, batch, params, cfg)

    return ad.grad_check(loss_fn, tensors, h=h)


def rank_commit(model: TrainedModel, eg: EmbeddedGraph) -> list[tuple[int, float]]:
    """Deleted nodes of one commit, highest score first, ties by node id."""
    g = eg.graph
    deleted = g.deleted_ids()
    if not deleted:
        raise ValueError(f"commit {g.commit_id!r} has no deleted lines")
    if eg.h0.shape[1] != model.cfg.dim:
        raise ValueError(
            f"commit {g.commit_id!r}: embedding dim {eg.h0.shape[1]} != model dim {model.cfg.dim}"
        )
    plan = build_plan(g, model.cfg.dim, model.cfg.heads)
    embeddings = network_forward(None, constant(eg.h0), plan, model.params, model.cfg.mode)
    scored = [(node_id, score(embeddings.data[node_id], model.params)) for node_id in deleted]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored
