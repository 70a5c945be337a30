"""Ranking metrics and experiment harnesses.

Metrics treat each commit's deleted lines as one ranked list with a set
of true root-cause lines; dataset-level numbers pool over commits.
The harness side covers seeded or chronological k-fold cross-validation
and fixed train/test splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddedGraph, EmbeddingProvider, embed_dataset
from .graphs import Dataset
from .network import ModelConfig
from .ranker import TrainedModel, rank_commit, train


@dataclass(frozen=True)
class CommitRanking:
    commit_id: str
    ranked: tuple[int, ...]
    truth: frozenset[int]

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError(f"commit {self.commit_id!r}: ranked list has duplicates")
        if not self.truth <= set(self.ranked):
            raise ValueError(f"commit {self.commit_id!r}: truth nodes missing from ranking")


def ranking_for(model: TrainedModel, eg: EmbeddedGraph) -> CommitRanking:
    ranked = tuple(node_id for node_id, _score in rank_commit(model, eg))
    return CommitRanking(
        commit_id=eg.graph.commit_id,
        ranked=ranked,
        truth=frozenset(eg.graph.root_cause_ids()),
    )


def recall_at_n(rankings: list[CommitRanking], n: int) -> float:
    """Pooled fraction of truth lines appearing in the top n of their commit."""
    if not rankings:
        raise ValueError("recall_at_n of an empty ranking list")
    if n < 1:
        raise ValueError("n must be >= 1")
    hits = sum(len(set(r.ranked[:n]) & r.truth) for r in rankings)
    total = sum(len(r.truth) for r in rankings)
    if total == 0:
        raise ValueError("no truth lines in any commit")
    return hits / total


def first_rank(r: CommitRanking) -> int:
    """1-based position of the best-placed truth line."""
    if not r.truth:
        raise ValueError(f"commit {r.commit_id!r} has no truth lines")
    for pos, node_id in enumerate(r.ranked, start=1):
        if node_id in r.truth:
            return pos
    raise ValueError(f"commit {r.commit_id!r}: truth not present in ranking")


def mfr(rankings: list[CommitRanking], first_only: bool = True) -> float:
    """Mean rank of truth lines.

    Default: mean over commits of each commit's best truth position.
    ``first_only=False`` pools the positions of all truth lines instead.
    """
    if not rankings:
        raise ValueError("mfr of an empty ranking list")
    if first_only:
        return float(np.mean([first_rank(r) for r in rankings]))
    positions = []
    for r in rankings:
        if not r.truth:
            raise ValueError(f"commit {r.commit_id!r} has no truth lines")
        index = {node_id: pos for pos, node_id in enumerate(r.ranked, start=1)}
        positions.extend(index[t] for t in sorted(r.truth))
    return float(np.mean(positions))


def classification_at_k(rankings: list[CommitRanking], k: int) -> tuple[float, float, float]:
    """Precision, recall and F1 when the top k lines are predicted positive."""
    if not rankings:
        raise ValueError("classification_at_k of an empty ranking list")
    tp = fp = fn = 0
    for r in rankings:
        top = set(r.ranked[:k])
        tp += len(top & r.truth)
        fp += len(top - r.truth)
        fn += len(r.truth - top)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    mfr: float
    per_commit_first_rank: list[int]
    classification: dict[int, tuple[float, float, float]] | None = None

    def to_dict(self) -> dict:
        out = {f"recall@{n}": v for n, v in sorted(self.recall_at.items())}
        out["mfr"] = self.mfr
        if self.classification is not None:
            for k, (p, r, f1) in sorted(self.classification.items()):
                out[f"precision@{k}"] = p
                out[f"recall_cls@{k}"] = r
                out[f"f1@{k}"] = f1
        return out


def evaluate_rankings(rankings: list[CommitRanking], ns=(1, 2, 3),
                      with_classification: bool = False,
                      mfr_first_only: bool = True) -> EvalReport:
    report = EvalReport(
        recall_at={n: recall_at_n(rankings, n) for n in ns},
        mfr=mfr(rankings, first_only=mfr_first_only),
        per_commit_first_rank=[first_rank(r) for r in rankings],
    )
    if with_classification:
        report.classification = {k: classification_at_k(rankings, k) for k in ns}
    return report


def evaluate_model(model: TrainedModel, embedded: list[EmbeddedGraph],
                   with_classification: bool = False,
                   mfr_first_only: bool = True) -> EvalReport:
    rankings = [ranking_for(model, eg) for eg in embedded]
    return evaluate_rankings(rankings, with_classification=with_classification,
                             mfr_first_only=mfr_first_only)


# ---------------------------------------------------------------------------
# Experiment harnesses


def kfold_split(ds: Dataset, k: int = 10, seed: int = 0,
                chronological: bool = False) -> list[list[str]]:
    """Partition commit ids into k folds differing in size by at most one.

    Seeded shuffle + round robin by default.  Chronological mode sorts
    by timestamp and cuts contiguous folds instead; it requires a
    timestamp on every graph.
    """
    if len(ds.graphs) < k:
        raise ValueError(f"need at least {k} graphs for {k}-fold split, have {len(ds.graphs)}")
    if k < 2:
        raise ValueError("k must be >= 2")
    ids = [g.commit_id for g in ds.graphs]
    if chronological:
        missing = [g.commit_id for g in ds.graphs if g.timestamp is None]
        if missing:
            raise ValueError(f"chronological split needs timestamps; missing on {missing[:3]}")
        ids = [g.commit_id for g in sorted(ds.graphs, key=lambda g: (g.timestamp, g.commit_id))]
        folds: list[list[str]] = []
        base, extra = divmod(len(ids), k)
        start = 0
        for i in range(k):
            size = base + (1 if i < extra else 0)
            folds.append(ids[start:start + size])
            start += size
        return folds
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(ids[int(idx)])
    return folds


def mean_report(reports: list[EvalReport]) -> EvalReport:
    if not reports:
        raise ValueError("no reports to average")
    ns = sorted(reports[0].recall_at)
    merged = EvalReport(
        recall_at={n: float(np.mean([r.recall_at[n] for r in reports])) for n in ns},
        mfr=float(np.mean([r.mfr for r in reports])),
        per_commit_first_rank=[fr for r in reports for fr in r.per_commit_first_rank],
    )
    if all(r.classification is not None for r in reports):
        merged.classification = {
            k: tuple(float(np.mean([r.classification[k][i] for r in reports])) for i in range(3))
            for k in sorted(reports[0].classification)
        }
    return merged


def train_test_report(train_embedded: list[EmbeddedGraph],
                      test_embedded: list[EmbeddedGraph],
                      cfg: ModelConfig,
                      with_classification: bool = False) -> EvalReport:
    """Train on one split, evaluate on the other (cross-project protocol)."""
    model = train(train_embedded, cfg)
    return evaluate_model(model, test_embedded, with_classification=with_classification)


def cross_validate(ds: Dataset, cfg: ModelConfig, provider: EmbeddingProvider,
                   k: int = 10, seed: int | None = None,
                   chronological: bool = False,
                   with_classification: bool = False) -> tuple[EvalReport, list[EvalReport]]:
    """k-fold protocol: train on k-1 folds, evaluate on the held-out fold, average."""
    if seed is None:
        seed = cfg.seed
    embedded = embed_dataset(ds, provider)
    by_id = {eg.graph.commit_id: eg for eg in embedded}
    folds = kfold_split(ds, k=k, seed=seed, chronological=chronological)
    reports = []
    for fold in folds:
        held = set(fold)
        train_part = [eg for eg in embedded if eg.graph.commit_id not in held]
        test_part = [by_id[cid] for cid in fold]
        reports.append(train_test_report(train_part, test_part, cfg,
                                         with_classification=with_classification))
    return mean_report(reports), reports


def report_json(report: EvalReport, per_fold: list[EvalReport] | None = None) -> str:
    payload = report.to_dict()
    if per_fold is not None:
        payload["per_fold"] = [r.to_dict() for r in per_fold]
    return json.dumps(payload, indent=1)


def multi_report_table(labels: list[str], reports: list[EvalReport]) -> str:
    """Aligned text table, one row per report."""
    if len(labels) != len(reports) or not reports:
        raise ValueError("one label per report required")
    ns = sorted(reports[0].recall_at)
    headers = ["approach"] + [f"Recall@{n}" for n in ns] + ["MFR"]
    rows = [
        [label] + [f"{r.recall_at[n]:.3f}" for n in ns] + [f"{r.mfr:.3f}"]
        for label, r in zip(labels, reports)
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.extend("  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)


def report_table(report: EvalReport, label: str = "model") -> str:
    """Aligned text table with a single row."""
    return multi_report_table([label], [report])
