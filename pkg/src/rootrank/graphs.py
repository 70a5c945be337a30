"""Heterogeneous commit-graph data model and dataset I/O.

A bug-fixing commit is modelled as a directed graph whose nodes are the
deleted and added source lines of the commit and whose edges are typed
program dependencies between those lines.  Deleted lines may be labelled
as the root cause of the bug the commit fixes; the rest of the pipeline
learns to rank them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the on-disk schema or an invariant."""


class NodeKind(Enum):
    DELETED = "deleted"
    ADDED = "added"

    @property
    def ordinal(self) -> int:
        return _NODE_ORDINALS[self]


class EdgeKind(Enum):
    CONTROL_FLOW = "control_flow"
    DATA_DEPENDENCY = "data_dependency"
    CALL = "call"
    CLASS_MEMBER_REF = "class_member_ref"
    LINE_MAPPING = "line_mapping"

    @property
    def ordinal(self) -> int:
        return _EDGE_ORDINALS[self]


_NODE_ORDINALS = {k: i for i, k in enumerate(NodeKind)}
_EDGE_ORDINALS = {k: i for i, k in enumerate(EdgeKind)}

NUM_NODE_KINDS = len(NodeKind)
NUM_EDGE_KINDS = len(EdgeKind)


@dataclass(frozen=True)
class LineNode:
    """One source line of a commit.

    ``embedding`` optionally carries a precomputed semantic vector from the
    dataset file; when present it takes precedence over ``text`` during
    embedding.
    """

    id: int
    kind: NodeKind
    text: str | None = None
    is_root_cause: bool = False
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True)
class DepEdge:
    """Directed dependency edge between two line nodes."""

    src: int
    dst: int
    kind: EdgeKind


@dataclass(frozen=True)
class CommitGraph:
    commit_id: str
    nodes: tuple[LineNode, ...]
    edges: tuple[DepEdge, ...]
    timestamp: int | None = None

    def node(self, node_id: int) -> LineNode:
        if not 0 <= node_id < len(self.nodes):
            raise KeyError(f"graph {self.commit_id!r} has no node {node_id}")
        return self.nodes[node_id]

    def deleted_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.DELETED]

    def root_cause_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_root_cause]


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[CommitGraph, ...]
    name: str = ""

    def __len__(self) -> int:
        return len(self.graphs)


def validate_graph(g: CommitGraph, require_root_cause: bool = True) -> list[str]:
    """Check every structural invariant of a commit graph.

    Returns an empty list when the graph is well formed, otherwise one
    human-readable violation per problem.  Pure: never raises, never
    mutates.  ``require_root_cause=False`` admits unlabeled graphs for
    inference-only use.
    """
    violations: list[str] = []
    n = len(g.nodes)

    for i, node in enumerate(g.nodes):
        if node.id != i:
            violations.append(
                f"node ids must be dense 0..{n - 1} in order; position {i} has id {node.id}"
            )
        if node.is_root_cause and node.kind is not NodeKind.DELETED:
            violations.append(f"node {node.id} is_root_cause=true but kind is {node.kind.value}")

    if not any(node.kind is NodeKind.DELETED for node in g.nodes):
        violations.append("no deleted lines")
    if require_root_cause and not any(node.is_root_cause for node in g.nodes):
        violations.append("no root-cause label")

    seen: set[tuple[int, int, EdgeKind]] = set()
    for e in g.edges:
        if e.src == e.dst:
            violations.append(f"self-reference edge on node {e.src}")
            continue
        missing = [v for v in (e.src, e.dst) if not 0 <= v < n]
        if missing:
            for v in missing:
                violations.append(f"edge references missing node {v}")
            continue
        key = (e.src, e.dst, e.kind)
        if key in seen:
            violations.append(
                f"duplicate edge ({e.src}, {e.dst}, {e.kind.value})"
            )
        seen.add(key)
        if e.kind is EdgeKind.LINE_MAPPING:
            if g.nodes[e.src].kind is not NodeKind.DELETED or g.nodes[e.dst].kind is not NodeKind.ADDED:
                violations.append(
                    f"line_mapping edge ({e.src}, {e.dst}) must run deleted -> added"
                )
    return violations


def neighbors_in(g: CommitGraph, t: int) -> list[tuple[int, EdgeKind]]:
    """All (source, kind) pairs of edges pointing at node ``t``.

    Sorted ascending by (source id, edge kind ordinal) so downstream
    aggregation order is deterministic.
    """
    if not 0 <= t < len(g.nodes):
        raise KeyError(f"graph {g.commit_id!r} has no node {t}")
    incoming = [(e.src, e.kind) for e in g.edges if e.dst == t]
    incoming.sort(key=lambda item: (item[0], item[1].ordinal))
    return incoming


# ---------------------------------------------------------------------------
# On-disk schema


_NODE_FIELDS = {"id", "kind", "text", "is_root_cause", "embedding"}
_EDGE_FIELDS = {"src", "dst", "kind"}
_GRAPH_FIELDS = {"commit_id", "timestamp", "nodes", "edges"}
_TOP_FIELDS = {"name", "graphs"}

_NODE_KIND_BY_NAME = {k.value: k for k in NodeKind}
_EDGE_KIND_BY_NAME = {k.value: k for k in EdgeKind}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise DatasetFormatError(f"{where}: unknown field(s) {sorted(unknown)}")


def _parse_node(raw: object, where: str) -> LineNode:
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{where}: node must be an object")
    _reject_unknown(raw, _NODE_FIELDS, where)
    if not isinstance(raw.get("id"), int) or isinstance(raw.get("id"), bool):
        raise DatasetFormatError(f"{where}: field 'id' must be an integer")
    kind_name = raw.get("kind")
    if kind_name not in _NODE_KIND_BY_NAME:
        raise DatasetFormatError(
            f"{where}: field 'kind' must be one of {sorted(_NODE_KIND_BY_NAME)}, got {kind_name!r}"
        )
    text = raw.get("text")
    if text is not None and not isinstance(text, str):
        raise DatasetFormatError(f"{where}: field 'text' must be a string or null")
    rc = raw.get("is_root_cause", False)
    if not isinstance(rc, bool):
        raise DatasetFormatError(f"{where}: field 'is_root_cause' must be a boolean")
    emb = raw.get("embedding")
    if emb is not None:
        if not isinstance(emb, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in emb
        ):
            raise DatasetFormatError(f"{where}: field 'embedding' must be a list of numbers or null")
        emb = tuple(float(x) for x in emb)
    return LineNode(
        id=raw["id"],
        kind=_NODE_KIND_BY_NAME[kind_name],
        text=text,
        is_root_cause=rc,
        embedding=emb,
    )


def _parse_edge(raw: object, where: str) -> DepEdge:
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{where}: edge must be an object")
    _reject_unknown(raw, _EDGE_FIELDS, where)
    for f in ("src", "dst"):
        if not isinstance(raw.get(f), int) or isinstance(raw.get(f), bool):
            raise DatasetFormatError(f"{where}: field {f!r} must be an integer")
    kind_name = raw.get("kind")
    if kind_name not in _EDGE_KIND_BY_NAME:
        raise DatasetFormatError(
            f"{where}: field 'kind' must be one of {sorted(_EDGE_KIND_BY_NAME)}, got {kind_name!r}"
        )
    return DepEdge(src=raw["src"], dst=raw["dst"], kind=_EDGE_KIND_BY_NAME[kind_name])


def _parse_graph(raw: object, index: int) -> CommitGraph:
    where = f"graphs[{index}]"
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{where}: graph must be an object")
    _reject_unknown(raw, _GRAPH_FIELDS, where)
    commit_id = raw.get("commit_id")
    if not isinstance(commit_id, str) or not commit_id:
        raise DatasetFormatError(f"{where}: field 'commit_id' must be a non-empty string")
    where = f"commit {commit_id!r}"
    ts = raw.get("timestamp")
    if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
        raise DatasetFormatError(f"{where}: field 'timestamp' must be an integer or null")
    nodes_raw = raw.get("nodes")
    edges_raw = raw.get("edges")
    if not isinstance(nodes_raw, list) or not isinstance(edges_raw, list):
        raise DatasetFormatError(f"{where}: fields 'nodes' and 'edges' must be lists")
    nodes = tuple(_parse_node(nr, f"{where} node[{i}]") for i, nr in enumerate(nodes_raw))
    edges = tuple(_parse_edge(er, f"{where} edge[{i}]") for i, er in enumerate(edges_raw))
    return CommitGraph(commit_id=commit_id, nodes=nodes, edges=edges, timestamp=ts)


def load_dataset(path: str | Path, require_root_cause: bool = True) -> Dataset:
    """Load and validate a dataset file.

    Raises :class:`DatasetFormatError` on any schema or invariant
    violation, naming the offending commit and field.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: not valid JSON: {exc}") from exc

    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{path}: top level must be an object")
    _reject_unknown(raw, _TOP_FIELDS, str(path))
    name = raw.get("name")
    if not isinstance(name, str):
        raise DatasetFormatError(f"{path}: field 'name' must be a string")
    graphs_raw = raw.get("graphs")
    if not isinstance(graphs_raw, list):
        raise DatasetFormatError(f"{path}: field 'graphs' must be a list")

    graphs = tuple(_parse_graph(gr, i) for i, gr in enumerate(graphs_raw))

    seen_ids: set[str] = set()
    for g in graphs:
        if g.commit_id in seen_ids:
            raise DatasetFormatError(f"duplicate commit_id {g.commit_id!r}")
        seen_ids.add(g.commit_id)
        violations = validate_graph(g, require_root_cause=require_root_cause)
        if violations:
            raise DatasetFormatError(
                f"commit {g.commit_id!r}: " + "; ".join(violations)
            )
    return Dataset(graphs=graphs, name=name)


def dataset_to_dict(ds: Dataset) -> dict:
    """Serialize a dataset back to its JSON-schema dictionary form."""
    return {
        "name": ds.name,
        "graphs": [
            {
                "commit_id": g.commit_id,
                "timestamp": g.timestamp,
                "nodes": [
                    {
                        "id": n.id,
                        "kind": n.kind.value,
                        "text": n.text,
                        "is_root_cause": n.is_root_cause,
                        "embedding": list(n.embedding) if n.embedding is not None else None,
                    }
                    for n in g.nodes
                ],
                "edges": [
                    {"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in g.edges
                ],
            }
            for g in ds.graphs
        ],
    }


def save_dataset(ds: Dataset, path: str | Path) -> None:
    payload = json.dumps(dataset_to_dict(ds), indent=1)
    Path(path).write_text(payload + "\n", encoding="utf-8")
