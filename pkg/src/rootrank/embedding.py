"""Initial semantic vectors for line nodes.

Providers turn a line of source text into a fixed-length float vector.
The default provider is a deterministic feature-hashing embedder; nodes
that carry a precomputed ``embedding`` in the dataset file bypass the
provider entirely.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .graphs import CommitGraph, Dataset

# FNV-1a 64-bit, with the offset basis xored against a fixed seed so the
# hash family is ours.  Recorded here so embeddings are reproducible
# across machines and releases.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_HASH_SEED = 0x5EED1E5C0DE11AE5
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET ^ _HASH_SEED
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_hash(text: str, dim: int) -> np.ndarray:
    """Deterministic feature-hashing embedding of one line of code.

    Tokenizes on non-alphanumeric boundaries, hashes token unigrams and
    adjacent bigrams into ``dim`` signed buckets, and scales the result
    to unit Euclidean norm.  A line with no tokens embeds to the zero
    vector.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    tokens = _TOKEN_RE.findall(text)
    vec = np.zeros(dim, dtype=np.float64)
    features = tokens + [f"{a}\x1f{b}" for a, b in zip(tokens, tokens[1:])]
    for feat in features:
        h = _fnv1a(feat.encode("utf-8"))
        sign = 1.0 if h & (1 << 63) else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


class EmbeddingProvider(Protocol):
    def dim(self) -> int: ...

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class HashingEmbedder:
    """Feature-hashing provider; ``dimension`` defaults to desk scale."""

    dimension: int = 64

    def dim(self) -> int:
        return self.dimension

    def embed(self, text: str) -> np.ndarray:
        return embed_hash(text, self.dimension)


@dataclass(frozen=True)
class EmbeddedGraph:
    """A commit graph plus its n x D matrix of initial node vectors."""

    graph: CommitGraph
    h0: np.ndarray

    def __post_init__(self) -> None:
        if self.h0.shape[0] != len(self.graph.nodes):
            raise ValueError(
                f"commit {self.graph.commit_id!r}: {self.h0.shape[0]} embedding rows "
                f"for {len(self.graph.nodes)} nodes"
            )
        if not np.isfinite(self.h0).all():
            raise ValueError(f"commit {self.graph.commit_id!r}: non-finite embedding values")


def embed_graph(g: CommitGraph, provider: EmbeddingProvider) -> EmbeddedGraph:
    dim = provider.dim()
    h0 = np.zeros((len(g.nodes), dim), dtype=np.float64)
    for i, node in enumerate(g.nodes):
        if node.embedding is not None:
            if len(node.embedding) != dim:
                raise ValueError(
                    f"commit {g.commit_id!r} node {node.id}: precomputed embedding has "
                    f"length {len(node.embedding)}, expected {dim}"
                )
            h0[i] = node.embedding
        elif node.text is not None:
            h0[i] = provider.embed(node.text)
        else:
            raise ValueError(
                f"commit {g.commit_id!r} node {node.id}: neither text nor embedding"
            )
    return EmbeddedGraph(graph=g, h0=h0)


def embed_dataset(ds: Dataset, provider: EmbeddingProvider) -> list[EmbeddedGraph]:
    """Embed every graph, preserving graph and node order."""
    return [embed_graph(g, provider) for g in ds.graphs]


def detect_precomputed_dim(ds: Dataset) -> int | None:
    """Dimension of the dataset's precomputed embeddings, or None.

    Returns the shared length when every node carries one; raises if
    lengths are inconsistent.
    """
    dims = set()
    for g in ds.graphs:
        for node in g.nodes:
            if node.embedding is None:
                return None
            dims.add(len(node.embedding))
    if not dims:
        return None
    if len(dims) > 1:
        raise ValueError(f"inconsistent precomputed embedding lengths: {sorted(dims)}")
    return dims.pop()
