"""Network assembly: gated cross-line retention over stacked attention layers.

Each layer refreshes node states by attending over the commit graph and
then gating the aggregated neighborhood against the previous state with
a GRU cell, so line-local semantics learned early survive stacking.
After the last layer the states are layer-normalized and projected into
task embeddings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .aggregation import (
    AttentionParams,
    GraphPlan,
    attention_forward,
    init_attention_params,
)
from .autodiff import Tape, Tensor, constant
from .graphs import EdgeKind, NodeKind


class Mode(str, Enum):
    FULL = "full"
    AGGREGATION_ONLY = "aggregation-only"
    RETENTION_ONLY = "retention-only"


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 8
    layers: int = 2
    proj_dim: int | None = None
    mode: Mode = Mode.FULL
    include_tie_pairs: bool = False
    lr: float = 5e-6
    epochs: int = 50
    seed: int = 42
    sigma: float = 1.0
    step_per_pair: bool = False

    @property
    def out_dim(self) -> int:
        return self.dim if self.proj_dim is None else self.proj_dim

    def validate(self) -> None:
        if self.dim < 1 or self.heads < 1 or self.layers < 1 or self.out_dim < 1:
            raise ValueError("dim, heads, layers and proj_dim must be positive")
        if self.dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide dim ({self.dim})")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class GruParams:
    """Gate tensors; each weight right-multiplies row states, biases broadcast.

    ``*_r``: reset gate (how much history feeds the candidate state),
    ``*_z``: update gate (how much history survives unchanged),
    ``*_n``: candidate state.
    """

    w_ir: Tensor
    b_ir: Tensor
    w_hr: Tensor
    b_hr: Tensor
    w_iz: Tensor
    b_iz: Tensor
    w_hz: Tensor
    b_hz: Tensor
    w_in: Tensor
    b_in: Tensor
    w_hn: Tensor
    b_hn: Tensor


def init_gru_params(dim: int, rng: np.random.Generator) -> GruParams:
    bound = 1.0 / math.sqrt(dim)

    def w():
        return Tensor(rng.uniform(-bound, bound, size=(dim, dim)), requires_grad=True)

    def b():
        return Tensor(rng.uniform(-bound, bound, size=dim), requires_grad=True)

    return GruParams(
        w_ir=w(), b_ir=b(), w_hr=w(), b_hr=b(),
        w_iz=w(), b_iz=b(), w_hz=w(), b_hz=b(),
        w_in=w(), b_in=b(), w_hn=w(), b_hn=b(),
    )


@dataclass
class NetworkParams:
    layers: list[tuple[AttentionParams, GruParams]]
    norm_gain: Tensor
    norm_bias: Tensor
    w_proj: Tensor   # (D, D_out), right-multiplies row states
    b_proj: Tensor   # (D_out,)
    scorer_w: Tensor  # (D_out,)
    scorer_b: Tensor  # scalar


def init_network_params(cfg: ModelConfig, rng: np.random.Generator | None = None,
                        random_scorer: bool = False) -> NetworkParams:
    """Seeded parameter initialization.

    The scorer starts at zero by default: ranking only depends on the
    scorer's direction, and a zero start lets training set that
    direction without fighting random initial score noise.
    ``random_scorer=True`` draws it like any projection instead (used by
    gradient checking so every tensor gets a live gradient path).
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    layers = [
        (init_attention_params(cfg.dim, cfg.heads, rng), init_gru_params(cfg.dim, rng))
        for _ in range(cfg.layers)
    ]
    out_dim = cfg.out_dim
    proj_bound = math.sqrt(6.0 / (cfg.dim + out_dim))
    w_proj = Tensor(rng.uniform(-proj_bound, proj_bound, size=(cfg.dim, out_dim)), requires_grad=True)
    if random_scorer:
        scorer_bound = math.sqrt(6.0 / (out_dim + 1))
        scorer_w = Tensor(rng.uniform(-scorer_bound, scorer_bound, size=out_dim), requires_grad=True)
    else:
        scorer_w = Tensor(np.zeros(out_dim), requires_grad=True)
    return NetworkParams(
        layers=layers,
        norm_gain=Tensor(np.ones(cfg.dim), requires_grad=True),
        norm_bias=Tensor(np.zeros(cfg.dim), requires_grad=True),
        w_proj=w_proj,
        b_proj=Tensor(np.zeros(out_dim), requires_grad=True),
        scorer_w=scorer_w,
        scorer_b=Tensor(0.0, requires_grad=True),
    )


def gru_cell(tape: Tape | None, h_tilde: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One gated update, applied row-wise per node.

    r = sigma(h_tilde W_ir + b_ir + h_prev W_hr + b_hr)
    z = sigma(h_tilde W_iz + b_iz + h_prev W_hz + b_hz)
    n = tanh(h_tilde W_in + b_in + r * (h_prev W_hn + b_hn))
    out = (1 - z) * n + z * h_prev
    """
    if h_tilde.shape != h_prev.shape:
        raise ValueError(f"gru_cell: shapes differ: {h_tilde.shape} vs {h_prev.shape}")

    def affine(x, w, b):
        return ad.add(tape, ad.matmul(tape, x, w), b)

    r = ad.sigmoid(tape, ad.add(tape, affine(h_tilde, p.w_ir, p.b_ir), affine(h_prev, p.w_hr, p.b_hr)))
    z = ad.sigmoid(tape, ad.add(tape, affine(h_tilde, p.w_iz, p.b_iz), affine(h_prev, p.w_hz, p.b_hz)))
    n = ad.tanh(tape, ad.add(tape, affine(h_tilde, p.w_in, p.b_in),
                             ad.mul(tape, r, affine(h_prev, p.w_hn, p.b_hn))))
    keep = ad.mul(tape, z, h_prev)
    update = ad.mul(tape, ad.sub(tape, constant(np.ones(z.shape)), z), n)
    return ad.add(tape, update, keep)


def task_projection(tape: Tape | None, h_final: Tensor, params: NetworkParams) -> Tensor:
    """Row-wise affine map into the task space, then ReLU."""
    return ad.relu(tape, ad.add(tape, ad.matmul(tape, h_final, params.w_proj), params.b_proj))


def forward_states(tape: Tape | None, h0: Tensor, plan: GraphPlan,
                   params: NetworkParams, mode: Mode) -> list[Tensor]:
    """Node states H^0 .. H^L, before the final normalization."""
    states = [h0]
    h = h0
    for attn, gru in params.layers:
        if mode is Mode.FULL:
            h_tilde = attention_forward(tape, h, plan, attn)
            h = gru_cell(tape, h_tilde, h, gru)
        elif mode is Mode.AGGREGATION_ONLY:
            h = attention_forward(tape, h, plan, attn)
        elif mode is Mode.RETENTION_ONLY:
            h = gru_cell(tape, h, h, gru)
        else:  # pragma: no cover
            raise ValueError(f"unknown mode {mode}")
        states.append(h)
    return states


def network_forward(tape: Tape | None, h0: Tensor, plan: GraphPlan,
                    params: NetworkParams, mode: Mode = Mode.FULL) -> Tensor:
    """Task embeddings (n x D_out) for every node of one graph."""
    h_last = forward_states(tape, h0, plan, params, mode)[-1]
    normed = ad.layer_norm(tape, h_last, params.norm_gain, params.norm_bias)
    return task_projection(tape, normed, params)


# ---------------------------------------------------------------------------
# Named parameter traversal and checkpoints


def named_tensors(params: NetworkParams) -> list[tuple[str, Tensor]]:
    """Every learnable tensor with a stable name, in a fixed order."""
    out: list[tuple[str, Tensor]] = []
    for li, (attn, gru) in enumerate(params.layers):
        p = f"layer{li}.attn"
        for kind in NodeKind:
            out.append((f"{p}.w_k.{kind.value}", attn.w_k[kind]))
            out.append((f"{p}.b_k.{kind.value}", attn.b_k[kind]))
            out.append((f"{p}.w_q.{kind.value}", attn.w_q[kind]))
            out.append((f"{p}.b_q.{kind.value}", attn.b_q[kind]))
            out.append((f"{p}.w_v.{kind.value}", attn.w_v[kind]))
            out.append((f"{p}.b_v.{kind.value}", attn.b_v[kind]))
        for kind in EdgeKind:
            out.append((f"{p}.w_att.{kind.value}", attn.w_att[kind]))
        for kind in EdgeKind:
            out.append((f"{p}.w_msg.{kind.value}", attn.w_msg[kind]))
        out.append((f"{p}.mu", attn.mu))
        g = f"layer{li}.gru"
        out.append((f"{g}.w_ir", gru.w_ir))
        out.append((f"{g}.b_ir", gru.b_ir))
        out.append((f"{g}.w_hr", gru.w_hr))
        out.append((f"{g}.b_hr", gru.b_hr))
        out.append((f"{g}.w_iz", gru.w_iz))
        out.append((f"{g}.b_iz", gru.b_iz))
        out.append((f"{g}.w_hz", gru.w_hz))
        out.append((f"{g}.b_hz", gru.b_hz))
        out.append((f"{g}.w_in", gru.w_in))
        out.append((f"{g}.b_in", gru.b_in))
        out.append((f"{g}.w_hn", gru.w_hn))
        out.append((f"{g}.b_hn", gru.b_hn))
    out.append(("final_norm.gain", params.norm_gain))
    out.append(("final_norm.bias", params.norm_bias))
    out.append(("proj.w", params.w_proj))
    out.append(("proj.b", params.b_proj))
    out.append(("scorer.w", params.scorer_w))
    out.append(("scorer.b", params.scorer_b))
    return out


CHECKPOINT_FORMAT = "rootrank-checkpoint-v1"


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


def save_checkpoint(path: str | Path, params: NetworkParams, cfg: ModelConfig) -> None:
    """Write params + config as JSON; float64 values round-trip bit-exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "dim": cfg.dim,
        "heads": cfg.heads,
        "layers": cfg.layers,
        "proj_dim": cfg.out_dim,
        "mode": cfg.mode.value,
        "seed": cfg.seed,
        "sigma": cfg.sigma,
        "tensors": [
            {"name": name, "shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in named_tensors(params)
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, ModelConfig]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = ModelConfig(
        dim=payload["dim"],
        heads=payload["heads"],
        layers=payload["layers"],
        proj_dim=payload["proj_dim"],
        mode=Mode(payload["mode"]),
        seed=payload["seed"],
        sigma=payload["sigma"],
    )
    cfg.validate()
    params = init_network_params(cfg, np.random.default_rng(0))
    expected = named_tensors(params)
    stored = payload.get("tensors")
    if not isinstance(stored, list) or len(stored) != len(expected):
        raise CheckpointError(f"{path}: expected {len(expected)} tensors")
    for (name, tensor), entry in zip(expected, stored):
        if entry.get("name") != name:
            raise CheckpointError(f"{path}: tensor order mismatch: {entry.get('name')!r} != {name!r}")
        shape = tuple(entry["shape"])
        if shape != tensor.data.shape:
            raise CheckpointError(f"{path}: {name}: shape {shape} != {tensor.data.shape}")
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        if not np.isfinite(arr).all():
            raise CheckpointError(f"{path}: {name}: non-finite values")
        tensor.data = arr
    return params, cfg
