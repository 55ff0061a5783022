"""Hierarchical GNN over a reasoning KG.

Layer 0 is an input projection (dense -> BatchNorm -> ELU over every node row).
Layers ``1..d+1`` are hierarchical: dense over all nodes, Hadamard messages
``X_s * X_d`` along the edges that end on level ``l``, mean aggregation into
those destinations with pass-through for every other row, then BatchNorm and
ELU. The reasoning embedding is the embedding-node row of the last layer.

Two code paths exist on purpose. The functions ``dense``/``message_pass``/
``aggregate``/``gnn_layer``/``forward`` work on one frame with plain numpy and
per-edge dictionaries. ``GraphPlan`` + ``forward_tape`` are the batched,
differentiable version used for training and adaptation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .embedding_space import TokenEmbeddingTable, node_embedding, pooled_rows
from .kg_model import CONCEPT, Edge, ReasoningKG, edge_set

BN_EPS = 1e-5


class DimensionMismatch(ValueError):
    pass


class DepthMismatch(ValueError):
    pass


class MissingMessage(KeyError):
    pass


@dataclass
class NodeActivations:
    ids: list[str]
    X: np.ndarray
    level: int = 0

    def row(self, node_id: str) -> np.ndarray:
        return self.X[self.ids.index(node_id)]


@dataclass
class GnnLayerParams:
    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator) -> GnnLayerParams:
        return cls(
            W=rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)),
            b=np.zeros(d_out),
            gamma=np.ones(d_out),
            beta=np.zeros(d_out),
            running_mean=np.zeros(d_out),
            running_var=np.ones(d_out),
        )


@dataclass
class GnnStack:
    """``layers[0]`` is the input projection, ``layers[l]`` serves edge set E^(l)."""

    layers: list[GnnLayerParams]
    mode: str = "train"

    @classmethod
    def init(cls, depth: int, d_in: int, dims: int | Sequence[int] = 8, seed: int = 0) -> GnnStack:
        n = depth + 2
        if isinstance(dims, int):
            dims = [dims] * n
        if len(dims) != n:
            raise DepthMismatch(f"need {n} layer widths, got {len(dims)}")
        rng = np.random.default_rng(seed)
        layers, prev = [], d_in
        for d in dims:
            layers.append(GnnLayerParams.init(prev, d, rng))
            prev = d
        return cls(layers)

    @property
    def depth(self) -> int:
        return len(self.layers) - 2

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.layers):
            out[f"{i}.W"], out[f"{i}.b"] = p.W, p.b
            out[f"{i}.gamma"], out[f"{i}.beta"] = p.gamma, p.beta
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.layers):
            out[f"{i}.running_mean"], out[f"{i}.running_var"] = p.running_mean, p.running_var
        return out


# --- single-frame reference path -------------------------------------------------


def init_activations(kg: ReasoningKG, table: TokenEmbeddingTable, frame_vec) -> NodeActivations:
    frame_vec = np.asarray(frame_vec, dtype=np.float64)
    if frame_vec.shape != (table.dim,):
        raise DimensionMismatch(f"frame has shape {frame_vec.shape}, expected ({table.dim},)")
    nodes = kg.ordered_nodes()
    X = np.zeros((len(nodes), table.dim))
    for i, n in enumerate(nodes):
        if n.id == kg.sensor_id:
            X[i] = frame_vec
        elif n.kind == CONCEPT:
            X[i] = node_embedding(n, table)
    return NodeActivations([n.id for n in nodes], X, 0)


def dense(params: GnnLayerParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.W.shape[1]:
        raise DimensionMismatch(f"input width {X.shape[-1]} != {params.W.shape[1]}")
    return X @ params.W.T + params.b


def message_pass(kg: ReasoningKG, level: int, acts: NodeActivations) -> dict[Edge, np.ndarray]:
    pos = {nid: i for i, nid in enumerate(acts.ids)}
    return {e: acts.X[pos[e.src]] * acts.X[pos[e.dst]] for e in edge_set(kg, level)}


def aggregate(kg: ReasoningKG, level: int, acts: NodeActivations, messages: Mapping[Edge, np.ndarray]) -> NodeActivations:
    edges = edge_set(kg, level)
    for e in edges:
        if e not in messages:
            raise MissingMessage(e)
    incoming: dict[str, list[np.ndarray]] = {}
    for e in edges:
        incoming.setdefault(e.dst, []).append(messages[e])
    X = acts.X.copy()
    for i, nid in enumerate(acts.ids):
        if nid in incoming:
            X[i] = np.sum(incoming[nid], axis=0) / len(incoming[nid])
    return NodeActivations(list(acts.ids), X, level)


def receiving_rows(kg: ReasoningKG, level: int, ids: Sequence[str]) -> np.ndarray:
    """Boolean mask of rows that receive at least one message at ``level`` (V^(l))."""
    dst = {e.dst for e in edge_set(kg, level)}
    return np.array([nid in dst for nid in ids])


def batch_norm(params: GnnLayerParams, X: np.ndarray, rows: np.ndarray, train: bool, update: bool = True) -> np.ndarray:
    """Per-feature normalisation. Train mode: statistics over ``X[..., rows, :]``."""
    if train:
        sel = X[..., rows, :].reshape(-1, X.shape[-1])
        mu, var = sel.mean(axis=0), sel.var(axis=0)
        if update:
            m = params.momentum
            params.running_mean[:] = (1 - m) * params.running_mean + m * mu
            params.running_var[:] = (1 - m) * params.running_var + m * var
    else:
        mu, var = params.running_mean, params.running_var
    return (X - mu) / np.sqrt(var + BN_EPS) * params.gamma + params.beta


def elu(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def gnn_layer(
    params: GnnLayerParams,
    kg: ReasoningKG,
    level: int,
    acts: NodeActivations,
    mode: str = "eval",
    update_stats: bool = True,
) -> NodeActivations:
    h = NodeActivations(list(acts.ids), dense(params, acts.X), level)
    if level == 0:
        rows = np.ones(len(h.ids), dtype=bool)
        y = h.X
    else:
        y = aggregate(kg, level, h, message_pass(kg, level, h)).X
        rows = receiving_rows(kg, level, h.ids)
    z = batch_norm(params, y, rows, mode == "train", update_stats)
    return NodeActivations(list(acts.ids), elu(z), level)


def forward(stack: GnnStack, kg: ReasoningKG, table: TokenEmbeddingTable, frame_vec, update_stats: bool = True) -> np.ndarray:
    if stack.depth != kg.depth:
        raise DepthMismatch(f"stack built for depth {stack.depth}, graph has depth {kg.depth}")
    acts = init_activations(kg, table, frame_vec)
    for level, params in enumerate(stack.layers):
        acts = gnn_layer(params, kg, level, acts, stack.mode, update_stats)
    return acts.row(kg.embedding_id)


def concat_reasoning(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ValueError("need at least one reasoning embedding")
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


# --- batched differentiable path ----------------------------------------------------


@dataclass
class GraphPlan:
    """Dense matrices describing one KG snapshot for the batched forward."""

    ids: list[str]
    nodes: list = field(repr=False)
    sensor_row: int
    embedding_row: int
    adjacency: list[np.ndarray]  # per level: row-normalised in-adjacency restricted to E^(l)
    receive: list[np.ndarray]  # per level: (|V|, 1) float mask of V^(l)

    @classmethod
    def build(cls, kg: ReasoningKG) -> GraphPlan:
        nodes = kg.ordered_nodes()
        ids = [n.id for n in nodes]
        pos = {nid: i for i, nid in enumerate(ids)}
        V = len(ids)
        adjacency = [np.zeros((V, V))]
        receive = [np.ones((V, 1))]
        for level in range(1, kg.depth + 2):
            A = np.zeros((V, V))
            for e in edge_set(kg, level):
                A[pos[e.dst], pos[e.src]] = 1.0
            deg = A.sum(axis=1, keepdims=True)
            has = deg[:, 0] > 0
            A[has] /= deg[has]
            adjacency.append(A)
            receive.append(has.astype(np.float64)[:, None])
        pooled = [n if n.kind == CONCEPT else None for n in nodes]
        return cls(ids, pooled, pos[kg.sensor_id], pos[kg.embedding_id], adjacency, receive)


def forward_tape(
    stack: GnnStack,
    plan: GraphPlan,
    table_t: ad.Tensor,
    frames: ad.Tensor,
    param_t: Mapping[str, ad.Tensor],
    train: bool,
    update_stats: bool = False,
) -> ad.Tensor:
    """Batched forward: ``frames`` is (B, D_emb); returns (B, D_final).

    ``param_t`` maps the names of ``stack.params()`` to tensors. BatchNorm in
    train mode pools statistics over every frame in the batch and every row
    in V^(l).
    """
    B = frames.shape[0]
    V = len(plan.ids)
    concept_rows = pooled_rows(plan.nodes, table_t)  # (V, D_emb), zero terminal rows
    sensor = np.zeros((V, 1))
    sensor[plan.sensor_row] = 1.0
    X = ad.add(ad.mul(ad.reshape(frames, (B, 1, -1)), sensor), concept_rows)
    for level, params in enumerate(stack.layers):
        W, b = param_t[f"{level}.W"], param_t[f"{level}.b"]
        H = ad.add(ad.matmul(X, ad.transpose(W, (1, 0))), b)
        m = plan.receive[level]
        if level == 0:
            Y = H
        else:
            G = ad.matmul(plan.adjacency[level], H)
            Y = ad.add(ad.mul(H, 1.0 - m), ad.mul(ad.mul(H, G), m))
        if train:
            n = B * float(m.sum())
            mu = ad.mul(ad.sum(ad.mul(Y, m), axis=(0, 1)), 1.0 / n)
            Yc = ad.sub(Y, mu)
            var = ad.mul(ad.sum(ad.mul(ad.mul(Yc, Yc), m), axis=(0, 1)), 1.0 / n)
            if update_stats:
                mom = params.momentum
                params.running_mean[:] = (1 - mom) * params.running_mean + mom * mu.data
                params.running_var[:] = (1 - mom) * params.running_var + mom * var.data
            Z = ad.mul(Yc, ad.power(ad.add(var, BN_EPS), -0.5))
        else:
            Z = ad.mul(ad.sub(Y, params.running_mean), 1.0 / np.sqrt(params.running_var + BN_EPS))
        X = ad.elu(ad.add(ad.mul(Z, param_t[f"{level}.gamma"]), param_t[f"{level}.beta"]))
    out = ad.transpose(X, (1, 0, 2))  # (V, B, D)
    return ad.reshape(ad.take(out, [plan.embedding_row]), (B, -1))
