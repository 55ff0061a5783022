"""The deployable decision model: per-KG GNN stacks + temporal model + decision head.

Parameters are exposed as one flat name -> array mapping whose prefixes
define the parameter groups (``gnn``, ``temporal``, ``decision``,
``token_embeddings``). Arrays are shared, so optimizers update in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .embedding_space import TokenEmbeddingTable
from .kg_model import ReasoningKG
from .reasoning_gnn import GnnStack, GraphPlan, forward_tape
from .temporal_decision import DecisionHead, TemporalModel, head_logits_tape, softmax, temporal_tape

GROUPS = ("gnn", "temporal", "decision", "token_embeddings")
TOKENS = "token_embeddings"
CKPT_MAGIC = b"KGCKPT1\n"
CKPT_VERSION = 1


def group_of(name: str) -> str:
    if name == TOKENS:
        return TOKENS
    head = name.split(".", 1)[0]
    return "gnn" if head.startswith("gnn") else head


@dataclass
class DecisionModel:
    kgs: list[ReasoningKG]
    stacks: list[GnnStack]
    temporal: TemporalModel
    head: DecisionHead
    table: TokenEmbeddingTable
    _plans: list[GraphPlan | None] = field(default_factory=list, repr=False)

    @classmethod
    def create(
        cls,
        kgs: Sequence[ReasoningKG],
        table: TokenEmbeddingTable,
        n_anomalies: int = 1,
        gnn_dim: int = 8,
        window: int = 3,
        model_dim: int = 128,
        heads: int = 8,
        blocks: int = 1,
        ffn_dim: int | None = None,
        seed: int = 0,
    ) -> DecisionModel:
        rng = np.random.default_rng(seed)
        seeds = rng.integers(0, 2**31, size=len(kgs) + 2)
        stacks = [GnnStack.init(kg.depth, table.dim, gnn_dim, int(s)) for kg, s in zip(kgs, seeds)]
        d = sum(s.out_dim for s in stacks)
        temporal = TemporalModel.init(window, d, model_dim, heads, blocks, ffn_dim, int(seeds[-2]))
        head = DecisionHead.init(d, n_anomalies, int(seeds[-1]))
        return cls(list(kgs), stacks, temporal, head, table)

    # --- parameters ------------------------------------------------------------

    def named_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for k, s in enumerate(self.stacks):
            out.update({f"gnn{k}.{n}": a for n, a in s.params().items()})
        out.update({f"temporal.{n}": a for n, a in self.temporal.params.items()})
        out.update({f"decision.{n}": a for n, a in self.head.params().items()})
        out[TOKENS] = self.table.matrix
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for k, s in enumerate(self.stacks):
            out.update({f"gnn{k}.{n}": a for n, a in s.buffers().items()})
        return out

    def set_kg(self, index: int, kg: ReasoningKG) -> None:
        self.kgs[index] = kg
        self._plans = []

    def plans(self) -> list[GraphPlan]:
        if len(self._plans) != len(self.kgs):
            self._plans = [GraphPlan.build(kg) for kg in self.kgs]
        return self._plans

    def kg_token_ids(self) -> list[int]:
        ids = set()
        for kg in self.kgs:
            for n in kg.concept_nodes():
                ids.update(n.token_ids)
        return sorted(ids)

    @property
    def window(self) -> int:
        return self.temporal.window

    # --- forward ------------------------------------------------------------------

    def tensors(self, trainable: Iterable[str] = ()) -> dict[str, ad.Tensor]:
        trainable = set(trainable)
        return {
            name: ad.Tensor(arr, requires_grad=group_of(name) in trainable, name=name)
            for name, arr in self.named_params().items()
        }

    def reasoning_tape(self, frames: np.ndarray, tensors: Mapping[str, ad.Tensor], train: bool, update_stats: bool = False) -> ad.Tensor:
        """(F, D_emb) frames -> (F, D) concatenated reasoning embeddings."""
        frames_t = ad.Tensor(frames)
        parts = []
        for k, (stack, plan) in enumerate(zip(self.stacks, self.plans())):
            sub = {n.split(".", 1)[1]: t for n, t in tensors.items() if n.startswith(f"gnn{k}.")}
            parts.append(forward_tape(stack, plan, tensors[TOKENS], frames_t, sub, train, update_stats))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def logits_tape(
        self,
        frames: np.ndarray,
        windows: np.ndarray,
        tensors: Mapping[str, ad.Tensor],
        train: bool = False,
        update_stats: bool = False,
    ) -> ad.Tensor:
        """``windows`` is an (L, T) index array into ``frames``; returns (L, n+1) logits."""
        f = self.reasoning_tape(frames, tensors, train, update_stats)
        seq = ad.take(f, windows)
        tp = {n.split(".", 1)[1]: t for n, t in tensors.items() if n.startswith("temporal.")}
        hp = {n.split(".", 1)[1]: t for n, t in tensors.items() if n.startswith("decision.")}
        return head_logits_tape(temporal_tape(self.temporal, seq, tp), hp)

    def scores(self, frames: np.ndarray, windows: np.ndarray | None = None) -> np.ndarray:
        """Eval-mode score vectors (L, n+1). Default: one causal window per frame."""
        frames = np.asarray(frames, dtype=np.float64)
        if windows is None:
            windows = causal_windows(len(frames), self.window)
        logits = self.logits_tape(frames, windows, self.tensors(), train=False)
        return softmax(logits.data)

    def anomaly_scores(self, frames: np.ndarray, windows: np.ndarray | None = None) -> np.ndarray:
        return 1.0 - self.scores(frames, windows)[:, 0]

    # --- persistence -----------------------------------------------------------------

    def meta(self) -> dict:
        return {
            "depths": [s.depth for s in self.stacks],
            "gnn_dims": [[int(p.W.shape[0]) for p in s.layers] for s in self.stacks],
            "d_emb": int(self.table.dim),
            "window": self.temporal.window,
            "model_dim": self.temporal.model_dim,
            "heads": self.temporal.heads,
            "blocks": self.temporal.blocks,
            "ffn_dim": int(self.temporal.params["block0.ff1.W"].shape[0]) if self.temporal.blocks else 0,
            "n_anomalies": self.head.n_anomalies,
        }

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        arrays = {n: a for n, a in self.named_params().items() if n != TOKENS}
        arrays.update(self.named_buffers())
        return arrays

    def checkpoint_bytes(self) -> bytes:
        return write_container(self.meta(), self.checkpoint_arrays())

    def save(self, path) -> None:
        Path(path).write_bytes(self.checkpoint_bytes())

    @classmethod
    def load(cls, path, kgs: Sequence[ReasoningKG], table: TokenEmbeddingTable) -> DecisionModel:
        meta, arrays = read_container(Path(path).read_bytes())
        model = cls.create(
            kgs,
            table,
            n_anomalies=meta["n_anomalies"],
            gnn_dim=meta["gnn_dims"][0][0],
            window=meta["window"],
            model_dim=meta["model_dim"],
            heads=meta["heads"],
            blocks=meta["blocks"],
            ffn_dim=meta["ffn_dim"] or None,
        )
        if [kg.depth for kg in kgs] != meta["depths"]:
            raise ValueError(f"checkpoint depths {meta['depths']} do not match the given graphs")
        target = model.checkpoint_arrays()
        if set(target) != set(arrays):
            raise ValueError("checkpoint array names do not match the model layout")
        for name, arr in arrays.items():
            if target[name].shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {target[name].shape}")
            target[name][...] = arr
        return model


def causal_windows(n_frames: int, T: int, start: int = 0) -> np.ndarray:
    """Window index rows for frames ``start..n_frames-1``; early frames repeat frame 0."""
    t = np.arange(start, n_frames)[:, None]
    return np.maximum(t - np.arange(T - 1, -1, -1)[None, :], 0)


def write_container(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {"version": CKPT_VERSION, "meta": dict(meta), "arrays": entries, "nbytes": offset}
    return CKPT_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(blobs)


def read_container(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(CKPT_MAGIC):
        raise ValueError("not a checkpoint file")
    rest = data[len(CKPT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header.get("version") != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    body = rest[nl + 1:]
    if len(body) != header["nbytes"]:
        raise ValueError(f"checkpoint body has {len(body)} bytes, expected {header['nbytes']}")
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) * 8
        arrays[e["name"]] = np.frombuffer(body[e["offset"]: e["offset"] + n], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return header["meta"], arrays
