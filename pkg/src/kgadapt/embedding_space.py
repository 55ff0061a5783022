"""Vocabulary, word-level tokenizer, trainable token-embedding table, frame synthesis."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .kg_model import ConceptNode
from .lexicon import UNK, base_words

TABLE_MAGIC = b"KGTABLE1\n"


class IdOutOfRange(IndexError):
    pass


class EmptyTokenList(ValueError):
    pass


class WeightError(ValueError):
    pass


class Vocabulary:
    """Dense word <-> id mapping. Id ``unk_id`` is reserved for unknown words."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if UNK not in words:
            words.append(UNK)
        if len(set(words)) != len(words):
            raise ValueError("vocabulary words must be unique")
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}
        self.unk_id = self.index[UNK]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @classmethod
    def default(cls) -> Vocabulary:
        return cls(base_words())

    @classmethod
    def load(cls, path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip()])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    def tokenize(self, text: str) -> list[int]:
        return [self.index.get(w, self.unk_id) for w in text.lower().split()]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.words):
                raise IdOutOfRange(f"token id {i} not in 0..{len(self.words) - 1}")
            out.append(self.words[i])
        return out

    def decode_text(self, ids: Iterable[int]) -> str:
        return " ".join(self.decode(ids))


@dataclass
class TokenEmbeddingTable:
    """|rows| x dim matrix. Rows past ``base_size`` are synthetic tokens created on-device."""

    matrix: np.ndarray
    trainable_mask: np.ndarray
    init_std: float = 0.02
    seed: int = 0
    base_size: int = field(default=-1)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.trainable_mask = np.asarray(self.trainable_mask, dtype=bool)
        if self.base_size < 0:
            self.base_size = self.matrix.shape[0]

    @classmethod
    def init(cls, n_rows: int, dim: int = 64, init_std: float = 0.02, seed: int = 0) -> TokenEmbeddingTable:
        rng = np.random.default_rng(seed)
        matrix = rng.normal(0.0, init_std, size=(n_rows, dim))
        return cls(matrix, np.zeros(n_rows, dtype=bool), init_std, seed)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> TokenEmbeddingTable:
        return TokenEmbeddingTable(self.matrix.copy(), self.trainable_mask.copy(), self.init_std, self.seed, self.base_size)

    def append_row(self, row: np.ndarray, trainable: bool = True) -> int:
        self.matrix = np.vstack([self.matrix, np.asarray(row, dtype=np.float64)[None, :]])
        self.trainable_mask = np.append(self.trainable_mask, trainable)
        return self.n_rows - 1

    def mark_trainable(self, ids: Iterable[int], only: bool = True) -> None:
        if only:
            self.trainable_mask[:] = False
        self.trainable_mask[list(ids)] = True

    def to_bytes(self) -> bytes:
        header = {
            "rows": self.n_rows,
            "dim": self.dim,
            "seed": self.seed,
            "init_std": self.init_std,
            "base_size": self.base_size,
        }
        return (
            TABLE_MAGIC
            + json.dumps(header, sort_keys=True).encode() + b"\n"
            + self.matrix.astype("<f8").tobytes()
            + self.trainable_mask.astype(np.uint8).tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> TokenEmbeddingTable:
        if not data.startswith(TABLE_MAGIC):
            raise ValueError("not a token-embedding table file")
        rest = data[len(TABLE_MAGIC):]
        nl = rest.index(b"\n")
        header = json.loads(rest[:nl])
        body = rest[nl + 1:]
        rows, dim = header["rows"], header["dim"]
        n_mat = rows * dim * 8
        if len(body) != n_mat + rows:
            raise ValueError(f"table body has {len(body)} bytes, expected {n_mat + rows}")
        matrix = np.frombuffer(body[:n_mat], dtype="<f8").reshape(rows, dim).astype(np.float64)
        mask = np.frombuffer(body[n_mat:], dtype=np.uint8).astype(bool)
        return cls(matrix, mask, header["init_std"], header["seed"], header["base_size"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> TokenEmbeddingTable:
        return cls.from_bytes(Path(path).read_bytes())


def node_embedding(node: ConceptNode, table: TokenEmbeddingTable) -> np.ndarray:
    """Mean of the node's token rows."""
    if not node.token_ids:
        raise EmptyTokenList(node.id)
    return table.matrix[list(node.token_ids)].mean(axis=0)


def pooled_rows(nodes: Sequence[ConceptNode | None], table_t: ad.Tensor) -> ad.Tensor:
    """Differentiable mean pooling: one output row per entry of ``nodes``.

    ``None`` entries (terminal rows) come out as zeros.
    """
    ids: list[int] = []
    cols = []
    for r, node in enumerate(nodes):
        if node is None:
            continue
        if not node.token_ids:
            raise EmptyTokenList(node.id)
        k = len(node.token_ids)
        for t in node.token_ids:
            cols.append((r, len(ids), 1.0 / k))
            ids.append(t)
    pool = np.zeros((len(nodes), len(ids)))
    for r, c, w in cols:
        pool[r, c] = w
    if not ids:
        return ad.Tensor(np.zeros((len(nodes), table_t.shape[1])))
    return ad.matmul(pool, ad.take(table_t, ids))


def synthetic_frame(
    concept_vectors: Sequence[np.ndarray],
    mixture_weights: Sequence[float],
    noise_std: float = 0.0,
    seed: int | np.random.Generator | None = None,
) -> np.ndarray:
    """sum_i w_i c_i plus seeded isotropic Gaussian noise."""
    w = np.asarray(mixture_weights, dtype=np.float64)
    c = np.asarray(concept_vectors, dtype=np.float64)
    if w.ndim != 1 or len(w) != len(c):
        raise WeightError("one weight per concept vector required")
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
        raise WeightError("weights must be non-negative and sum to 1")
    out = w @ c
    if noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        out = out + rng.normal(0.0, noise_std, size=out.shape)
    return out
