"""Map learned token embeddings back to the nearest vocabulary words."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .embedding_space import TokenEmbeddingTable, Vocabulary
from .kg_model import ReasoningKG

METRICS = ("euclidean", "dot", "cosine")


class KTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Neighbour:
    word: str
    id: int
    distance: float


@dataclass
class RetrievalResult:
    """Per node: one ranked neighbour list per token."""

    nodes: dict[str, dict]

    def to_json(self) -> str:
        return json.dumps(self.nodes, indent=2, sort_keys=True) + "\n"


def nearest_tokens(
    query: np.ndarray,
    table: TokenEmbeddingTable,
    vocab: Vocabulary,
    K: int,
    metric: str = "euclidean",
) -> list[Neighbour]:
    """Exact K nearest vocabulary rows, ordered by (distance, id).

    Only the first ``len(vocab)`` rows are searched: rows appended for
    created nodes have no word. For ``dot`` and ``cosine`` the reported
    distance is the negated similarity so that smaller is still closer.
    """
    q = np.asarray(query, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("query must be finite")
    V = len(vocab)
    if table.n_rows < V:
        raise ValueError(f"table has {table.n_rows} rows for a vocabulary of {V} words")
    if not 0 < K <= V:
        raise KTooLarge(f"K={K} must lie in 1..{V}")
    rows = table.matrix[:V]
    if metric == "euclidean":
        d = np.sqrt(np.sum((rows - q) ** 2, axis=1))
    elif metric == "dot":
        d = -(rows @ q)
    elif metric == "cosine":
        denom = np.linalg.norm(rows, axis=1) * np.linalg.norm(q)
        d = -(rows @ q) / np.where(denom == 0, 1.0, denom)
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    order = np.lexsort((np.arange(V), d))[:K]
    return [Neighbour(vocab.words[i], int(i), float(d[i])) for i in order]


def interpret_kg(
    kg: ReasoningKG,
    table: TokenEmbeddingTable,
    vocab: Vocabulary,
    K: int = 5,
    metric: str = "euclidean",
) -> RetrievalResult:
    out = {}
    for node in kg.concept_nodes():
        out[node.id] = {
            "text": node.text,
            "level": node.level,
            "tokens": [
                {
                    "token_id": int(tid),
                    "neighbours": [asdict(n) for n in nearest_tokens(table.matrix[tid], table, vocab, K, metric)],
                }
                for tid in node.token_ids
            ],
        }
    return RetrievalResult(out)


def node_words(result: RetrievalResult, node_id: str) -> list[str]:
    """Every retrieved word of a node, across its tokens."""
    return [n["word"] for tok in result.nodes[node_id]["tokens"] for n in tok["neighbours"]]
