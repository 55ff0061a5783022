from __future__ import annotations

import numpy as np
import pytest

from kgadapt.embedding_space import TokenEmbeddingTable, Vocabulary
from kgadapt.kg_model import Edge, ReasoningKG, attach_terminals
from kgadapt.model import DecisionModel


def build_kg(levels, edges, depth=None, mission="test", terminals=True, token_ids=None) -> ReasoningKG:
    """KG from level lists of texts and (parent_text, child_text) edges.

    Token ids default to the node's position in creation order, one token each.
    """
    kg = ReasoningKG(mission=mission, depth=depth or len(levels))
    ids = {}
    k = 0
    for lvl, texts in enumerate(levels, start=1):
        for t in texts:
            toks = token_ids[t] if token_ids and t in token_ids else (k,)
            ids[t] = kg.add_concept(lvl, t, toks)
            k += 1
    for p, c in edges:
        kg.edges.add(Edge(ids[p], ids[c]))
    return attach_terminals(kg) if terminals else kg


def node_id(kg: ReasoningKG, text: str) -> str:
    return next(n.id for n in kg.nodes.values() if n.text == text)


@pytest.fixture
def diamond_kg() -> ReasoningKG:
    """Two levels: a, b on level 1; c, d on level 2; every level-1 node feeds every level-2 node."""
    return build_kg([["a", "b"], ["c", "d"]], [("a", "c"), ("a", "d"), ("b", "c"), ("b", "d")])


@pytest.fixture
def small_table() -> TokenEmbeddingTable:
    return TokenEmbeddingTable.init(12, dim=8, init_std=0.5, seed=3)


def tiny_model(kg, table, seed=0, gnn_dim=4, window=3, model_dim=8, heads=2, n_anomalies=1) -> DecisionModel:
    return DecisionModel.create([kg], table, n_anomalies=n_anomalies, gnn_dim=gnn_dim, window=window,
                                model_dim=model_dim, heads=heads, blocks=1, seed=seed)


def with_running_stats(model: DecisionModel, seed=0) -> DecisionModel:
    """Give every BN layer non-default running statistics, as a trained model would have.

    With the initial (0, 1) statistics the embedding-node row is zero in eval
    mode, which hides any token dependence.
    """
    rng = np.random.default_rng(seed)
    for stack in model.stacks:
        for p in stack.layers:
            p.running_mean[:] = rng.normal(size=p.running_mean.shape) * 0.3
            p.running_var[:] = rng.uniform(0.5, 2.0, size=p.running_var.shape)
    return model


@pytest.fixture
def tiny(diamond_kg, small_table) -> DecisionModel:
    return with_running_stats(tiny_model(diamond_kg, small_table))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def vocab() -> Vocabulary:
    return Vocabulary.default()


# (criterion, passed, detail) rows filled by the acceptance suite
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
