"""Hierarchical reasoning knowledge graphs: data model, validation, mutation, I/O.

A reasoning KG is a leveled DAG. Concept nodes live on levels ``1..depth``,
a single sensor node sits on level 0 and a single embedding node on level
``depth + 1``. Edges always go from level ``i`` to level ``i + 1``.

Values are treated as immutable snapshots: every mutation returns a new graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

SENSOR = "sensor"
CONCEPT = "concept"
EMBEDDING = "embedding"
KINDS = (SENSOR, CONCEPT, EMBEDDING)

FORMAT_VERSION = 1


class KGError(Exception):
    pass


class AlreadyAttached(KGError):
    pass


class EmptyGraph(KGError):
    pass


class LevelOutOfRange(KGError):
    pass


class TerminalNotPrunable(KGError):
    pass


class UnknownNode(KGError):
    pass


class DuplicateText(KGError):
    pass


class InvalidProposedEdge(KGError):
    pass


class ParseError(KGError):
    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True)
class ConceptNode:
    id: str
    level: int
    text: str
    token_ids: tuple[int, ...] = ()
    kind: str = CONCEPT

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "text": self.text,
            "token_ids": list(self.token_ids),
            "kind": self.kind,
        }


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str


@dataclass(frozen=True)
class Issue:
    code: str  # DuplicatedConcept | InvalidEdge | OrphanNode | TerminalError
    ids: tuple[str, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> list[str]:
        return [i.code for i in self.issues]


@dataclass
class ReasoningKG:
    mission: str
    depth: int
    nodes: dict[str, ConceptNode] = field(default_factory=dict)
    edges: set[Edge] = field(default_factory=set)
    sensor_id: str | None = None
    embedding_id: str | None = None
    next_id: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReasoningKG):
            return NotImplemented
        return (
            self.mission == other.mission
            and self.depth == other.depth
            and self.nodes == other.nodes
            and self.edges == other.edges
            and self.sensor_id == other.sensor_id
            and self.embedding_id == other.embedding_id
        )

    def copy(self) -> ReasoningKG:
        return ReasoningKG(
            mission=self.mission,
            depth=self.depth,
            nodes=dict(self.nodes),
            edges=set(self.edges),
            sensor_id=self.sensor_id,
            embedding_id=self.embedding_id,
            next_id=self.next_id,
        )

    # --- queries -------------------------------------------------------------

    def level_of(self, node_id: str) -> int:
        return self.nodes[node_id].level

    def nodes_at(self, level: int) -> list[ConceptNode]:
        return [n for n in self.ordered_nodes() if n.level == level]

    def concept_nodes(self) -> list[ConceptNode]:
        return [n for n in self.ordered_nodes() if n.kind == CONCEPT]

    def ordered_nodes(self) -> list[ConceptNode]:
        """Nodes sorted by (level, numeric id) - the canonical row order."""
        return sorted(self.nodes.values(), key=lambda n: (n.level, _id_key(n.id), n.id))

    def ordered_edges(self) -> list[Edge]:
        return sorted(self.edges, key=lambda e: (_id_key(e.src), e.src, _id_key(e.dst), e.dst))

    def in_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.ordered_edges() if e.dst == node_id]

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.ordered_edges() if e.src == node_id]

    def has_terminals(self) -> bool:
        return self.sensor_id is not None or self.embedding_id is not None

    def texts(self) -> set[str]:
        return {n.text for n in self.nodes.values() if n.kind == CONCEPT}

    # --- construction helpers ------------------------------------------------

    def fresh_id(self) -> str:
        taken = {_id_key(i) for i in self.nodes}
        k = self.next_id
        while k in taken:
            k += 1
        return f"n{k}"

    def add_concept(self, level: int, text: str, token_ids: Iterable[int] = ()) -> str:
        """In-place builder used while a graph is being assembled."""
        nid = self.fresh_id()
        self.nodes[nid] = ConceptNode(nid, level, text, tuple(token_ids), CONCEPT)
        self.next_id = _id_key(nid) + 1
        return nid


def _id_key(node_id: str) -> int:
    try:
        return int(node_id.lstrip("n"))
    except ValueError:
        return -1


# --- validation ----------------------------------------------------------------


def validate(kg: ReasoningKG, require_terminals: bool = True) -> ValidationReport:
    issues: list[Issue] = []

    by_text: dict[str, list[str]] = {}
    for n in kg.ordered_nodes():
        if n.kind == CONCEPT:
            by_text.setdefault(n.text, []).append(n.id)
    for text, ids in by_text.items():
        if len(ids) > 1:
            issues.append(Issue("DuplicatedConcept", tuple(ids), f"concept {text!r} appears {len(ids)} times"))

    for e in kg.ordered_edges():
        if e.src not in kg.nodes or e.dst not in kg.nodes:
            issues.append(Issue("InvalidEdge", (e.src, e.dst), "edge endpoint does not exist"))
            continue
        ls, ld = kg.level_of(e.src), kg.level_of(e.dst)
        if ld != ls + 1:
            issues.append(Issue("InvalidEdge", (e.src, e.dst), f"edge spans level {ls} -> {ld}"))

    for n in kg.ordered_nodes():
        if n.kind not in KINDS:
            issues.append(Issue("TerminalError", (n.id,), f"unknown node kind {n.kind!r}"))
        elif n.kind == CONCEPT and not 1 <= n.level <= kg.depth:
            issues.append(Issue("TerminalError", (n.id,), f"concept node on level {n.level}"))
        elif n.kind == CONCEPT and not n.token_ids:
            issues.append(Issue("TerminalError", (n.id,), "concept node without tokens"))

    if require_terminals:
        issues.extend(_terminal_issues(kg))
        if not any(i.code == "TerminalError" for i in issues):
            issues.extend(_orphan_issues(kg))
    return ValidationReport(tuple(issues))


def _terminal_issues(kg: ReasoningKG) -> list[Issue]:
    out = []
    sensors = [n.id for n in kg.ordered_nodes() if n.kind == SENSOR]
    embeds = [n.id for n in kg.ordered_nodes() if n.kind == EMBEDDING]
    if len(sensors) != 1 or kg.sensor_id not in sensors:
        out.append(Issue("TerminalError", tuple(sensors), "expected exactly one sensor node"))
    elif kg.nodes[kg.sensor_id].level != 0:
        out.append(Issue("TerminalError", (kg.sensor_id,), "sensor node must be on level 0"))
    if len(embeds) != 1 or kg.embedding_id not in embeds:
        out.append(Issue("TerminalError", tuple(embeds), "expected exactly one embedding node"))
    elif kg.nodes[kg.embedding_id].level != kg.depth + 1:
        out.append(Issue("TerminalError", (kg.embedding_id,), "embedding node must be on level depth+1"))
    return out


def _orphan_issues(kg: ReasoningKG) -> list[Issue]:
    succ: dict[str, list[str]] = {i: [] for i in kg.nodes}
    pred: dict[str, list[str]] = {i: [] for i in kg.nodes}
    for e in kg.edges:
        if e.src in kg.nodes and e.dst in kg.nodes:
            succ[e.src].append(e.dst)
            pred[e.dst].append(e.src)
    fwd = _reach(kg.sensor_id, succ)
    bwd = _reach(kg.embedding_id, pred)
    out = []
    for n in kg.ordered_nodes():
        if n.kind == CONCEPT and not (n.id in fwd and n.id in bwd):
            out.append(Issue("OrphanNode", (n.id,), f"{n.text!r} is not on a sensor->embedding path"))
    if kg.embedding_id not in fwd:
        out.append(Issue("OrphanNode", (kg.sensor_id, kg.embedding_id), "no sensor->embedding path"))
    return out


def _reach(start: str, adj: dict[str, list[str]]) -> set[str]:
    seen = {start}
    todo = [start]
    while todo:
        for nxt in adj[todo.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


# --- structural operations -------------------------------------------------------


def attach_terminals(kg: ReasoningKG) -> ReasoningKG:
    """Add sensor (level 0, edges to all of level 1) and embedding (level d+1, edges from all of level d)."""
    if kg.has_terminals() or any(n.kind != CONCEPT for n in kg.nodes.values()):
        raise AlreadyAttached("graph already has terminal nodes")
    if kg.depth < 1 or not kg.nodes_at(1) or not kg.nodes_at(kg.depth):
        raise EmptyGraph("need at least one concept node on level 1 and on level depth")
    out = kg.copy()
    sid = out.fresh_id()
    out.nodes[sid] = ConceptNode(sid, 0, "<sensor>", (), SENSOR)
    out.next_id = _id_key(sid) + 1
    eid = out.fresh_id()
    out.nodes[eid] = ConceptNode(eid, out.depth + 1, "<embedding>", (), EMBEDDING)
    out.next_id = _id_key(eid) + 1
    out.sensor_id, out.embedding_id = sid, eid
    for n in out.nodes_at(1):
        out.edges.add(Edge(sid, n.id))
    for n in out.nodes_at(out.depth):
        if n.kind == CONCEPT:
            out.edges.add(Edge(n.id, eid))
    return out


def edge_set(kg: ReasoningKG, level: int) -> list[Edge]:
    """Edges whose destination lies on ``level`` (1 <= level <= depth + 1)."""
    if not 1 <= level <= kg.depth + 1:
        raise LevelOutOfRange(f"level {level} outside 1..{kg.depth + 1}")
    return [e for e in kg.ordered_edges() if kg.level_of(e.dst) == level]


def prune_node(kg: ReasoningKG, node_id: str) -> ReasoningKG:
    if node_id not in kg.nodes:
        raise UnknownNode(node_id)
    if kg.nodes[node_id].kind != CONCEPT:
        raise TerminalNotPrunable(node_id)
    out = kg.copy()
    del out.nodes[node_id]
    out.edges = {e for e in out.edges if node_id not in (e.src, e.dst)}
    return out


def insert_node(
    kg: ReasoningKG,
    level: int,
    text: str,
    token_ids: Iterable[int],
    in_edges: Iterable[str] = (),
    out_edges: Iterable[str] = (),
) -> tuple[ReasoningKG, str]:
    """Insert a concept node; ``in_edges``/``out_edges`` are parent/child node ids.

    Returns the new graph and the fresh node id.
    """
    if not 1 <= level <= kg.depth:
        raise LevelOutOfRange(f"level {level} outside 1..{kg.depth}")
    if text in kg.texts():
        raise DuplicateText(text)
    token_ids = tuple(token_ids)
    if not token_ids:
        raise InvalidProposedEdge("concept node needs at least one token")
    parents, children = list(in_edges), list(out_edges)
    for p in parents:
        if p not in kg.nodes or kg.level_of(p) != level - 1:
            raise InvalidProposedEdge(f"parent {p} is not on level {level - 1}")
    for c in children:
        if c not in kg.nodes or kg.level_of(c) != level + 1:
            raise InvalidProposedEdge(f"child {c} is not on level {level + 1}")
    out = kg.copy()
    nid = out.add_concept(level, text, token_ids)
    out.edges.update(Edge(p, nid) for p in parents)
    out.edges.update(Edge(nid, c) for c in children)
    return out, nid


# --- serialization -----------------------------------------------------------------


def to_dict(kg: ReasoningKG) -> dict:
    return {
        "version": FORMAT_VERSION,
        "mission": kg.mission,
        "depth": kg.depth,
        "next_id": kg.next_id,
        "nodes": [n.to_dict() for n in kg.ordered_nodes()],
        "edges": [{"src": e.src, "dst": e.dst} for e in kg.ordered_edges()],
    }


def serialize(kg: ReasoningKG) -> bytes:
    return (json.dumps(to_dict(kg), indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def deserialize(data: bytes | str) -> ReasoningKG:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("not valid UTF-8", f"byte {exc.start}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
    return from_dict(doc)


def from_dict(doc) -> ReasoningKG:
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object", "$")
    for key in ("version", "mission", "depth", "nodes", "edges"):
        if key not in doc:
            raise ParseError(f"missing field {key!r}", "$")
    if doc["version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported version {doc['version']!r}", "$.version")
    kg = ReasoningKG(mission=str(doc["mission"]), depth=int(doc["depth"]))
    for i, raw in enumerate(doc["nodes"]):
        loc = f"$.nodes[{i}]"
        try:
            node = ConceptNode(
                id=str(raw["id"]),
                level=int(raw["level"]),
                text=str(raw["text"]),
                token_ids=tuple(int(t) for t in raw["token_ids"]),
                kind=str(raw["kind"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad node: {exc}", loc) from exc
        if node.kind not in KINDS:
            raise ParseError(f"unknown kind {node.kind!r}", loc)
        if node.id in kg.nodes:
            raise ParseError(f"duplicate node id {node.id!r}", loc)
        kg.nodes[node.id] = node
        if node.kind == SENSOR:
            kg.sensor_id = node.id
        elif node.kind == EMBEDDING:
            kg.embedding_id = node.id
    for i, raw in enumerate(doc["edges"]):
        try:
            kg.edges.add(Edge(str(raw["src"]), str(raw["dst"])))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad edge: {exc}", f"$.edges[{i}]") from exc
    default_next = max((_id_key(i) for i in kg.nodes), default=-1) + 1
    kg.next_id = int(doc.get("next_id", default_next))
    return kg


def load(path) -> ReasoningKG:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save(kg: ReasoningKG, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(kg))

