"""Level-by-level reasoning-KG generation against a pluggable knowledge source.

Each level goes through node generation, edge generation and a bounded
error-detection/correction loop. Errors that survive ``max_correction_iters``
calls to ``source.correct`` are pruned: invalid edges first, then duplicate
nodes, then nodes left without a parent.
"""

from __future__ import annotations

import json
import subprocess
import urllib.error
import urllib.request
import zlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .embedding_space import Vocabulary
from .kg_model import Edge, Issue, ReasoningKG, attach_terminals, validate
from .lexicon import GENERIC_LEVEL_WORDS, MISSION_TEMPLATES


class SourceUnavailable(RuntimeError):
    pass


class EmptyLevel(RuntimeError):
    pass


@dataclass
class LevelDraft:
    """Proposed concepts for one level and edges (parent text, child text) into it."""

    texts: list[str]
    edges: list[tuple[str, str]] = field(default_factory=list)


class KnowledgeSource(Protocol):
    def initial_nodes(self, mission: str) -> list[str]: ...

    def expand(self, mission: str, current: Sequence[str]) -> list[str]: ...

    def propose_edges(self, current: Sequence[str], nxt: Sequence[str]) -> list[tuple[str, str]]: ...

    def correct(self, issues: Sequence[Issue], draft: LevelDraft) -> LevelDraft: ...


@dataclass
class GenerationConfig:
    depth: int = 2
    max_correction_iters: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.max_correction_iters < 0:
            raise ValueError("max_correction_iters must be >= 0")


def stable_seed(*parts) -> int:
    return zlib.crc32("\x1f".join(str(p) for p in parts).encode())


class MockKnowledgeSource:
    """Deterministic template expansion from the built-in lexicon.

    ``error_rate`` injects duplicate concepts and level-skipping edges so the
    correction loop gets exercised; ``fix_rate`` is the chance that a single
    issue is repaired by one ``correct`` call.
    """

    def __init__(self, seed: int = 0, n_initial: int = 4, width: tuple[int, int] = (3, 4), error_rate: float = 0.0, fix_rate: float = 1.0):
        self.seed = seed
        self.n_initial = n_initial
        self.width = width
        self.error_rate = error_rate
        self.fix_rate = fix_rate
        self._rng = np.random.default_rng(seed)
        self._level = 0
        self._mission = ""
        self._seen: list[str] = []
        self._spare = 0

    def _pool(self, level: int) -> list[str]:
        templates = MISSION_TEMPLATES.get(self._mission)
        if templates and level <= len(templates):
            return list(templates[level - 1])
        adj, noun = GENERIC_LEVEL_WORDS
        return [f"{a} {n}" for a in adj for n in noun]

    def _fresh(self, level: int, k: int) -> list[str]:
        pool = [t for t in self._pool(level) if t not in self._seen]
        if len(pool) < k:
            adj, noun = GENERIC_LEVEL_WORDS
            pool += [f"{a} {n}" for a in adj for n in noun if f"{a} {n}" not in self._seen and f"{a} {n}" not in pool]
        idx = self._rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        out = [pool[i] for i in sorted(idx)]
        self._seen.extend(out)
        return out

    def initial_nodes(self, mission: str) -> list[str]:
        self._rng = np.random.default_rng(stable_seed(mission, self.seed))
        self._mission, self._level, self._seen = mission, 1, []
        return self._fresh(1, self.n_initial)

    def expand(self, mission: str, current: Sequence[str]) -> list[str]:
        self._level += 1
        k = int(self._rng.integers(self.width[0], self.width[1] + 1))
        out = self._fresh(self._level, k)
        if self.error_rate and self._rng.random() < self.error_rate and current:
            out.append(current[int(self._rng.integers(len(current)))])
        return out

    def propose_edges(self, current: Sequence[str], nxt: Sequence[str]) -> list[tuple[str, str]]:
        edges = []
        for j, child in enumerate(nxt):
            k = int(self._rng.integers(1, min(2, len(current)) + 1))
            for i in self._rng.choice(len(current), size=k, replace=False):
                edges.append((current[int(i)], child))
        covered = {p for p, _ in edges}
        for i, parent in enumerate(current):
            if parent not in covered and nxt:
                edges.append((parent, nxt[int(self._rng.integers(len(nxt)))]))
        if self.error_rate and self._rng.random() < self.error_rate and len(nxt) > 1:
            edges.append((nxt[0], nxt[1]))
        return edges

    def correct(self, issues: Sequence[Issue], draft: LevelDraft) -> LevelDraft:
        texts, edges = list(draft.texts), list(draft.edges)
        for issue in issues:
            if self._rng.random() >= self.fix_rate:
                continue
            if issue.code == "DuplicatedConcept":
                dup = issue.ids[0]
                if dup in texts:
                    i = len(texts) - 1 - texts[::-1].index(dup)
                    new = self._fresh(self._level, 1)[0]
                    texts[i] = new
                    edges = [(p, new if c == dup and k == i else c) for k, (p, c) in enumerate(edges)]
            elif issue.code == "InvalidEdge":
                pair = (issue.ids[0], issue.ids[1])
                edges = [e for e in edges if e != pair]
            elif issue.code == "OrphanNode" and len(issue.ids) > 1 and issue.ids[0] in texts:
                edges.append((issue.ids[1], issue.ids[0]))
        return LevelDraft(texts, edges)


class FailingSource:
    """Always unavailable; stands in for an unreachable remote model."""

    def _fail(self, *_, **__):
        raise SourceUnavailable("knowledge source unreachable")

    initial_nodes = expand = propose_edges = correct = _fail


# --- remote protocol -------------------------------------------------------------------


class SubprocessTransport:
    """Line-delimited JSON over a child process's stdin/stdout."""

    def __init__(self, argv: Sequence[str]):
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def __call__(self, request: dict) -> dict:
        try:
            if self._proc is None or self._proc.poll() is not None:
                self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except OSError as exc:
            raise SourceUnavailable(str(exc)) from exc
        if not line:
            raise SourceUnavailable("knowledge source closed its output")
        return json.loads(line)

    def close(self) -> None:
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
            self._proc = None


class HttpTransport:
    """POSTs each request document to a single endpoint."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, request: dict) -> dict:
        req = urllib.request.Request(self.url, data=json.dumps(request).encode(), headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except (urllib.error.URLError, OSError) as exc:
            raise SourceUnavailable(str(exc)) from exc


class RemoteKnowledgeSource:
    """Speaks ``{op, mission, payload}`` -> ``{texts | edges | revised}``."""

    def __init__(self, transport, mission: str = ""):
        self.transport = transport
        self.mission = mission

    def _call(self, op: str, payload: dict, mission: str | None = None) -> dict:
        resp = self.transport({"op": op, "mission": mission or self.mission, "payload": payload})
        if not isinstance(resp, dict):
            raise SourceUnavailable(f"malformed response to {op}")
        if "error" in resp:
            raise SourceUnavailable(str(resp["error"]))
        return resp

    def initial_nodes(self, mission: str) -> list[str]:
        self.mission = mission
        return [str(t) for t in self._call("initial_nodes", {}, mission)["texts"]]

    def expand(self, mission: str, current: Sequence[str]) -> list[str]:
        return [str(t) for t in self._call("expand", {"current": list(current)}, mission)["texts"]]

    def propose_edges(self, current: Sequence[str], nxt: Sequence[str]) -> list[tuple[str, str]]:
        resp = self._call("propose_edges", {"current": list(current), "next": list(nxt)})
        return [(str(a), str(b)) for a, b in resp["edges"]]

    def correct(self, issues: Sequence[Issue], draft: LevelDraft) -> LevelDraft:
        payload = {
            "issues": [{"code": i.code, "ids": list(i.ids), "message": i.message} for i in issues],
            "draft": {"texts": draft.texts, "edges": [list(e) for e in draft.edges]},
        }
        revised = self._call("correct", payload)["revised"]
        return LevelDraft([str(t) for t in revised["texts"]], [(str(a), str(b)) for a, b in revised["edges"]])


def source_from_spec(spec: str, seed: int = 0) -> KnowledgeSource:
    """``mock`` | ``cmd:<path or command>`` | ``http(s)://...``."""
    if spec == "mock":
        return MockKnowledgeSource(seed=seed)
    if spec.startswith("cmd:"):
        return RemoteKnowledgeSource(SubprocessTransport(spec[4:].split()))
    if spec.startswith(("http://", "https://")):
        return RemoteKnowledgeSource(HttpTransport(spec))
    raise ValueError(f"unknown knowledge source {spec!r}")


# --- generation loop -------------------------------------------------------------------


def check_level(draft: LevelDraft, previous: Sequence[str], earlier: set[str], level: int) -> list[Issue]:
    """Issues of one drafted level, keyed by concept text.

    ``previous`` are the accepted texts of level-1; ``earlier`` every accepted text.
    """
    issues = []
    seen: set[str] = set()
    for t in draft.texts:
        if t in earlier or t in seen:
            issues.append(Issue("DuplicatedConcept", (t,), f"{t!r} already present"))
        seen.add(t)
    prev = set(previous)
    texts = set(draft.texts)
    for p, c in draft.edges:
        if p not in prev or c not in texts:
            issues.append(Issue("InvalidEdge", (p, c), f"edge {p!r} -> {c!r} does not connect level {level - 1} to {level}"))
    if level > 1:
        parents = {c for p, c in draft.edges if p in prev}
        for t in draft.texts:
            if t not in parents:
                issues.append(Issue("OrphanNode", (t, previous[0] if previous else ""), f"{t!r} has no parent"))
    return issues


def prune_level(draft: LevelDraft, previous: Sequence[str], earlier: set[str], level: int) -> LevelDraft:
    prev = set(previous)
    edges = [(p, c) for p, c in draft.edges if p in prev and c in draft.texts]
    keep, seen = [], set()
    for t in draft.texts:
        if t in earlier or t in seen:
            continue
        keep.append(t)
        seen.add(t)
    edges = [(p, c) for p, c in dict.fromkeys(edges) if c in seen]
    if level > 1:
        parented = {c for _, c in edges}
        keep = [t for t in keep if t in parented]
    return LevelDraft(keep, edges)


@dataclass
class LevelResult:
    draft: LevelDraft
    correction_calls: int
    pruned: bool


def correction_loop(draft: LevelDraft, previous: Sequence[str], earlier: set[str], level: int, cfg: GenerationConfig, src: KnowledgeSource) -> LevelResult:
    calls = 0
    issues = check_level(draft, previous, earlier, level)
    while issues and calls < cfg.max_correction_iters:
        draft = src.correct(issues, draft)
        calls += 1
        issues = check_level(draft, previous, earlier, level)
    pruned = bool(issues)
    if pruned:
        draft = prune_level(draft, previous, earlier, level)
    if not draft.texts:
        raise EmptyLevel(f"level {level} has no surviving concepts")
    return LevelResult(draft, calls, pruned)


def generate_kg(mission: str, cfg: GenerationConfig, src: KnowledgeSource, vocab: Vocabulary | None = None) -> ReasoningKG:
    vocab = vocab or Vocabulary.default()
    kg = ReasoningKG(mission=mission, depth=cfg.depth)
    ids: dict[str, str] = {}
    earlier: set[str] = set()
    previous: list[str] = []
    for level in range(1, cfg.depth + 1):
        texts = src.initial_nodes(mission) if level == 1 else src.expand(mission, previous)
        edges = [] if level == 1 else src.propose_edges(previous, texts)
        result = correction_loop(LevelDraft(list(texts), list(edges)), previous, earlier, level, cfg, src)
        draft = result.draft
        for t in draft.texts:
            ids[t] = kg.add_concept(level, t, vocab.tokenize(t))
        for p, c in draft.edges:
            kg.edges.add(Edge(ids[p], ids[c]))
        # parents left without a child would dead-end; hook them to the first new concept
        children_of = {p for p, _ in draft.edges}
        for p in previous:
            if p not in children_of:
                kg.edges.add(Edge(ids[p], ids[draft.texts[0]]))
        earlier.update(draft.texts)
        previous = list(draft.texts)
    kg = attach_terminals(kg)
    report = validate(kg)
    if not report.ok:
        raise EmptyLevel(f"generated graph failed validation: {report.codes()}")
    return kg
