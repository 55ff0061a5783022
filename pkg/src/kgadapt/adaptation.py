"""On-device KG adaptation.

The deployed engine scores every incoming frame, keeps the last ``N`` scores,
and at every ``cadence`` frames compares the mean score of the current window
with the mean of the window ``reference_lag`` frames earlier. A drop
``dm < 0`` sets a pseudo-label budget ``K = floor(|dm| * N)``: the K
highest-scoring recent frames are labelled as the trained anomaly class and
one optimizer step updates the KG token embeddings only. Nodes whose token
displacement keeps growing are replaced by a fresh random node on the same
level.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .kg_model import CONCEPT, ReasoningKG, insert_node, prune_node, validate
from .model import TOKENS, DecisionModel
from .training import AdamW, LossConfig, gradients


class InsufficientHistory(RuntimeError):
    pass


class NoValidEndpoints(RuntimeError):
    pass


@dataclass
class AdaptationConfig:
    N: int = 100
    reference_lag: int | None = None  # None: one full window (N frames)
    cadence: int = 50
    lr: float = 1e-2
    weight_decay: float = 0.0
    patience: int = 3
    creation_init_std: float = 0.02
    displacement: str = "consecutive"  # or "origin"
    negatives: str = "bottom_k"  # "bottom_k" | "rest" | "none"
    anomaly_class: int = 1
    kg_index: int = 0
    structural: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.displacement not in ("consecutive", "origin"):
            raise ValueError("displacement must be 'consecutive' or 'origin'")
        if self.negatives not in ("bottom_k", "rest", "none"):
            raise ValueError("negatives must be 'bottom_k', 'rest' or 'none'")

    @property
    def lag(self) -> int:
        return self.N if self.reference_lag is None else self.reference_lag


@dataclass
class BufferEntry:
    t: int
    score: float
    window: np.ndarray  # (T, D_emb) raw frames feeding this score


class ScoreBuffer:
    """The last ``N`` scored frames plus enough score history for the lagged mean."""

    def __init__(self, N: int, lag: int | None = None):
        self.N = N
        self.lag = N if lag is None else lag
        self.entries: deque[BufferEntry] = deque(maxlen=N)
        self.history: deque[float] = deque(maxlen=N + self.lag)
        self.window_means: list[tuple[int, float]] = []

    def push(self, t: int, score: float, window: np.ndarray | None = None) -> None:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
        self.entries.append(BufferEntry(t, float(score), window))
        self.history.append(float(score))

    def ready(self) -> bool:
        return len(self.history) >= self.N + self.lag


@dataclass(frozen=True)
class MeanShift:
    m_t: float
    m_ref: float

    @property
    def dm(self) -> float:
        return self.m_t - self.m_ref


def mean_shift(buffer: ScoreBuffer) -> MeanShift:
    if not buffer.ready():
        raise InsufficientHistory(f"need {buffer.N + buffer.lag} scores, have {len(buffer.history)}")
    h = np.fromiter(buffer.history, dtype=np.float64)
    current = h[len(h) - buffer.N:]
    ref = h[len(h) - buffer.N - buffer.lag: len(h) - buffer.lag]
    shift = MeanShift(float(current.mean()), float(ref.mean()))
    buffer.window_means.append((buffer.entries[-1].t if buffer.entries else -1, shift.m_t))
    return shift


def compute_K(dm: float, N: int) -> int:
    if N < 1:
        raise ValueError("N must be >= 1")
    if not dm < 0:
        return 0
    return min(N, int(math.floor(abs(dm) * N)))


def select_topk(buffer: ScoreBuffer | Sequence[BufferEntry], K: int, label: int = 1) -> list[tuple[BufferEntry, int]]:
    """The K highest-scoring entries, ties broken newest first, labelled ``label``."""
    entries = list(buffer.entries if isinstance(buffer, ScoreBuffer) else buffer)
    ranked = sorted(entries, key=lambda e: (-e.score, -e.t))
    return [(e, label) for e in ranked[:K]]


def select_negatives(buffer: ScoreBuffer | Sequence[BufferEntry], K: int, mode: str = "bottom_k") -> list[tuple[BufferEntry, int]]:
    """Normal-labelled counterparts of a top-K selection."""
    entries = list(buffer.entries if isinstance(buffer, ScoreBuffer) else buffer)
    if K == 0 or mode == "none":
        return []
    ranked = sorted(entries, key=lambda e: (-e.score, -e.t))
    rest = ranked[K:]
    if mode == "bottom_k":
        rest = rest[::-1][:K]
    return [(e, 0) for e in rest]


@dataclass
class AdaptReport:
    loss: float
    displacement: dict[str, float]
    rows: list[int]


def node_displacements(kg: ReasoningKG, before: np.ndarray, after: np.ndarray) -> dict[str, float]:
    """L2 norm of the concatenated token-row deltas of every concept node."""
    out = {}
    for n in kg.concept_nodes():
        rows = list(n.token_ids)
        out[n.id] = float(np.linalg.norm(after[rows] - before[rows]))
    return out


def adapt_step(
    model: DecisionModel,
    pseudo: Sequence[tuple[BufferEntry, int]],
    opt: AdamW,
    kg_index: int = 0,
    loss_cfg: LossConfig = LossConfig(),
) -> AdaptReport:
    """One loss/backward/AdamW pass that may only move KG token rows."""
    kg = model.kgs[kg_index]
    if not pseudo:
        return AdaptReport(0.0, {n.id: 0.0 for n in kg.concept_nodes()}, [])
    pseudo = sorted(pseudo, key=lambda p: p[0].t)
    T = model.window
    frames = np.concatenate([e.window for e, _ in pseudo], axis=0)
    windows = np.arange(len(pseudo))[:, None] * T + np.arange(T)[None, :]
    labels = [lab for _, lab in pseudo]
    rows = model.kg_token_ids()
    model.table.mark_trainable(rows)
    before = model.table.matrix.copy()
    parts, grads = gradients(model, frames, windows, labels, [TOKENS], loss_cfg, train=False)
    params = model.named_params()
    opt.step(params, grads, row_masks={TOKENS: model.table.trainable_mask})
    return AdaptReport(parts.total, node_displacements(kg, before, model.table.matrix), rows)


@dataclass
class DivergenceTracker:
    patience: int = 3
    previous: dict[str, float] = field(default_factory=dict)
    increases: dict[str, int] = field(default_factory=dict)

    def decide(self, node_id: str, displacement: float) -> str:
        """'prune' once the displacement grew strictly on ``patience`` consecutive passes."""
        if displacement < 0:
            raise ValueError("displacement must be non-negative")
        prev = self.previous.get(node_id)
        if prev is not None and displacement > prev:
            self.increases[node_id] = self.increases.get(node_id, 0) + 1
        else:
            self.increases[node_id] = 0
        self.previous[node_id] = displacement
        if self.increases[node_id] >= self.patience:
            return "prune"
        return "keep"

    def reset(self, node_id: str) -> None:
        self.previous.pop(node_id, None)
        self.increases.pop(node_id, None)


def divergence_decision(tracker: DivergenceTracker, node_id: str, displacement: float) -> str:
    return tracker.decide(node_id, displacement)


@dataclass
class CreateResult:
    kg: ReasoningKG
    new_id: str
    token_id: int
    parents: list[str]
    children: list[str]


def prune_and_create(kg: ReasoningKG, table, node_id: str, creation_init_std: float, rng: np.random.Generator) -> CreateResult:
    """Replace ``node_id`` with a fresh random-token node on the same level.

    The new node copies the pruned node's in/out degree. Neighbours that
    would otherwise lose their only link are always reconnected; remaining
    endpoints are drawn uniformly without replacement.
    """
    node = kg.nodes[node_id]
    if node.kind != CONCEPT:
        raise ValueError(f"{node_id} is not a concept node")
    level = node.level
    old_parents = [e.src for e in kg.in_edges(node_id)]
    old_children = [e.dst for e in kg.out_edges(node_id)]
    pruned = prune_node(kg, node_id)
    parent_pool = [n.id for n in pruned.nodes_at(level - 1)]
    child_pool = [n.id for n in pruned.nodes_at(level + 1)]
    if not parent_pool or not child_pool:
        raise NoValidEndpoints(f"no neighbours available around level {level}")
    needy_parents = [p for p in old_parents if not pruned.out_edges(p)]
    needy_children = [c for c in old_children if not pruned.in_edges(c)]
    parents = _draw(parent_pool, needy_parents, max(len(old_parents), 1), rng)
    children = _draw(child_pool, needy_children, max(len(old_children), 1), rng)
    row = rng.normal(0.0, creation_init_std, size=table.dim)
    token_id = table.append_row(row, trainable=True)
    text = f"created {pruned.fresh_id()}"
    new_kg, new_id = insert_node(pruned, level, text, [token_id], parents, children)
    report = validate(new_kg)
    if not report.ok:
        raise NoValidEndpoints(f"replacement left the graph invalid: {report.codes()}")
    return CreateResult(new_kg, new_id, token_id, parents, children)


def _draw(pool: list[str], required: list[str], k: int, rng: np.random.Generator) -> list[str]:
    chosen = list(required)
    rest = [p for p in pool if p not in chosen]
    extra = max(0, min(k - len(chosen), len(rest)))
    if extra:
        chosen += [rest[i] for i in sorted(rng.choice(len(rest), size=extra, replace=False))]
    return chosen


@dataclass
class PassRecord:
    pass_index: int
    t: int
    m_t: float
    m_ref: float
    dm: float
    K: int
    adapted: list[str] = field(default_factory=list)
    pruned: list[str] = field(default_factory=list)
    created: list[str] = field(default_factory=list)
    loss: float | None = None
    auc: float | None = None
    seconds: float = 0.0
    flops: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class AdaptiveEngine:
    """Deployed model plus the streaming adaptation state."""

    def __init__(
        self,
        model: DecisionModel,
        cfg: AdaptationConfig = AdaptationConfig(),
        seed: int = 0,
        enabled: bool = True,
        loss_cfg: LossConfig = LossConfig(),
        on_structure_change: Callable[[int, ReasoningKG], None] | None = None,
    ):
        self.model = model
        self.cfg = cfg
        self.enabled = enabled
        self.loss_cfg = loss_cfg
        self.rng = np.random.default_rng(seed)
        self.buffer = ScoreBuffer(cfg.N, cfg.lag)
        self.tracker = DivergenceTracker(cfg.patience)
        self.opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.t = 0
        self.passes = 0
        self.adapt_steps = 0
        self.cumulative: dict[str, float] = {}
        self.origin: dict[str, np.ndarray] = {}
        self.on_structure_change = on_structure_change
        self._recent: np.ndarray | None = None

    def score_chunk(self, frames: np.ndarray) -> np.ndarray:
        """Score consecutive frames with the current parameters and buffer them."""
        frames = np.asarray(frames, dtype=np.float64)
        T = self.model.window
        if self._recent is None:
            ctx = np.repeat(frames[:1], T - 1, axis=0)
        else:
            ctx = self._recent
        full = np.concatenate([ctx, frames], axis=0)
        windows = np.arange(len(frames))[:, None] + np.arange(T)[None, :]
        scores = self.model.anomaly_scores(full, windows)
        scores = np.clip(scores, 0.0, 1.0)
        for i, s in enumerate(scores):
            self.buffer.push(self.t, float(s), full[i: i + T].copy())
            self.t += 1
        self._recent = full[len(full) - (T - 1):] if T > 1 else full[:0]
        return scores

    def adaptation_pass(self) -> PassRecord | None:
        if not self.buffer.ready():
            return None
        start = time.perf_counter()
        shift = mean_shift(self.buffer)
        K = compute_K(shift.dm, self.cfg.N)
        rec = PassRecord(self.passes, self.t, shift.m_t, shift.m_ref, shift.dm, K)
        self.passes += 1
        if K == 0 or not self.enabled:
            rec.seconds = time.perf_counter() - start
            return rec
        if self.cfg.displacement == "origin":
            self.snapshot_origin()
        pseudo = select_topk(self.buffer, K, self.cfg.anomaly_class)
        pseudo += select_negatives(self.buffer, K, self.cfg.negatives)
        report = adapt_step(self.model, pseudo, self.opt, self.cfg.kg_index, self.loss_cfg)
        self.adapt_steps += 1
        rec.loss = report.loss
        rec.flops = estimate_adapt_flops(self.model, len(pseudo))
        kg = self.model.kgs[self.cfg.kg_index]
        disp = report.displacement
        if self.cfg.displacement == "origin":
            disp = {nid: self._origin_distance(kg, nid) for nid in disp}
        rec.adapted = sorted(n for n, d in disp.items() if d > 0)
        for nid, d in report.displacement.items():
            self.cumulative[nid] = self.cumulative.get(nid, 0.0) + d
        if self.cfg.structural:
            for nid in sorted(disp):
                if self.tracker.decide(nid, disp[nid]) == "prune" and nid in self.model.kgs[self.cfg.kg_index].nodes:
                    res = prune_and_create(self.model.kgs[self.cfg.kg_index], self.model.table, nid, self.cfg.creation_init_std, self.rng)
                    self.model.set_kg(self.cfg.kg_index, res.kg)
                    self.tracker.reset(nid)
                    rec.pruned.append(nid)
                    rec.created.append(res.new_id)
                    if self.on_structure_change is not None:
                        self.on_structure_change(self.passes, res.kg)
        rec.seconds = time.perf_counter() - start
        return rec

    def _origin_distance(self, kg: ReasoningKG, node_id: str) -> float:
        rows = self.model.table.matrix[list(kg.nodes[node_id].token_ids)]
        base = self.origin.get(node_id)
        return 0.0 if base is None else float(np.linalg.norm(rows - base))

    def snapshot_origin(self) -> None:
        """Remember current token rows of every node not yet seen (origin displacement mode)."""
        for kg in self.model.kgs:
            for n in kg.concept_nodes():
                self.origin.setdefault(n.id, self.model.table.matrix[list(n.token_ids)].copy())


def estimate_adapt_flops(model: DecisionModel, batch: int) -> int:
    """Rough multiply-add count of one adaptation step (forward + ~2x backward)."""
    T = model.window
    per_frame = 0
    for stack, kg in zip(model.stacks, model.kgs):
        V = len(kg.nodes)
        for p in stack.layers:
            out_d, in_d = p.W.shape
            per_frame += 2 * V * out_d * in_d + 4 * V * out_d + 2 * V * V * out_d
    M = model.temporal.model_dim
    D = model.temporal.d_in
    ffn = model.temporal.params["block0.ff1.W"].shape[0] if model.temporal.blocks else 0
    per_window = 2 * T * (D * M + M * D) + model.temporal.blocks * 2 * T * (4 * M * M + 2 * M * ffn + 2 * T * M)
    per_window += 2 * D * (model.head.n_anomalies + 1)
    forward = batch * (T * per_frame + per_window)
    return int(3 * forward)


def run_adaptation_loop(
    engine: AdaptiveEngine,
    frames: np.ndarray,
    evaluate: Callable[[DecisionModel, int], float] | None = None,
    metrics_file=None,
) -> list[PassRecord]:
    """Feed ``frames`` in cadence-sized chunks; one adaptation pass after each chunk.

    ``evaluate(model, t)`` (optional) supplies the AUC stored in each record.
    """
    frames = np.asarray(frames, dtype=np.float64)
    records = []
    c = engine.cfg.cadence
    for lo in range(0, len(frames), c):
        engine.score_chunk(frames[lo: lo + c])
        rec = engine.adaptation_pass()
        if rec is None:
            continue
        if evaluate is not None:
            rec.auc = float(evaluate(engine.model, engine.t))
        records.append(rec)
        if metrics_file is not None:
            metrics_file.write(rec.to_json() + "\n")
    return records


def self_consistent(records: Iterable[PassRecord], N: int) -> bool:
    """Every logged K equals floor(|m_t - m_ref| * N) when negative, else 0."""
    return all(r.K == compute_K(r.m_t - r.m_ref, N) for r in records)
