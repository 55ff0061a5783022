"""Synthetic labelled frame streams with scheduled anomaly-trend shifts, plus AUC.

Frames live in the same space as token embeddings. Each concept is a unit
direction; a frame is a convex mix of a static scene direction and the
direction of whatever activity is happening (a normal one, or the anomaly
scheduled for that time), plus isotropic Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .embedding_space import TokenEmbeddingTable, Vocabulary, synthetic_frame
from .lexicon import CONCEPT_WORDS

WEAK_COSINE = 0.8
STRONG_COSINE = 0.0


class TooManyConceptsForDim(ValueError):
    pass


class SingleClass(ValueError):
    pass


@dataclass(frozen=True)
class ConceptSpec:
    name: str
    direction: np.ndarray


def make_concepts(
    names: Sequence[str],
    weak_pairs: Sequence[tuple[str, str]] = (),
    strong_pairs: Sequence[tuple[str, str]] = (),
    seed: int = 0,
    dim: int = 64,
    related: Sequence[tuple[str, str, float]] = (),
) -> dict[str, ConceptSpec]:
    """Unit directions: pairwise orthogonal except weak pairs (cosine 0.8) and ``related`` triples.

    For a weak pair ``(a, b)`` the second direction is rebuilt as
    ``0.8 * a + 0.6 * b_perp`` with ``b_perp`` its own orthonormal basis
    vector. A triple ``(a, b, c)`` does the same with cosine ``c``.
    """
    names = list(names)
    if len(set(names)) != len(names):
        raise ValueError("concept names must be distinct")
    if len(names) > dim:
        raise TooManyConceptsForDim(f"{len(names)} concepts do not fit in {dim} dimensions")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dim, len(names))))
    basis = {n: q[:, i] for i, n in enumerate(names)}
    dirs = dict(basis)
    targets = [(a, b, WEAK_COSINE) for a, b in weak_pairs] + [(a, b, float(c)) for a, b, c in related]
    for a, b, c in targets:
        if not -1.0 <= c <= 1.0:
            raise ValueError(f"cosine {c} outside [-1, 1]")
        dirs[b] = c * dirs[a] + np.sqrt(1.0 - c * c) * basis[b]
    for a, b, c in targets:
        if abs(dirs[a] @ dirs[b] - c) > 1e-6:
            raise ValueError(f"pair ({a}, {b}) conflicts with another constraint")
    for a, b in strong_pairs:
        if abs(dirs[a] @ dirs[b] - STRONG_COSINE) > 1e-6:
            raise ValueError(f"strong pair ({a}, {b}) conflicts with a weak pair")
    return {n: ConceptSpec(n, dirs[n] / np.linalg.norm(dirs[n])) for n in names}


@dataclass(frozen=True)
class AnomalyPhase:
    concept: str
    start: int
    end: int  # exclusive


@dataclass
class StreamConfig:
    normal: str = "walking"
    schedule: list[AnomalyPhase] = field(default_factory=list)
    anomaly_rate: float = 0.2
    noise_std: float = 0.1
    total_frames: int = 1000
    seed: int = 0
    scene: str | None = "scene"
    activity_weight: float = 0.5
    burst: int = 4
    labels: dict[str, int] = field(default_factory=dict)  # concept -> class id, default 1
    normal_pool: tuple[str, ...] = ()  # if set, each normal frame draws its activity from these
    anomaly_share: float = 1.0  # part of the activity weight an anomaly takes over; the rest stays normal
    activity_jitter: float = 0.0  # per-frame activity weight ~ U(w - jitter, w + jitter)
    pattern: str = "random"  # "random" bursts, or "periodic": one burst every burst/anomaly_rate frames
    # normal frames give the anomaly's share of the activity to a fresh random unit direction,
    # so an anomaly cannot be told apart by what it displaces
    filler: bool = False

    def __post_init__(self):
        if self.pattern not in ("random", "periodic"):
            raise ValueError("pattern must be 'random' or 'periodic'")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ValueError("anomaly_rate must lie in [0, 1]")
        if not 0.0 < self.anomaly_share <= 1.0:
            raise ValueError("anomaly_share must lie in (0, 1]")
        lo, hi = self.activity_weight - self.activity_jitter, self.activity_weight + self.activity_jitter
        if self.activity_jitter < 0 or lo < 0 or hi > 1:
            raise ValueError("activity weight range must stay inside [0, 1]")
        prev_end = 0
        for ph in self.schedule:
            if ph.start < prev_end or ph.end < ph.start:
                raise ValueError("anomaly schedule must be ordered and non-overlapping")
            prev_end = ph.end


@dataclass
class FrameStream:
    frames: np.ndarray  # (n, D)
    labels: np.ndarray  # (n,) class ids, 0 = normal
    concepts: list[str]  # active activity concept per frame

    def __len__(self) -> int:
        return len(self.labels)

    def slice(self, lo: int, hi: int) -> FrameStream:
        return FrameStream(self.frames[lo:hi], self.labels[lo:hi], self.concepts[lo:hi])


def generate_stream(cfg: StreamConfig, concepts: Mapping[str, ConceptSpec]) -> FrameStream:
    """Anomalous frames come in bursts of ``cfg.burst`` and only inside scheduled phases.

    With ``pattern="random"`` each burst slot fires with probability
    ``anomaly_rate``; with ``"periodic"`` bursts are evenly spaced at the same rate.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.total_frames
    active: list[str | None] = [None] * n
    for ph in cfg.schedule:
        for t in range(ph.start, min(ph.end, n)):
            active[t] = ph.concept
    is_anom = np.zeros(n, dtype=bool)
    if cfg.pattern == "periodic":
        if cfg.anomaly_rate > 0:
            period = max(cfg.burst, int(round(cfg.burst / cfg.anomaly_rate)))
            for lo in range(period - cfg.burst, n, period):
                is_anom[lo: lo + cfg.burst] = True
    else:
        for lo in range(0, n, cfg.burst):
            if rng.random() < cfg.anomaly_rate:
                is_anom[lo: lo + cfg.burst] = True
    dim = len(next(iter(concepts.values())).direction)
    frames = np.empty((n, dim))
    labels = np.zeros(n, dtype=int)
    names = []
    for t in range(n):
        normal = cfg.normal
        if cfg.normal_pool:
            normal = cfg.normal_pool[int(rng.integers(len(cfg.normal_pool)))]
        a = 1.0
        if cfg.scene:
            a = cfg.activity_weight
            if cfg.activity_jitter:
                a = rng.uniform(a - cfg.activity_jitter, a + cfg.activity_jitter)
        share = a * cfg.anomaly_share
        if is_anom[t] and active[t] is not None:
            act = active[t]
            labels[t] = cfg.labels.get(act, 1)
            parts = [(concepts[act].direction, share), (concepts[normal].direction, a - share)]
        elif cfg.filler:
            act = normal
            u = rng.normal(size=dim)
            parts = [(u / np.linalg.norm(u), share), (concepts[normal].direction, a - share)]
        else:
            act = normal
            parts = [(concepts[normal].direction, a)]
        if cfg.scene:
            parts.insert(0, (concepts[cfg.scene].direction, 1.0 - a))
        parts = [(v, w) for v, w in parts if w > 0]
        frames[t] = synthetic_frame([v for v, _ in parts], [w for _, w in parts], cfg.noise_std, rng)
        names.append(act)
    return FrameStream(frames, labels, names)


def auc(scores, labels) -> float:
    """Mann-Whitney rank AUC; ties get average ranks (count 1/2). Positive = label > 0."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def semantic_table(
    vocab: Vocabulary,
    concepts: Mapping[str, ConceptSpec],
    seed: int = 0,
    scale: float = 1.0,
    relatedness: tuple[float, float] = (0.5, 0.8),
) -> TokenEmbeddingTable:
    """Stand-in for a pretrained joint text/image table.

    Every row has norm ``scale``. A concept's seed word points exactly along
    the concept; its other words have cosine drawn from ``relatedness`` with
    it; everything else points in a random direction.
    """
    rng = np.random.default_rng(seed)
    dim = len(next(iter(concepts.values())).direction)
    rows = rng.normal(size=(len(vocab), dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    for name, words in CONCEPT_WORDS.items():
        if name not in concepts:
            continue
        c = concepts[name].direction
        for j, w in enumerate(words):
            if w not in vocab:
                continue
            i = vocab.index[w]
            if j == 0:
                rows[i] = c
                continue
            rho = rng.uniform(*relatedness)
            u = rows[i] - (rows[i] @ c) * c
            u /= np.linalg.norm(u)
            rows[i] = rho * c + np.sqrt(1 - rho**2) * u
    table = TokenEmbeddingTable(scale * rows, np.zeros(len(vocab), dtype=bool), init_std=scale / np.sqrt(dim), seed=seed)
    return table
