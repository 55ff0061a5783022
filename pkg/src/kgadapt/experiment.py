"""Adaptive-versus-static comparison under a scheduled anomaly-trend shift.

One model is trained on the initial anomaly, deployed twice on the identical
stream, and only one copy adapts. After every adaptation pass both copies
are evaluated on a frozen labelled test slice of whichever anomaly is
active at that moment.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass

import numpy as np

from .adaptation import AdaptationConfig, AdaptiveEngine, PassRecord, run_adaptation_loop
from .config import RunConfig, derive_seed
from .embedding_space import TokenEmbeddingTable, Vocabulary
from .kg_builder import GenerationConfig, MockKnowledgeSource, generate_kg
from .kg_model import ReasoningKG
from .model import DecisionModel
from .retrieval import interpret_kg, node_words
from .stream_sim import AnomalyPhase, FrameStream, StreamConfig, auc, generate_stream, make_concepts, semantic_table
from .training import LossConfig, TrainConfig, train


@dataclass
class ArmResult:
    name: str
    records: list[PassRecord]
    auc: list[float]
    final_kg: ReasoningKG
    final_table: TokenEmbeddingTable
    seconds: float
    checkpoint_unchanged: bool


@dataclass
class ExperimentResult:
    config: RunConfig
    shift_pass: int  # index of the first pass whose evaluation uses the shifted anomaly
    arms: dict[str, ArmResult]
    summary: dict
    retrieval: dict

    def series_lines(self) -> list[str]:
        lines = []
        for name in ("adaptive", "static"):
            arm = self.arms[name]
            for rec, a in zip(arm.records, arm.auc):
                events = []
                if rec.pass_index == self.shift_pass:
                    events.append("shift")
                events += [f"prune:{p}" for p in rec.pruned] + [f"create:{c}" for c in rec.created]
                row = {"pass": rec.pass_index, "arm": name, "auc": round(a, 12), "m_t": round(rec.m_t, 12),
                       "dm": round(rec.dm, 12), "K": rec.K, "events": events}
                lines.append(json.dumps(row, sort_keys=True))
        return lines

    def report_text(self) -> str:
        return "\n".join(self.series_lines()) + "\n"

    def summary_text(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


@dataclass
class World:
    concepts: dict
    vocab: Vocabulary
    table: TokenEmbeddingTable
    kg: ReasoningKG


def build_world(cfg: RunConfig) -> World:
    w = cfg.world
    concepts = make_concepts(w.concepts, w.weak_pairs, w.strong_pairs, derive_seed(cfg.seed, "concepts"),
                             cfg.embedding.dim, w.related)
    vocab = Vocabulary.default()
    table = semantic_table(vocab, concepts, derive_seed(cfg.seed, "table"), w.table_scale)
    src = MockKnowledgeSource(seed=derive_seed(cfg.seed, "kg_builder"))
    gen = GenerationConfig(depth=cfg.kg.depth, max_correction_iters=cfg.kg.max_correction_iters)
    kg = generate_kg(cfg.experiment.initial, gen, src, vocab)
    return World(concepts, vocab, table, kg)


def _stream(cfg: RunConfig, concepts, schedule, n, name, pattern=None) -> FrameStream:
    w = cfg.world
    sc = StreamConfig(
        normal=w.normal, schedule=schedule, anomaly_rate=w.anomaly_rate, noise_std=w.noise_std,
        total_frames=n, seed=derive_seed(cfg.seed, name), scene=w.scene, activity_weight=w.activity_weight,
        burst=w.burst, pattern=pattern or w.pattern, normal_pool=tuple(w.normal_pool),
        anomaly_share=w.anomaly_share, activity_jitter=w.activity_jitter, filler=w.filler,
    )
    return generate_stream(sc, concepts)


def train_initial(cfg: RunConfig, world: World) -> DecisionModel:
    r, e = cfg, cfg.experiment
    m = r.model
    model = DecisionModel.create(
        [world.kg], world.table, n_anomalies=m.n_anomalies, gnn_dim=m.gnn_dim, window=m.window,
        model_dim=m.model_dim, heads=m.heads, blocks=m.blocks, ffn_dim=m.ffn_dim, seed=derive_seed(cfg.seed, "model"),
    )
    stream = _stream(cfg, world.concepts, [AnomalyPhase(e.initial, 0, e.train_frames)], e.train_frames, "train")
    tc = TrainConfig(
        steps=e.train_steps, batch=r.training.batch, lr=e.train_lr, weight_decay=e.train_weight_decay,
        beta1=r.optimizer.beta1, beta2=r.optimizer.beta2, eps=r.optimizer.eps,
        seed=derive_seed(cfg.seed, "training"), loss=LossConfig(r.loss.lambda_spa, r.loss.lambda_smt),
    )
    train(model, stream.frames, stream.labels, tc)
    return model


def adaptation_config(run: RunConfig) -> AdaptationConfig:
    a = run.adaptation
    return AdaptationConfig(
        N=a.N, reference_lag=a.reference_lag, cadence=a.cadence, lr=a.lr, weight_decay=a.weight_decay,
        patience=a.patience, creation_init_std=a.creation_init_std, displacement=a.displacement,
        negatives=a.negatives, structural=a.structural,
    )


def run_experiment(cfg: RunConfig, model: DecisionModel | None = None, world: World | None = None) -> ExperimentResult:
    e, a = cfg.experiment, cfg.adaptation
    world = world or build_world(cfg)
    model = model or train_initial(cfg, world)
    lag = a.N if a.reference_lag is None else a.reference_lag
    # enough frames before the first pass to fill the current and reference windows
    warm = a.cadence * -(-(a.N + lag) // a.cadence) - a.cadence
    shift_t = warm + e.pre_passes * a.cadence
    total = shift_t + e.post_passes * a.cadence
    schedule = [AnomalyPhase(e.initial, 0, shift_t), AnomalyPhase(e.shifted, shift_t, total)]
    deploy = _stream(cfg, world.concepts, schedule, total, "deploy")
    tests = {
        c: _stream(cfg, world.concepts, [AnomalyPhase(c, 0, e.test_frames)], e.test_frames, f"test:{c}", "periodic")
        for c in (e.initial, e.shifted)
    }

    def evaluate(m: DecisionModel, t: int) -> float:
        concept = e.initial if t <= shift_t else e.shifted
        ts = tests[concept]
        return auc(m.anomaly_scores(ts.frames), ts.labels)

    arms = {}
    for name, enabled in (("adaptive", True), ("static", False)):
        m = copy.deepcopy(model)
        before = m.checkpoint_bytes() + m.table.to_bytes()
        engine = AdaptiveEngine(m, adaptation_config(cfg), seed=derive_seed(cfg.seed, "adaptation"), enabled=enabled,
                                loss_cfg=LossConfig(cfg.loss.lambda_spa, cfg.loss.lambda_smt))
        start = time.perf_counter()
        records = run_adaptation_loop(engine, deploy.frames, evaluate)
        seconds = time.perf_counter() - start
        after = m.checkpoint_bytes() + m.table.to_bytes()
        arms[name] = ArmResult(name, records, [r.auc for r in records], m.kgs[0], m.table, seconds, before == after)

    shift_pass = next(i for i, r in enumerate(arms["adaptive"].records) if r.t > shift_t)
    summary = summarize(arms, shift_pass)
    retrieval = retrieval_drift(world, model, arms["adaptive"], e.shifted, cfg.retrieval.k)
    summary["retrieval"] = {k: v for k, v in retrieval.items() if k != "words"}
    return ExperimentResult(cfg, shift_pass, arms, summary, retrieval)


def summarize(arms: dict[str, ArmResult], shift_pass: int, recovery_fraction: float = 0.95) -> dict:
    ad, st = arms["adaptive"].auc, arms["static"].auc
    pre = float(np.mean(ad[max(0, shift_pass - 5): shift_pass]))
    at_shift = ad[shift_pass]
    post = ad[shift_pass:]
    target = recovery_fraction * pre
    recovered = next((i for i, v in enumerate(post) if v >= target and i > 0), None)
    if post[0] >= target:
        recovered = 0
    return {
        "shift_pass": shift_pass,
        "passes": len(ad),
        "pre_shift_auc": pre,
        "auc_at_shift": at_shift,
        "drop": pre - at_shift,
        "recovery_target": target,
        "passes_to_recover": recovered,
        "adaptive_final_auc": ad[-1],
        "static_final_auc": st[-1],
        "final_gap": ad[-1] - st[-1],
        "adapt_steps": sum(1 for r in arms["adaptive"].records if r.K > 0),
        "structural_events": sum(len(r.pruned) for r in arms["adaptive"].records),
        "static_checkpoint_unchanged": arms["static"].checkpoint_unchanged,
        "seconds": {n: arm.seconds for n, arm in arms.items()},
    }


def most_adapted_node(kg: ReasoningKG, table: TokenEmbeddingTable, baseline: TokenEmbeddingTable) -> str:
    """Concept node whose token rows moved furthest from the deployed table (ties: lowest id order)."""
    best, best_d = None, -1.0
    for n in kg.ordered_nodes():
        if n.kind != "concept":
            continue
        rows = list(n.token_ids)
        base = np.stack([baseline.matrix[r] if r < baseline.n_rows else np.zeros(table.dim) for r in rows])
        d = float(np.linalg.norm(table.matrix[rows] - base))
        if d > best_d:
            best, best_d = n.id, d
    return best


def retrieval_drift(world: World, deployed: DecisionModel, arm: ArmResult, shifted: str, k: int) -> dict:
    from .lexicon import CONCEPT_WORDS

    seed_word = CONCEPT_WORDS[shifted][0]
    node = most_adapted_node(arm.final_kg, arm.final_table, deployed.table)
    after = interpret_kg(arm.final_kg, arm.final_table, world.vocab, k)
    words_after = node_words(after, node)
    if node in deployed.kgs[0].nodes:
        before = interpret_kg(deployed.kgs[0], deployed.table, world.vocab, k)
        words_before = node_words(before, node)
    else:
        words_before = []
    return {
        "node": node,
        "text": arm.final_kg.nodes[node].text,
        "seed_word": seed_word,
        "found_after": seed_word in words_after,
        "found_before": seed_word in words_before,
        "words": {"before": words_before, "after": words_after},
    }
