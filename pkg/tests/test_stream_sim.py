from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgadapt.embedding_space import Vocabulary
from kgadapt.lexicon import CONCEPT_WORDS
from kgadapt.stream_sim import (
    AnomalyPhase,
    SingleClass,
    StreamConfig,
    TooManyConceptsForDim,
    auc,
    generate_stream,
    make_concepts,
    semantic_table,
)

from oracles import pair_auc

NAMES = ("scene", "walking", "stealing", "robbery", "explosion")


@pytest.fixture
def concepts():
    return make_concepts(NAMES, [("stealing", "robbery")], [("stealing", "explosion")], seed=4)


class TestConcepts:
    def test_unit_norm(self, concepts):
        for c in concepts.values():
            assert abs(np.linalg.norm(c.direction) - 1.0) <= 1e-9

    def test_strong_orthogonal(self, concepts):
        assert abs(concepts["stealing"].direction @ concepts["explosion"].direction) <= 1e-6

    def test_weak_cosine(self, concepts):
        a, b = concepts["stealing"].direction, concepts["robbery"].direction
        assert abs(a @ b - 0.8) <= 1e-6
        # b = 0.8 a + 0.6 a_perp with a_perp a unit vector orthogonal to a
        perp = (b - 0.8 * a) / 0.6
        assert abs(np.linalg.norm(perp) - 1.0) <= 1e-9 and abs(perp @ a) <= 1e-9

    def test_related_cosine(self):
        c = make_concepts(NAMES, related=[("stealing", "robbery", 0.6)], seed=1)
        assert abs(c["stealing"].direction @ c["robbery"].direction - 0.6) <= 1e-6

    def test_seeded(self, concepts):
        again = make_concepts(NAMES, [("stealing", "robbery")], [("stealing", "explosion")], seed=4)
        assert all(np.array_equal(concepts[n].direction, again[n].direction) for n in NAMES)

    def test_too_many(self):
        with pytest.raises(TooManyConceptsForDim):
            make_concepts([f"c{i}" for i in range(5)], dim=4)

    def test_distinct_names(self):
        with pytest.raises(ValueError):
            make_concepts(["a", "a"])


def _cfg(**kw):
    base = dict(normal="walking", schedule=[AnomalyPhase("stealing", 0, 10_000)], total_frames=2000, seed=3)
    base.update(kw)
    return StreamConfig(**base)


class TestStream:
    def test_rate_zero(self, concepts):
        assert not generate_stream(_cfg(anomaly_rate=0.0), concepts).labels.any()

    def test_noise_free_anomaly_is_concept(self, concepts):
        s = generate_stream(_cfg(noise_std=0.0, scene=None, total_frames=400), concepts)
        anomalous = s.frames[s.labels > 0]
        assert len(anomalous) > 0
        assert np.allclose(anomalous, concepts["stealing"].direction, rtol=0, atol=1e-15)

    def test_label_fraction(self, concepts):
        s = generate_stream(_cfg(total_frames=10_000, anomaly_rate=0.2), concepts)
        assert abs(s.labels.mean() - 0.2) <= 0.02

    def test_periodic_fraction_exact(self, concepts):
        s = generate_stream(_cfg(total_frames=1000, anomaly_rate=0.2, pattern="periodic"), concepts)
        assert s.labels.mean() == pytest.approx(0.2, abs=0.005)

    def test_labels_follow_schedule(self, concepts):
        sched = [AnomalyPhase("stealing", 100, 500), AnomalyPhase("robbery", 500, 900)]
        s = generate_stream(_cfg(schedule=sched, total_frames=1000, anomaly_rate=0.5), concepts)
        assert not s.labels[:100].any() and not s.labels[900:].any()
        assert {s.concepts[t] for t in range(1000) if s.labels[t]} == {"stealing", "robbery"}
        assert all(s.concepts[t] == "stealing" for t in range(100, 500) if s.labels[t])

    def test_bit_deterministic(self, concepts):
        a = generate_stream(_cfg(noise_std=0.2, filler=True, anomaly_share=0.5), concepts)
        b = generate_stream(_cfg(noise_std=0.2, filler=True, anomaly_share=0.5), concepts)
        assert a.frames.tobytes() == b.frames.tobytes() and a.labels.tobytes() == b.labels.tobytes()

    def test_filler_balances_energy(self, concepts):
        s = generate_stream(_cfg(noise_std=0.0, filler=True, anomaly_share=0.5, total_frames=4000, scene=None), concepts)
        # noise-free norms: anomalous and filled normal frames mix two unit vectors with equal weights
        proj = s.frames @ concepts["stealing"].direction
        assert np.all(proj[s.labels > 0] >= 0.5 - 1e-12)
        assert abs(proj[s.labels == 0].mean()) < 0.02

    def test_overlapping_schedule(self):
        with pytest.raises(ValueError):
            _cfg(schedule=[AnomalyPhase("a", 0, 10), AnomalyPhase("b", 5, 20)])

    @pytest.mark.parametrize("kw", [{"anomaly_share": 0.0}, {"anomaly_rate": 1.5}, {"pattern": "bursty"},
                                    {"activity_weight": 0.9, "activity_jitter": 0.2}])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            _cfg(**kw)


class TestAuc:
    def test_perfect(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_reversed(self):
        assert auc([0.1, 0.2, 0.9, 0.8], [1, 1, 0, 0]) == 0.0

    def test_all_tied(self):
        assert auc([0.5] * 4, [1, 0, 1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auc([0.1, 0.2], [0, 0])

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2)), min_size=2, max_size=60))
    @settings(max_examples=200)
    def test_matches_pair_oracle(self, data):
        scores = [s / 5 for s, _ in data]
        labels = [y for _, y in data]
        if len(set(y > 0 for y in labels)) < 2:
            return
        assert auc(scores, labels) == pytest.approx(pair_auc(scores, labels), abs=1e-12)


class TestSemanticTable:
    def test_seed_word_on_concept(self, concepts):
        vocab = Vocabulary.default()
        table = semantic_table(vocab, concepts, seed=0)
        for name in ("stealing", "robbery"):
            row = table.matrix[vocab.index[CONCEPT_WORDS[name][0]]]
            assert np.allclose(row, concepts[name].direction, rtol=0, atol=1e-12)
        assert np.allclose(np.linalg.norm(table.matrix, axis=1), 1.0)
        assert not table.trainable_mask.any()
