"""One structured config for every tunable constant, loaded from and dumped to JSON.

Unknown keys are rejected at every nesting level so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class KGSection:
    mission: str = "stealing"
    depth: int = 2
    max_correction_iters: int = 3
    source: str = "mock"


@dataclass
class EmbeddingSection:
    dim: int = 64
    init_std: float = 0.02
    vocab_path: str | None = None


@dataclass
class ModelSection:
    gnn_dim: int = 8
    window: int = 3
    model_dim: int = 128
    heads: int = 8
    blocks: int = 1
    ffn_dim: int | None = None
    n_anomalies: int = 1


@dataclass
class OptimizerSection:
    lr: float = 1e-5
    weight_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # decaying threshold; carried for completeness, no code path reads it
    alpha_d: float = 0.9999


@dataclass
class LossSection:
    lambda_spa: float = 0.001
    lambda_smt: float = 0.001


@dataclass
class TrainingSection:
    steps: int = 3000
    batch: int = 128


@dataclass
class AdaptationSection:
    N: int = 100
    reference_lag: int | None = None
    cadence: int = 50
    lr: float = 1e-2
    weight_decay: float = 0.0
    patience: int = 3
    creation_init_std: float = 0.02
    displacement: str = "consecutive"
    negatives: str = "bottom_k"
    structural: bool = True


@dataclass
class RetrievalSection:
    k: int = 5
    metric: str = "euclidean"


@dataclass
class WorldSection:
    """Synthetic concept space and stream statistics for desk-scale runs."""

    concepts: tuple[str, ...] = ("scene", "walking", "shopping", "idle", "stealing", "robbery", "explosion")
    weak_pairs: tuple[tuple[str, str], ...] = (("stealing", "robbery"),)
    strong_pairs: tuple[tuple[str, str], ...] = (("stealing", "explosion"),)
    related: tuple[tuple[str, str, float], ...] = (("stealing", "shopping", 0.7),)
    normal: str = "walking"
    normal_pool: tuple[str, ...] = ("walking", "shopping", "idle")
    scene: str = "scene"
    noise_std: float = 0.1
    activity_weight: float = 0.5
    activity_jitter: float = 0.0
    anomaly_share: float = 0.5
    anomaly_rate: float = 0.2
    burst: int = 4
    pattern: str = "random"
    filler: bool = False
    table_scale: float = 1.0


@dataclass
class ExperimentSection:
    initial: str = "stealing"
    shifted: str = "robbery"
    train_frames: int = 4000
    # desk-scale initial training; the optimizer section keeps the reference constants
    train_steps: int = 300
    train_lr: float = 1e-3
    train_weight_decay: float = 0.1
    pre_passes: int = 20
    post_passes: int = 220
    test_frames: int = 1000


@dataclass
class PathsSection:
    out_dir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0
    kg: KGSection = field(default_factory=KGSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    adaptation: AdaptationSection = field(default_factory=AdaptationSection)
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)
    world: WorldSection = field(default_factory=WorldSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        return build(cls, doc)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_dict(load_json(path))


def load_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def build(cls, doc: dict | None, where: str = ""):
    """Instantiate dataclass ``cls`` from a (possibly partial) dict; missing keys keep defaults."""
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where or cls.__name__}; allowed: {sorted(names)}")
    kwargs: dict[str, Any] = {}
    for key, value in doc.items():
        hint = hints[key]
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(hint):
            kwargs[key] = build(hint, value, path)
        else:
            kwargs[key] = _coerce(value, hint, path)
    return cls(**kwargs)


def _coerce(value, hint, path):
    text = str(hint)
    if isinstance(value, list) and "tuple" in text:
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def derive_seed(root: int, name: str) -> int:
    """Stable per-module seed: sha256 of ``"{root}:{name}"`` folded to 31 bits."""
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF
