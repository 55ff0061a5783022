"""Loss, gradients, AdamW and the pre-deployment training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .model import TOKENS, DecisionModel, group_of


class LabelOutOfRange(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class DataExhausted(RuntimeError):
    pass


@dataclass
class LossConfig:
    lambda_spa: float = 0.001
    lambda_smt: float = 0.001


@dataclass
class LossParts:
    total: float
    ce: float
    spa: float
    smt: float


def loss(scores: Sequence[Sequence[float]], labels: Sequence[int], cfg: LossConfig = LossConfig()) -> LossParts:
    """Cross-entropy + sparsity (p_A on normal frames) + smoothness of p_A over time."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(s) != len(y) or len(y) == 0:
        raise ValueError("scores and labels must have equal, non-zero length")
    if np.any(y < 0) or np.any(y >= s.shape[1]):
        raise LabelOutOfRange(f"labels must lie in 0..{s.shape[1] - 1}")
    ce = float(np.mean(-np.log(s[np.arange(len(y)), y])))
    p_a = 1.0 - s[:, 0]
    spa = float(p_a[y == 0].mean()) if np.any(y == 0) else 0.0
    smt = float(np.mean(np.diff(p_a) ** 2)) if len(p_a) > 1 else 0.0
    return LossParts(ce + cfg.lambda_spa * spa + cfg.lambda_smt * smt, ce, spa, smt)


def loss_tape(logits: ad.Tensor, labels: Sequence[int], cfg: LossConfig) -> tuple[ad.Tensor, LossParts]:
    y = np.asarray(labels, dtype=int)
    L, C = logits.shape
    if np.any(y < 0) or np.any(y >= C):
        raise LabelOutOfRange(f"labels must lie in 0..{C - 1}")
    onehot = np.zeros((L, C))
    onehot[np.arange(L), y] = 1.0
    ce = ad.mul(ad.sum(ad.mul(ad.log_softmax(logits, axis=-1), onehot)), -1.0 / L)
    p = ad.softmax(logits, axis=-1)
    first = np.zeros((C, 1))
    first[0, 0] = 1.0
    p_a = ad.sub(1.0, ad.reshape(ad.matmul(p, first), (L,)))
    normal = (y == 0).astype(np.float64)
    spa = ad.mul(ad.sum(ad.mul(p_a, normal)), 1.0 / normal.sum()) if normal.any() else ad.Tensor(0.0)
    if L > 1:
        diff = np.zeros((L - 1, L))
        diff[np.arange(L - 1), np.arange(1, L)] = 1.0
        diff[np.arange(L - 1), np.arange(L - 1)] = -1.0
        d = ad.matmul(diff, ad.reshape(p_a, (L, 1)))
        smt = ad.mean(ad.mul(d, d))
    else:
        smt = ad.Tensor(0.0)
    total = ad.add(ce, ad.add(ad.mul(spa, cfg.lambda_spa), ad.mul(smt, cfg.lambda_smt)))
    return total, LossParts(float(total.data), float(ce.data), float(spa.data), float(smt.data))


def gradients(
    model: DecisionModel,
    frames: np.ndarray,
    windows: np.ndarray,
    labels: Sequence[int],
    groups: Iterable[str],
    cfg: LossConfig = LossConfig(),
    train: bool = True,
    update_stats: bool = False,
) -> tuple[LossParts, dict[str, np.ndarray]]:
    """Loss and exact reverse-mode gradients for every parameter in ``groups``.

    Parameters outside ``groups`` are recorded as constants and get no gradient entry.
    """
    tensors = model.tensors(groups)
    logits = model.logits_tape(frames, windows, tensors, train=train, update_stats=update_stats)
    total, parts = loss_tape(logits, labels, cfg)
    total.backward()
    grads = {}
    for name, t in tensors.items():
        if t.requires_grad:
            grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
    return parts, grads


def full_loss(
    model: DecisionModel,
    frames: np.ndarray,
    windows: np.ndarray,
    labels: Sequence[int],
    cfg: LossConfig = LossConfig(),
    train: bool = True,
) -> float:
    logits = model.logits_tape(frames, windows, model.tensors(), train=train, update_stats=False)
    return loss_tape(logits, labels, cfg)[1].total


@dataclass
class AdamW:
    lr: float = 1e-5
    weight_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(
        self,
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
        row_masks: Mapping[str, np.ndarray] | None = None,
    ) -> None:
        """Decoupled-weight-decay Adam update, in place.

        Only names present in ``grads`` move. ``row_masks`` restricts an
        update to selected rows (the rest stay bit-identical).
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
            m = self._moment(self.m, name, p)
            v = self._moment(self.v, name, p)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps) + self.lr * self.weight_decay * p
            mask = None if row_masks is None else row_masks.get(name)
            if mask is None:
                p -= update
            else:
                p[mask] -= update[mask]

    @staticmethod
    def _moment(store: dict[str, np.ndarray], name: str, p: np.ndarray) -> np.ndarray:
        cur = store.get(name)
        if cur is None:
            cur = store[name] = np.zeros_like(p)
        elif cur.shape != p.shape:
            # the token table grows when nodes are created; new rows start from zero moments
            grown = np.zeros_like(p)
            grown[: cur.shape[0]] = cur[: p.shape[0]]
            cur = store[name] = grown
        return cur


@dataclass
class TrainConfig:
    steps: int = 3000
    batch: int = 128
    lr: float = 1e-5
    weight_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    groups: tuple[str, ...] = ("gnn", "temporal", "decision")
    loss: LossConfig = field(default_factory=LossConfig)


def train(model: DecisionModel, frames: np.ndarray, labels: np.ndarray, cfg: TrainConfig, log=None) -> list[dict]:
    """Mini-batch training on contiguous segments of a labelled frame stream.

    Each step draws a segment of ``cfg.batch`` consecutive frames (with their
    causal windows) so the smoothness term sees real temporal neighbours.
    Returns one record per step; ``log`` (a writable text file) receives them
    as JSON lines.
    """
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    T = model.window
    if len(frames) < cfg.batch + T - 1:
        raise DataExhausted(f"need at least {cfg.batch + T - 1} frames, got {len(frames)}")
    if TOKENS in cfg.groups:
        raise ValueError("token embeddings stay frozen during initial training")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    params = model.named_params()
    records = []
    for step in range(cfg.steps):
        start = int(rng.integers(T - 1, len(frames) - cfg.batch + 1))
        lo = start - (T - 1)
        seg = frames[lo: start + cfg.batch]
        windows = np.arange(cfg.batch)[:, None] + np.arange(T)[None, :]
        parts, grads = gradients(model, seg, windows, labels[start: start + cfg.batch], cfg.groups, cfg.loss, train=True, update_stats=True)
        opt.step(params, grads)
        rec = {"step": step, "loss": parts.total, "ce": parts.ce, "spa": parts.spa, "smt": parts.smt}
        records.append(rec)
        if log is not None:
            log.write(json.dumps(rec) + "\n")
    return records


def frozen_groups(trainable: Iterable[str]) -> list[str]:
    trainable = set(trainable)
    return [g for g in ("gnn", "temporal", "decision", TOKENS) if g not in trainable]


def group_names(model: DecisionModel, group: str) -> list[str]:
    return [n for n in model.named_params() if group_of(n) == group]
