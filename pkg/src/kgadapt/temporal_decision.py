"""Short-term temporal transformer, linear+softmax decision head, score decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad

SINGULAR_EPS = 1e-12


class WindowSizeMismatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def sinusoidal_positions(T: int, dim: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class TemporalModel:
    """Pre-norm transformer encoder over the last ``window`` reasoning embeddings."""

    window: int
    d_in: int
    params: dict[str, np.ndarray]
    model_dim: int = 128
    heads: int = 8
    blocks: int = 1

    @classmethod
    def init(
        cls,
        window: int,
        d_in: int,
        model_dim: int = 128,
        heads: int = 8,
        blocks: int = 1,
        ffn_dim: int | None = None,
        seed: int = 0,
    ) -> TemporalModel:
        if model_dim % heads:
            raise ValueError("model_dim must be divisible by heads")
        rng = np.random.default_rng(seed)
        ffn_dim = ffn_dim or 2 * model_dim
        M = model_dim

        def lin(out_d, in_d):
            return rng.normal(0.0, 1.0 / np.sqrt(in_d), size=(out_d, in_d)), np.zeros(out_d)

        p: dict[str, np.ndarray] = {}
        p["in.W"], p["in.b"] = lin(M, d_in)
        for k in range(blocks):
            pre = f"block{k}."
            p[pre + "ln1.g"], p[pre + "ln1.b"] = np.ones(M), np.zeros(M)
            for name in ("q", "k", "v", "o"):
                p[pre + name + ".W"], p[pre + name + ".b"] = lin(M, M)
            p[pre + "ln2.g"], p[pre + "ln2.b"] = np.ones(M), np.zeros(M)
            p[pre + "ff1.W"], p[pre + "ff1.b"] = lin(ffn_dim, M)
            p[pre + "ff2.W"], p[pre + "ff2.b"] = lin(M, ffn_dim)
        p["lnf.g"], p["lnf.b"] = np.ones(M), np.zeros(M)
        p["out.W"], p["out.b"] = lin(d_in, M)
        return cls(window, d_in, p, model_dim, heads, blocks)


def _linear(x: ad.Tensor, p: Mapping[str, ad.Tensor], name: str) -> ad.Tensor:
    return ad.add(ad.matmul(x, ad.transpose(p[name + ".W"], (1, 0))), p[name + ".b"])


def temporal_tape(model: TemporalModel, window: ad.Tensor, p: Mapping[str, ad.Tensor]) -> ad.Tensor:
    """(B, T, D) -> (B, D): the encoder output at the last window slot."""
    B, T, D = window.shape
    if T != model.window:
        raise WindowSizeMismatch(f"window has {T} rows, model expects {model.window}")
    if D != model.d_in:
        raise DimensionMismatch(f"embedding width {D} != {model.d_in}")
    M, H = model.model_dim, model.heads
    dh = M // H
    x = ad.add(_linear(window, p, "in"), sinusoidal_positions(T, M))
    for k in range(model.blocks):
        pre = f"block{k}."
        h = ad.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(t):
            return ad.transpose(ad.reshape(t, (B, T, H, dh)), (0, 2, 1, 3))

        q = heads(_linear(h, p, pre + "q"))
        kk = heads(_linear(h, p, pre + "k"))
        v = heads(_linear(h, p, pre + "v"))
        scores = ad.mul(ad.matmul(q, ad.transpose(kk, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        att = ad.matmul(ad.softmax(scores, axis=-1), v)
        att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (B, T, M))
        x = ad.add(x, _linear(att, p, pre + "o"))
        h2 = ad.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        x = ad.add(x, _linear(ad.gelu(_linear(h2, p, pre + "ff1")), p, pre + "ff2"))
    x = ad.layer_norm(x, p["lnf.g"], p["lnf.b"])
    last = ad.reshape(ad.take(ad.transpose(x, (1, 0, 2)), [T - 1]), (B, M))
    return _linear(last, p, "out")


def temporal_forward(model: TemporalModel, window) -> np.ndarray:
    """Single window (T, D) -> (D,) with plain arrays."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise WindowSizeMismatch("window must be a (T, D) matrix")
    p = {k: ad.Tensor(v) for k, v in model.params.items()}
    return temporal_tape(model, ad.Tensor(window[None]), p).data[0]


@dataclass
class DecisionHead:
    W: np.ndarray  # (n + 1, D)
    b: np.ndarray  # (n + 1,)

    @classmethod
    def init(cls, d_in: int, n_anomalies: int, seed: int = 0) -> DecisionHead:
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(n_anomalies + 1, d_in)), np.zeros(n_anomalies + 1))

    @property
    def n_anomalies(self) -> int:
        return self.W.shape[0] - 1

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def head_logits_tape(f: ad.Tensor, p: Mapping[str, ad.Tensor]) -> ad.Tensor:
    return ad.add(ad.matmul(f, ad.transpose(p["W"], (1, 0))), p["b"])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decide(head: DecisionHead, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != head.W.shape[1]:
        raise DimensionMismatch(f"input width {f.shape[-1]} != {head.W.shape[1]}")
    return softmax(f @ head.W.T + head.b)


@dataclass(frozen=True)
class Probabilities:
    p_normal: float
    p_anomaly: float
    p_joint: np.ndarray  # p_{A,i}, i = 1..n
    p_conditional: np.ndarray  # p_{i|A}
    singular: bool = False


def probabilities(s) -> Probabilities:
    """Split a score simplex into normal / anomalous / per-type probabilities.

    When the anomaly mass is (numerically) zero the conditional distribution
    is undefined; a uniform vector is returned and ``singular`` is set.
    """
    s = np.asarray(s, dtype=np.float64)
    p_n = float(s[0])
    p_a = 1.0 - p_n
    joint = s[1:].copy()
    n = len(joint)
    if p_a <= SINGULAR_EPS:
        return Probabilities(p_n, p_a, joint, np.full(n, 1.0 / n), True)
    # equal to 1 - s_0 on a simplex, but free of cancellation when s_0 is near 1
    return Probabilities(p_n, p_a, joint, joint / joint.sum(), False)
