"""Independent reference implementations the tests compare against."""

from __future__ import annotations

import itertools

import numpy as np

from kgadapt.model import GROUPS, DecisionModel, group_of
from kgadapt.training import LossConfig, full_loss, gradients


def pair_auc(scores, labels) -> float:
    """O(n^2) pair counting: share of (positive, negative) pairs ranked correctly, ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y > 0]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def brute_knn(query, rows, K) -> list[tuple[int, float]]:
    """Python-loop Euclidean distances, sorted by (distance, id)."""
    dists = []
    for i, r in enumerate(rows):
        dists.append((float(np.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(r, query)))), i))
    dists.sort()
    return [(i, d) for d, i in dists[:K]]


def gradient_check(model: DecisionModel, frames, windows, labels, rng, per_group=20, h=1e-5,
                   cfg: LossConfig = LossConfig(), train=True, floor=1e-6) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per group.

    For each group ``per_group`` scalars are drawn at random among those the
    loss can depend on (token rows referenced by the KG for the token group).
    Central differences of an O(1) loss carry ~1e-11 round-off, so the
    denominator is floored at ``floor``: a gradient that is exactly zero
    (the attention key bias, for one) is then judged on an absolute scale.
    """
    _, grads = gradients(model, frames, windows, labels, GROUPS, cfg, train=train, update_stats=False)
    params = model.named_params()
    token_rows = model.kg_token_ids()

    def value():
        return full_loss(model, frames, windows, labels, cfg, train=train)

    worst = {}
    for group in GROUPS:
        names = [n for n in params if group_of(n) == group]
        errs = []
        for _ in range(per_group):
            name = names[int(rng.integers(len(names)))]
            arr = params[name]
            if group == "token_embeddings":
                idx = (token_rows[int(rng.integers(len(token_rows)))], int(rng.integers(arr.shape[1])))
            else:
                idx = tuple(int(rng.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = value()
            arr[idx] = old - h
            down = value()
            arr[idx] = old
            num = (up - down) / (2 * h)
            ana = float(grads[name][idx])
            scale = max(abs(num), abs(ana), floor)
            errs.append(abs(num - ana) / scale)
        worst[group] = max(errs)
    return worst
