"""Supervised pair construction and the seeded mini-batch training loop."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergedError
from . import layers as L
from .batching import pad_and_mask
from .model import ForecastModel, HyperParams, NormStats, backward, forward, init_params, \
    quantile_loss_and_grad


def training_pairs(members, max_splits: int, rng: np.random.Generator):
    """``(prefix, next_value)`` pairs cut from each member subseries.

    A prefix of length ``l`` in ``[1, len]`` is paired with the value that
    follows it in the parent series, which for ``l = len`` is the first value
    after the peak.  At most ``max_splits`` lengths are drawn per member.
    """
    prefixes, targets = [], []
    for m in members:
        parent = m.parent
        n = len(m)
        feasible = [l for l in range(1, n + 1) if m.start_index + l < len(parent)]
        if len(feasible) > max_splits:
            feasible = sorted(rng.choice(feasible, size=max_splits, replace=False).tolist())
        for l in feasible:
            prefixes.append(parent[m.start_index:m.start_index + l])
            targets.append(parent[m.start_index + l])
    return prefixes, np.array(targets, dtype=float)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: L.Params = {}
        self.v: L.Params = {}
        self.t = 0

    def step(self, params: L.Params, grads: L.Params) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: L.Params, grads: L.Params) -> None:
        for k in sorted(params):
            params[k] -= self.lr * grads[k]


def clip_global_norm(grads: L.Params, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for _, g in sorted(grads.items()))))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _lr_at(hp: HyperParams, epoch: int) -> float:
    """Cosine decay from ``learning_rate`` to ``final_lr_fraction`` of it."""
    if hp.max_epochs <= 1:
        return hp.learning_rate
    lo = hp.learning_rate * hp.final_lr_fraction
    frac = epoch / (hp.max_epochs - 1)
    return lo + 0.5 * (hp.learning_rate - lo) * (1.0 + np.cos(np.pi * frac))


def batch_loss_and_grad(params, hp: HyperParams, prefixes, targets, dropout=0.0, rng=None):
    batch = pad_and_mask(prefixes, hp.position_scale)
    B, T = batch.mask.shape
    last = batch.lengths - 1
    tgt = np.zeros((B, T))
    tgt[np.arange(B), last] = targets
    loss_mask = np.zeros((B, T), dtype=bool)
    loss_mask[np.arange(B), last] = True
    out, cache = forward(params, batch, dropout, rng)
    loss, dout = quantile_loss_and_grad(out, tgt, loss_mask, hp.quantiles)
    return loss, backward(params, dout, cache)


def train(dataset, hp: HyperParams = HyperParams()) -> ForecastModel:
    """Fit one model to a category; fully determined by ``hp.seed`` and the data."""
    members = list(getattr(dataset, "members", dataset))
    if not members:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(hp.seed)
    stats = NormStats.fit(np.concatenate([m.values for m in members]))
    params = init_params(hp, rng)
    prefixes, targets = training_pairs(members, hp.max_splits, rng)
    prefixes = [stats.normalize(p) for p in prefixes]
    targets = stats.normalize(targets)
    opt = Adam(hp.learning_rate) if hp.optimizer == "adam" else SGD(hp.learning_rate)
    history: list[float] = []
    n = len(prefixes)
    for epoch in range(hp.max_epochs):
        opt.lr = _lr_at(hp, epoch)
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, hp.batch_size):
            idx = order[lo:lo + hp.batch_size]
            loss, grads = batch_loss_and_grad(params, hp, [prefixes[i] for i in idx], targets[idx],
                                              hp.dropout, rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch offset {lo}")
            clip_global_norm(grads, hp.clip_norm)
            opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n)
    if not all(np.isfinite(v).all() for v in params.values()):
        raise TrainingDivergedError("non-finite parameters after training")
    return ForecastModel(params, hp, stats, history)
