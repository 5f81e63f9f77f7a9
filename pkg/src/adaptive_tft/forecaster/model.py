"""The per-category forecaster: parameters, forward/backward, loss and decoding."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import layers as L
from .batching import DEFAULT_POSITION_SCALE, MaskedBatch, pad_and_mask

N_COVARIATES = 2


@dataclass(frozen=True)
class HyperParams:
    hidden_dim: int = 12
    num_heads: int = 2
    p_len: int = 5
    quantiles: tuple[float, ...] = (0.1, 0.5, 0.9)
    learning_rate: float = 0.01
    final_lr_fraction: float = 0.05
    max_epochs: int = 40
    batch_size: int = 16
    dropout: float = 0.0
    seed: int = 0
    max_splits: int = 8
    clip_norm: float = 1.0
    optimizer: str = "adam"
    position_scale: float = DEFAULT_POSITION_SCALE

    def __post_init__(self):
        q = tuple(float(x) for x in self.quantiles)
        object.__setattr__(self, "quantiles", q)
        if any(not 0 < x < 1 for x in q) or any(b <= a for a, b in zip(q, q[1:])):
            raise ValueError(f"quantiles must be strictly increasing in (0, 1): {q}")
        if 0.5 not in q:
            raise ValueError("quantiles must contain 0.5")
        if self.hidden_dim < 1 or self.num_heads < 1:
            raise ValueError("hidden_dim and num_heads must be positive")
        if not 0 < self.final_lr_fraction <= 1:
            raise ValueError("final_lr_fraction must lie in (0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_epochs < 0 or self.batch_size < 1 or self.max_splits < 1:
            raise ValueError("max_epochs, batch_size and max_splits out of range")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def median_index(self) -> int:
        return self.quantiles.index(0.5)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        if "quantiles" in d:
            d["quantiles"] = tuple(d["quantiles"])
        return cls(**d)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("std must be positive")

    @classmethod
    def fit(cls, values, floor: float = 1e-8) -> "NormStats":
        v = np.asarray(values, dtype=float)
        std = float(v.std())
        # constant data: leave the scale alone rather than blow it up
        return cls(float(v.mean()), std if std > floor else 1.0)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass
class QuantileForecast:
    horizon: int
    values: np.ndarray
    quantiles: tuple[float, ...] = (0.1, 0.5, 0.9)

    @property
    def median(self) -> np.ndarray:
        return self.values[:, self.quantiles.index(0.5)]


def init_params(hp: HyperParams, rng: np.random.Generator) -> L.Params:
    d, F = hp.hidden_dim, 1 + N_COVARIATES
    p: L.Params = {}
    p["embed.W"] = rng.normal(0.0, 1.0, size=(F, d))
    p["embed.b"] = rng.normal(0.0, 1.0, size=(F, d))
    L.init_vsn(rng, p, "vsn", F, d)
    L.init_lstm(rng, p, "lstm", d, d)
    L.init_gate(rng, p, "post_lstm", d)
    p["static.context"] = rng.normal(0.0, 0.1, size=d)
    L.init_grn(rng, p, "enrich", d, d, d, d_context=d)
    L.init_attention(rng, p, "attn", d, hp.num_heads)
    L.init_gate(rng, p, "post_attn", d)
    L.init_grn(rng, p, "head", d, d, d)
    p["out.W"] = L._init(rng, d, (d, len(hp.quantiles)))
    p["out.b"] = np.zeros(len(hp.quantiles))
    return p


def forward(params: L.Params, batch: MaskedBatch, dropout: float = 0.0, rng=None):
    """Per-position quantile outputs ``[B, T, |Q|]`` in normalized units."""
    feats = batch.features()
    emb = feats[..., None] * params["embed.W"] + params["embed.b"]
    v, weights, vsn_c = L.vsn_forward(params, "vsn", emb, dropout, rng)
    h, lstm_c = L.lstm_forward(params, "lstm", v, batch.mask)
    a, gate1_c = L.gate_add_norm_forward(params, "post_lstm", h, v)
    e, enrich_c = L.grn_forward(params, "enrich", a, params["static.context"], dropout, rng)
    att, attn_w, attn_c = L.attention_forward(params, "attn", e, batch.mask)
    z, gate2_c = L.gate_add_norm_forward(params, "post_attn", att, e)
    u, head_c = L.grn_forward(params, "head", z, dropout=dropout, rng=rng)
    out = u @ params["out.W"] + params["out.b"]
    cache = (feats, vsn_c, lstm_c, gate1_c, enrich_c, attn_c, gate2_c, head_c, u)
    return out, cache


def backward(params: L.Params, dout: np.ndarray, cache) -> L.Params:
    feats, vsn_c, lstm_c, gate1_c, enrich_c, attn_c, gate2_c, head_c, u = cache
    g: L.Params = {}
    g["out.W"] = L._outer_sum(u, dout)
    g["out.b"] = dout.reshape(-1, dout.shape[-1]).sum(0)
    du = dout @ params["out.W"].T
    dz, _ = L.grn_backward(params, "head", du, head_c, g)
    datt, de = L.gate_add_norm_backward(params, "post_attn", dz, gate2_c, g)
    de = de + L.attention_backward(params, "attn", datt, attn_c, g)
    da, dctx = L.grn_backward(params, "enrich", de, enrich_c, g)
    g["static.context"] = dctx
    dh, dv = L.gate_add_norm_backward(params, "post_lstm", da, gate1_c, g)
    dv = dv + L.lstm_backward(params, "lstm", dh, lstm_c, g)
    demb = L.vsn_backward(params, "vsn", dv, vsn_c, g)
    g["embed.W"] = (demb * feats[..., None]).reshape(-1, *params["embed.W"].shape).sum(0)
    g["embed.b"] = demb.reshape(-1, *params["embed.b"].shape).sum(0)
    return g


def quantile_loss(forecast, target, mask, quantiles=(0.1, 0.5, 0.9)) -> float:
    """Mean pinball loss over unmasked steps and all quantiles.

    ``forecast`` is ``[..., |Q|]`` (or a :class:`QuantileForecast`), ``target``
    and ``mask`` are ``[...]``.
    """
    return quantile_loss_and_grad(forecast, target, mask, quantiles)[0]


def quantile_loss_and_grad(forecast, target, mask, quantiles=(0.1, 0.5, 0.9)):
    if isinstance(forecast, QuantileForecast):
        quantiles = forecast.quantiles
        forecast = forecast.values
    yhat = np.asarray(forecast, dtype=float)
    y = np.asarray(target, dtype=float)
    m = np.asarray(mask, dtype=bool)
    q = np.asarray(quantiles, dtype=float)
    if yhat.shape != y.shape + q.shape or m.shape != y.shape:
        raise ValueError(f"shape mismatch: forecast {yhat.shape}, target {y.shape}, mask {m.shape}")
    count = int(m.sum())
    if count == 0:
        raise ValueError("every target step is masked")
    err = np.where(m, y, 0.0)[..., None] - np.where(m[..., None], yhat, 0.0)
    pin = np.maximum(q * err, (q - 1.0) * err)
    loss = float(np.where(m[..., None], pin, 0.0).sum() / (count * len(q)))
    dpin = np.where(err > 0, -q, 1.0 - q)
    grad = np.where(m[..., None], dpin, 0.0) / (count * len(q))
    return loss, grad


@dataclass
class ForecastModel:
    params: L.Params
    hp: HyperParams
    norm_stats: NormStats
    loss_history: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float | None:
        return self.loss_history[-1] if self.loss_history else None

    def raw_outputs(self, sequences) -> np.ndarray:
        """Normalized quantile outputs at the last real step of each sequence."""
        batch = pad_and_mask([self.norm_stats.normalize(s) for s in sequences],
                             self.hp.position_scale)
        out, _ = forward(self.params, batch)
        return out[np.arange(len(batch.lengths)), batch.lengths - 1]


def predict(model: ForecastModel, partial, horizon: int = 1) -> QuantileForecast:
    """Autoregressive decode, feeding back the median as the next observation."""
    seq = np.asarray(partial, dtype=float).ravel()
    if len(seq) == 0:
        raise ValueError("cannot forecast from an empty partial subseries")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    hp = model.hp
    z = list(model.norm_stats.normalize(seq))
    rows = []
    for _ in range(horizon):
        batch = pad_and_mask([z], hp.position_scale)
        out, _ = forward(model.params, batch)
        step = out[0, -1]
        rows.append(step)
        z.append(float(step[hp.median_index]))
    values = np.sort(model.norm_stats.denormalize(np.array(rows).reshape(horizon, len(hp.quantiles))),
                     axis=1)
    return QuantileForecast(horizon, values, hp.quantiles)


def naive_predict(partial, horizon: int = 1, quantiles=(0.1, 0.5, 0.9)) -> QuantileForecast:
    """Persistence: every quantile of every step is the last observed value."""
    seq = np.asarray(partial, dtype=float).ravel()
    if len(seq) == 0:
        raise ValueError("cannot forecast from an empty partial subseries")
    return QuantileForecast(horizon, np.full((horizon, len(quantiles)), seq[-1]), tuple(quantiles))
