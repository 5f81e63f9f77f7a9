"""Shared oracles for the gradient and masking tests."""

import numpy as np

from adaptive_tft.forecaster import layers as L
from adaptive_tft.forecaster import model as M
from adaptive_tft.forecaster.batching import pad_and_mask

FD_STEP = 1e-5


def relative_errors(params, loss_and_grads, step=FD_STEP):
    """Central differences for every coordinate of every parameter.

    ``loss_and_grads(params) -> (loss, grads)``.  The relative error is
    ``|a - n| / max(|a| + |n|, 1e-7)`` so coordinates with both values near
    zero are judged on absolute agreement.
    """
    _, grads = loss_and_grads(params)
    out = {}
    for name in sorted(params):
        v = params[name]
        a = grads.get(name, np.zeros_like(v))
        rel = np.zeros(v.shape)
        for idx in np.ndindex(v.shape):
            orig = v[idx]
            v[idx] = orig + step
            lp, _ = loss_and_grads(params)
            v[idx] = orig - step
            lm, _ = loss_and_grads(params)
            v[idx] = orig
            num = (lp - lm) / (2 * step)
            rel[idx] = abs(a[idx] - num) / max(abs(a[idx]) + abs(num), 1e-7)
        out[name] = rel
    return out


def _probe(rng, shape):
    return rng.normal(size=shape)


def grn_case(seed=0, d=4):
    rng = np.random.default_rng(seed)
    p = {}
    L.init_grn(rng, p, "g", 3, d, 2, d_context=2)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.1, p[k].shape)
    a, c, R = rng.normal(size=(5, 3)), rng.normal(size=2), _probe(rng, (5, 2))

    def f(params):
        out, cache = L.grn_forward(params, "g", a, c)
        g = {}
        L.grn_backward(params, "g", R, cache, g)
        return float((out * R).sum()), g
    return p, f


def vsn_case(seed=0, d=4):
    rng = np.random.default_rng(seed)
    p = {}
    L.init_vsn(rng, p, "v", 3, d)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.1, p[k].shape)
    x, R = rng.normal(size=(2, 5, 3, d)), _probe(rng, (2, 5, d))

    def f(params):
        out, _, cache = L.vsn_forward(params, "v", x)
        g = {}
        L.vsn_backward(params, "v", R, cache, g)
        return float((out * R).sum()), g
    return p, f


def lstm_case(seed=0, d=4):
    rng = np.random.default_rng(seed)
    p = {}
    L.init_lstm(rng, p, "l", 3, d)
    x, R = rng.normal(size=(2, 5, 3)), _probe(rng, (2, 5, d))
    m = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)

    def f(params):
        out, cache = L.lstm_forward(params, "l", x, m)
        g = {}
        L.lstm_backward(params, "l", R, cache, g)
        return float((out * R).sum()), g
    return p, f


def attention_case(seed=0, d=4, heads=2):
    rng = np.random.default_rng(seed)
    p = {}
    L.init_attention(rng, p, "a", d, heads)
    p["a.bo"] = rng.normal(0, 0.1, d)
    H, R = rng.normal(size=(2, 5, d)), _probe(rng, (2, 5, d))
    m = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)
    Rm = R * m[..., None]

    def f(params):
        out, _, cache = L.attention_forward(params, "a", H, m)
        g = {}
        L.attention_backward(params, "a", Rm, cache, g)
        return float((out * Rm).sum()), g
    return p, f


def gate_case(seed=0, d=4):
    rng = np.random.default_rng(seed)
    p = {}
    L.init_gate(rng, p, "q", d)
    x, s, R = rng.normal(size=(2, 5, d)), rng.normal(size=(2, 5, d)), _probe(rng, (2, 5, d))

    def f(params):
        out, cache = L.gate_add_norm_forward(params, "q", x, s)
        g = {}
        L.gate_add_norm_backward(params, "q", R, cache, g)
        return float((out * R).sum()), g
    return p, f


def model_case(seed=1, d=4, heads=2):
    """Whole network plus quantile head, loss on real positions only."""
    hp = M.HyperParams(hidden_dim=d, num_heads=heads)
    rng = np.random.default_rng(seed)
    p = M.init_params(hp, rng)
    batch = pad_and_mask([rng.normal(size=n) for n in (3, 5, 1)])
    R = rng.normal(size=batch.mask.shape + (len(hp.quantiles),)) * batch.mask[..., None]

    def f(params):
        out, cache = M.forward(params, batch)
        return float((out * R).sum()), M.backward(params, R, cache)
    return p, f


def pinball_case(seed=2, d=4):
    """Quantile loss end to end, the quantity training minimises."""
    from adaptive_tft.forecaster.training import batch_loss_and_grad
    hp = M.HyperParams(hidden_dim=d, num_heads=2)
    rng = np.random.default_rng(seed)
    p = M.init_params(hp, rng)
    seqs = [rng.normal(size=n) for n in (2, 4, 6)]
    targets = rng.normal(size=3)
    return p, lambda params: batch_loss_and_grad(params, hp, seqs, targets)


BLOCK_CASES = {
    "grn": grn_case,
    "vsn": vsn_case,
    "lstm": lstm_case,
    "attention": attention_case,
    "gate_add_norm": gate_case,
    "model_and_head": model_case,
    "quantile_loss": pinball_case,
}


# ------------------------------------------------------------ hand series

RISE_SEGMENT = [-1.0, -1.0, 0.5, 0.6, 0.7, 0.8]  # ends 1111, rises 2.6% from its trough


def series_from_values(values, start_price=100.0, interval=600, start=0):
    from adaptive_tft.data_ingest import VolatilitySeries, reconstruct_prices
    return VolatilitySeries.from_prices(reconstruct_prices(start_price, values), interval, start)


def three_segment_series(tail=(-1.0, 0.5), **kw):
    """Three completed segments, each ending in pattern 1111, then ``tail``."""
    return series_from_values(RISE_SEGMENT * 3 + list(tail), **kw)
