"""TFT building blocks with hand-written backward passes.

Parameters live in one flat ``dict[str, ndarray]`` keyed by dotted names
(``"vsn.select.W1"``); every block takes the dict plus its name prefix.
Forward functions return ``(output, cache)`` and backward functions
accumulate into a gradient dict of the same layout and return the input
gradient(s).  Trailing axis is the feature axis; leading axes are free.
"""

from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]

LN_EPS = 1e-5


def _init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


def _acc(grads: Params, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _outer_sum(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """``sum over leading axes of x^T dy`` for a dense layer weight gradient."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


# ---------------------------------------------------------------- primitives

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, dy, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    n = xhat.shape[-1]
    dxhat = dy * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, (dy * xhat).reshape(-1, n).sum(0), dy.reshape(-1, n).sum(0)


# ---------------------------------------------------------------------- GRN

def init_grn(rng, params: Params, name: str, d_in: int, d_hidden: int, d_out: int,
             d_context: int | None = None) -> None:
    params[f"{name}.W2"] = _init(rng, d_in, (d_in, d_hidden))
    params[f"{name}.b2"] = np.zeros(d_hidden)
    if d_context:
        params[f"{name}.W3"] = _init(rng, d_context, (d_context, d_hidden))
    params[f"{name}.W1"] = _init(rng, d_hidden, (d_hidden, d_hidden))
    params[f"{name}.b1"] = np.zeros(d_hidden)
    params[f"{name}.Wg"] = _init(rng, d_hidden, (d_hidden, d_out))
    params[f"{name}.bg"] = np.zeros(d_out)
    params[f"{name}.Wv"] = _init(rng, d_hidden, (d_hidden, d_out))
    params[f"{name}.bv"] = np.zeros(d_out)
    if d_in != d_out:
        params[f"{name}.Ws"] = _init(rng, d_in, (d_in, d_out))
        params[f"{name}.bs"] = np.zeros(d_out)
    params[f"{name}.ln_g"] = np.ones(d_out)
    params[f"{name}.ln_b"] = np.zeros(d_out)


def grn_forward(params: Params, name: str, a: np.ndarray, c: np.ndarray | None = None,
                dropout: float = 0.0, rng: np.random.Generator | None = None):
    """``LayerNorm(skip(a) + GLU(W1 ELU(W2 a + W3 c + b2) + b1))``.

    ``c`` must broadcast against ``a``'s leading axes; with no context (or a
    block built without ``W3``) the context term is dropped.
    """
    pre = a @ params[f"{name}.W2"] + params[f"{name}.b2"]
    use_c = c is not None and f"{name}.W3" in params
    if use_c:
        pre = pre + c @ params[f"{name}.W3"]
    eta2 = elu(pre)
    eta1 = eta2 @ params[f"{name}.W1"] + params[f"{name}.b1"]
    keep = None
    if dropout > 0.0 and rng is not None:
        keep = (rng.random(eta1.shape) >= dropout) / (1.0 - dropout)
        eta1 = eta1 * keep
    gate = sigmoid(eta1 @ params[f"{name}.Wg"] + params[f"{name}.bg"])
    lin = eta1 @ params[f"{name}.Wv"] + params[f"{name}.bv"]
    glu = gate * lin
    if f"{name}.Ws" in params:
        skip = a @ params[f"{name}.Ws"] + params[f"{name}.bs"]
    else:
        skip = a
    out, ln_cache = layer_norm(skip + glu, params[f"{name}.ln_g"], params[f"{name}.ln_b"])
    cache = (a, c if use_c else None, pre, eta2, eta1, keep, gate, lin, ln_cache)
    return out, cache


def grn_backward(params: Params, name: str, dout: np.ndarray, cache, grads: Params):
    """Returns ``(da, dc)``; ``dc`` is reduced to the context's shape."""
    a, c, pre, eta2, eta1, keep, gate, lin, ln_cache = cache
    ds, dg_ln, db_ln = layer_norm_backward(dout, params[f"{name}.ln_g"], ln_cache)
    _acc(grads, f"{name}.ln_g", dg_ln)
    _acc(grads, f"{name}.ln_b", db_ln)
    if f"{name}.Ws" in params:
        _acc(grads, f"{name}.Ws", _outer_sum(a, ds))
        _acc(grads, f"{name}.bs", ds.reshape(-1, ds.shape[-1]).sum(0))
        da = ds @ params[f"{name}.Ws"].T
    else:
        da = ds.copy()
    dglu = ds
    dgate_pre = dglu * lin * gate * (1.0 - gate)
    dlin = dglu * gate
    _acc(grads, f"{name}.Wg", _outer_sum(eta1, dgate_pre))
    _acc(grads, f"{name}.bg", dgate_pre.reshape(-1, dgate_pre.shape[-1]).sum(0))
    _acc(grads, f"{name}.Wv", _outer_sum(eta1, dlin))
    _acc(grads, f"{name}.bv", dlin.reshape(-1, dlin.shape[-1]).sum(0))
    deta1 = dgate_pre @ params[f"{name}.Wg"].T + dlin @ params[f"{name}.Wv"].T
    if keep is not None:
        deta1 = deta1 * keep
    _acc(grads, f"{name}.W1", _outer_sum(eta2, deta1))
    _acc(grads, f"{name}.b1", deta1.reshape(-1, deta1.shape[-1]).sum(0))
    dpre = (deta1 @ params[f"{name}.W1"].T) * elu_grad(pre)
    _acc(grads, f"{name}.W2", _outer_sum(a, dpre))
    _acc(grads, f"{name}.b2", dpre.reshape(-1, dpre.shape[-1]).sum(0))
    da = da + dpre @ params[f"{name}.W2"].T
    dc = None
    if c is not None:
        cb = np.broadcast_to(c, pre.shape[:-1] + c.shape[-1:])
        _acc(grads, f"{name}.W3", _outer_sum(cb, dpre))
        dc = _sum_to(dpre @ params[f"{name}.W3"].T, c.shape)
    return da, dc


# ------------------------------------------------------------ gate-add-norm

def init_gate(rng, params: Params, name: str, d: int) -> None:
    params[f"{name}.Wg"] = _init(rng, d, (d, d))
    params[f"{name}.bg"] = np.zeros(d)
    params[f"{name}.Wv"] = _init(rng, d, (d, d))
    params[f"{name}.bv"] = np.zeros(d)
    params[f"{name}.ln_g"] = np.ones(d)
    params[f"{name}.ln_b"] = np.zeros(d)


def gate_add_norm_forward(params: Params, name: str, x: np.ndarray, skip: np.ndarray):
    """``LayerNorm(skip + GLU(x))``, the gated skip used around LSTM and attention."""
    gate = sigmoid(x @ params[f"{name}.Wg"] + params[f"{name}.bg"])
    lin = x @ params[f"{name}.Wv"] + params[f"{name}.bv"]
    out, ln_cache = layer_norm(skip + gate * lin, params[f"{name}.ln_g"], params[f"{name}.ln_b"])
    return out, (x, gate, lin, ln_cache)


def gate_add_norm_backward(params: Params, name: str, dout, cache, grads: Params):
    """Returns ``(dx, dskip)``."""
    x, gate, lin, ln_cache = cache
    ds, dg_ln, db_ln = layer_norm_backward(dout, params[f"{name}.ln_g"], ln_cache)
    _acc(grads, f"{name}.ln_g", dg_ln)
    _acc(grads, f"{name}.ln_b", db_ln)
    dgate_pre = ds * lin * gate * (1.0 - gate)
    dlin = ds * gate
    _acc(grads, f"{name}.Wg", _outer_sum(x, dgate_pre))
    _acc(grads, f"{name}.bg", dgate_pre.reshape(-1, dgate_pre.shape[-1]).sum(0))
    _acc(grads, f"{name}.Wv", _outer_sum(x, dlin))
    _acc(grads, f"{name}.bv", dlin.reshape(-1, dlin.shape[-1]).sum(0))
    dx = dgate_pre @ params[f"{name}.Wg"].T + dlin @ params[f"{name}.Wv"].T
    return dx, ds


# ---------------------------------------------------- variable selection

def init_vsn(rng, params: Params, name: str, n_features: int, d: int) -> None:
    init_grn(rng, params, f"{name}.select", n_features * d, d, n_features)
    for f in range(n_features):
        init_grn(rng, params, f"{name}.f{f}", d, d, d)


def vsn_forward(params: Params, name: str, x: np.ndarray, dropout: float = 0.0, rng=None):
    """Softmax-weighted combination of per-feature GRNs.

    ``x`` is ``[..., F, d]``; returns ``(weighted [..., d], weights [..., F], cache)``.
    """
    n_features = x.shape[-2]
    flat = x.reshape(x.shape[:-2] + (-1,))
    logits, sel_cache = grn_forward(params, f"{name}.select", flat, dropout=dropout, rng=rng)
    weights = softmax(logits)
    processed, caches = [], []
    for f in range(n_features):
        out, cache = grn_forward(params, f"{name}.f{f}", x[..., f, :], dropout=dropout, rng=rng)
        processed.append(out)
        caches.append(cache)
    processed = np.stack(processed, axis=-2)
    weighted = (weights[..., None] * processed).sum(axis=-2)
    return weighted, weights, (x.shape, weights, processed, sel_cache, caches)


def vsn_backward(params: Params, name: str, dweighted: np.ndarray, cache, grads: Params,
                 dweights: np.ndarray | None = None):
    shape, weights, processed, sel_cache, caches = cache
    dw = (dweighted[..., None, :] * processed).sum(axis=-1)
    if dweights is not None:
        dw = dw + dweights
    dlogits = softmax_backward(weights, dw)
    dflat, _ = grn_backward(params, f"{name}.select", dlogits, sel_cache, grads)
    dx = dflat.reshape(shape).copy()
    dproc = weights[..., None] * dweighted[..., None, :]
    for f, c in enumerate(caches):
        da, _ = grn_backward(params, f"{name}.f{f}", dproc[..., f, :], c, grads)
        dx[..., f, :] += da
    return dx


# --------------------------------------------------------------------- LSTM

def init_lstm(rng, params: Params, name: str, d_in: int, d: int) -> None:
    params[f"{name}.Wx"] = _init(rng, d_in, (d_in, 4 * d))
    params[f"{name}.Wh"] = _init(rng, d, (d, 4 * d))
    b = np.zeros(4 * d)
    b[d:2 * d] = 1.0  # forget gate starts open
    params[f"{name}.b"] = b


def lstm_forward(params: Params, name: str, x: np.ndarray, mask: np.ndarray):
    """Masked LSTM over ``x [B, T, d_in]``.

    Where ``mask`` is false the state is carried through unchanged and the
    output repeats the previous hidden state, so padding never feeds the
    recurrence.
    """
    B, T, _ = x.shape
    Wh = params[f"{name}.Wh"]
    d = Wh.shape[0]
    xw = x @ params[f"{name}.Wx"] + params[f"{name}.b"]
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    hs = np.zeros((B, T, d))
    steps = []
    for t in range(T):
        z = xw[:, t] + h @ Wh
        i = sigmoid(z[:, :d])
        f = sigmoid(z[:, d:2 * d])
        g = np.tanh(z[:, 2 * d:3 * d])
        o = sigmoid(z[:, 3 * d:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t, None]
        steps.append((h, c, i, f, g, o, tc))
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        hs[:, t] = h
    return hs, (x, mask, steps)


def lstm_backward(params: Params, name: str, dhs: np.ndarray, cache, grads: Params):
    x, mask, steps = cache
    B, T, _ = x.shape
    Wh = params[f"{name}.Wh"]
    d = Wh.shape[0]
    dz_all = np.zeros((B, T, 4 * d))
    dWh = np.zeros_like(Wh)
    dh = np.zeros((B, d))
    dc = np.zeros((B, d))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        m = mask[:, t, None]
        dh = dh + dhs[:, t]
        dh_new = np.where(m, dh, 0.0)
        dc_new = np.where(m, dc, 0.0)
        dc_new = dc_new + dh_new * o * (1.0 - tc ** 2)
        dz = np.concatenate([
            dc_new * g * i * (1.0 - i),
            dc_new * c_prev * f * (1.0 - f),
            dc_new * i * (1.0 - g ** 2),
            dh_new * tc * o * (1.0 - o),
        ], axis=1)
        dz_all[:, t] = dz
        dWh += h_prev.T @ dz
        dh = np.where(m, 0.0, dh) + dz @ Wh.T
        dc = np.where(m, 0.0, dc) + dc_new * f
    _acc(grads, f"{name}.Wh", dWh)
    _acc(grads, f"{name}.Wx", _outer_sum(x, dz_all))
    _acc(grads, f"{name}.b", dz_all.reshape(-1, 4 * d).sum(0))
    return dz_all @ params[f"{name}.Wx"].T


# ---------------------------------------------------------------- attention

def init_attention(rng, params: Params, name: str, d: int, n_heads: int) -> None:
    dk = max(1, d // n_heads)
    params[f"{name}.Wq"] = _init(rng, d, (n_heads, d, dk))
    params[f"{name}.Wk"] = _init(rng, d, (n_heads, d, dk))
    params[f"{name}.Wv"] = _init(rng, d, (d, d))
    params[f"{name}.Wo"] = _init(rng, d, (d, d))
    params[f"{name}.bo"] = np.zeros(d)


def attention_mask(mask: np.ndarray) -> np.ndarray:
    """``allowed[b, t, s]``: query ``t`` may see key ``s`` (real and not in the future)."""
    T = mask.shape[-1]
    causal = np.tril(np.ones((T, T), dtype=bool))
    return causal & mask[..., None, :]


def attention_forward(params: Params, name: str, H: np.ndarray, mask: np.ndarray):
    """Interpretable multi-head causal self-attention over ``H [B, T, d]``.

    Heads have their own query/key maps and share one value map; the head
    attention matrices are averaged before being applied to the values.
    Returns ``(out, avg_weights [B, T, T], cache)``.
    """
    mask = np.asarray(mask, dtype=bool)
    if H.ndim == 2:
        out, w, cache = attention_forward(params, name, H[None], mask[None])
        return out[0], w[0], cache
    allowed = attention_mask(mask)
    visible = allowed.any(axis=-1)
    if np.any(mask & ~visible):
        raise ValueError("a real query position has no visible key")
    Wq, Wk = params[f"{name}.Wq"], params[f"{name}.Wk"]
    n_heads, _, dk = Wq.shape
    Q = np.einsum("btd,hdk->bhtk", H, Wq)
    K = np.einsum("btd,hdk->bhtk", H, Wk)
    V = H @ params[f"{name}.Wv"]
    scale = 1.0 / np.sqrt(dk)
    S = np.einsum("bhtk,bhsk->bhts", Q, K) * scale
    allow = allowed[:, None]
    S = np.where(allow, S, -np.inf)
    top = S.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(allow, np.exp(S - top), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    P = e / np.where(total > 0, total, 1.0)
    A = P.mean(axis=1)
    mixed = A @ V
    out = mixed @ params[f"{name}.Wo"] + params[f"{name}.bo"]
    return out, A, (H, Q, K, V, P, A, mixed, scale)


def attention_backward(params: Params, name: str, dout: np.ndarray, cache, grads: Params):
    H, Q, K, V, P, A, mixed, scale = cache
    squeeze = dout.ndim == 2
    if squeeze:
        dout = dout[None]
    n_heads = Q.shape[1]
    _acc(grads, f"{name}.Wo", _outer_sum(mixed, dout))
    _acc(grads, f"{name}.bo", dout.reshape(-1, dout.shape[-1]).sum(0))
    dmixed = dout @ params[f"{name}.Wo"].T
    dA = dmixed @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(A, -1, -2) @ dmixed
    dP = np.broadcast_to(dA[:, None] / n_heads, P.shape)
    dS = softmax_backward(P, dP) * scale
    dQ = np.einsum("bhts,bhsk->bhtk", dS, K)
    dK = np.einsum("bhts,bhtk->bhsk", dS, Q)
    _acc(grads, f"{name}.Wq", np.einsum("btd,bhtk->hdk", H, dQ))
    _acc(grads, f"{name}.Wk", np.einsum("btd,bhtk->hdk", H, dK))
    _acc(grads, f"{name}.Wv", _outer_sum(H, dV))
    dH = (np.einsum("bhtk,hdk->btd", dQ, params[f"{name}.Wq"])
          + np.einsum("bhtk,hdk->btd", dK, params[f"{name}.Wk"])
          + dV @ params[f"{name}.Wv"].T)
    return dH[0] if squeeze else dH
