import math

import numpy as np
import pytest

from adaptive_tft.forecaster import layers as L

from helpers import BLOCK_CASES, relative_errors


def zero_grn(d_in, d_out):
    p = {}
    L.init_grn(np.random.default_rng(0), p, "g", d_in, d_in, d_out)
    for k in p:
        p[k] = np.zeros_like(p[k])
    p["g.ln_g"][:] = 1.0
    return p


def test_zero_grn_is_layer_norm():
    a = np.array([[0.3, -1.2, 2.0, 0.5], [1.0, 1.0, 1.5, -4.0]])
    out, _ = L.grn_forward(zero_grn(4, 4), "g", a)
    mu = a.mean(axis=1, keepdims=True)
    sd = np.sqrt(((a - mu) ** 2).mean(axis=1, keepdims=True) + L.LN_EPS)
    assert np.allclose(out, (a - mu) / sd, rtol=0, atol=1e-12)


def scalar_grn(a, W2, b2, W1, b1, Wg, bg, Wv, bv):
    """Two-unit GRN evaluated one scalar at a time."""
    pre = [a[0] * W2[0][j] + a[1] * W2[1][j] + b2[j] for j in range(2)]
    eta2 = [x if x > 0 else math.exp(x) - 1 for x in pre]
    eta1 = [eta2[0] * W1[0][j] + eta2[1] * W1[1][j] + b1[j] for j in range(2)]
    glu = []
    for j in range(2):
        g = 1 / (1 + math.exp(-(eta1[0] * Wg[0][j] + eta1[1] * Wg[1][j] + bg[j])))
        glu.append(g * (eta1[0] * Wv[0][j] + eta1[1] * Wv[1][j] + bv[j]))
    s = [a[j] + glu[j] for j in range(2)]
    mu = (s[0] + s[1]) / 2
    var = ((s[0] - mu) ** 2 + (s[1] - mu) ** 2) / 2
    return [(x - mu) / math.sqrt(var + 1e-5) for x in s]


def test_grn_matches_scalar_evaluation():
    w = dict(W2=[[0.1, -0.2], [0.3, 0.05]], b2=[0.01, -0.4], W1=[[0.2, 0.1], [-0.3, 0.25]],
             b1=[0.0, 0.1], Wg=[[0.5, -0.1], [0.2, 0.3]], bg=[0.05, -0.05],
             Wv=[[-0.4, 0.2], [0.1, 0.6]], bv=[0.2, 0.0])
    p = {f"g.{k}": np.array(v) for k, v in w.items()}
    p["g.ln_g"] = np.ones(2)
    p["g.ln_b"] = np.zeros(2)
    for a in ([0.7, -0.3], [-1.5, 2.0], [0.0, 0.0]):
        out, _ = L.grn_forward(p, "g", np.array(a))
        assert np.allclose(out, scalar_grn(a, **w), rtol=0, atol=1e-10)


def test_grn_context_shifts_hidden_preactivation():
    rng = np.random.default_rng(4)
    p = {}
    L.init_grn(rng, p, "g", 3, 3, 3, d_context=2)
    a = rng.normal(size=(4, 3))
    with_c, _ = L.grn_forward(p, "g", a, np.zeros(2))
    without, _ = L.grn_forward(p, "g", a)
    assert np.array_equal(with_c, without)


@pytest.mark.parametrize("name", sorted(BLOCK_CASES))
def test_finite_differences(name):
    params, f = BLOCK_CASES[name]()
    errs = np.concatenate([e.ravel() for e in relative_errors(params, f).values()])
    assert errs.max() < 1e-4


def test_dropout_rescales_and_is_seeded():
    rng = np.random.default_rng(0)
    p = {}
    L.init_grn(rng, p, "g", 3, 3, 3)
    a = rng.normal(size=(6, 3))
    one, _ = L.grn_forward(p, "g", a, dropout=0.3, rng=np.random.default_rng(5))
    two, _ = L.grn_forward(p, "g", a, dropout=0.3, rng=np.random.default_rng(5))
    plain, _ = L.grn_forward(p, "g", a)
    assert np.array_equal(one, two)
    assert not np.array_equal(one, plain)


# --------------------------------------------------------------------- VSN

def test_single_feature_weight_is_one():
    p = {}
    L.init_vsn(np.random.default_rng(1), p, "v", 1, 3)
    x = np.random.default_rng(2).normal(size=(4, 1, 3))
    weighted, w, _ = L.vsn_forward(p, "v", x)
    assert np.array_equal(w, np.ones((4, 1)))
    solo, _ = L.grn_forward(p, "v.f0", x[:, 0])
    assert np.allclose(weighted, solo, rtol=0, atol=1e-15)


def test_weights_are_a_distribution():
    p = {}
    L.init_vsn(np.random.default_rng(1), p, "v", 4, 3)
    x = np.random.default_rng(2).normal(scale=5.0, size=(3, 7, 4, 3))
    _, w, _ = L.vsn_forward(p, "v", x)
    assert np.allclose(w.sum(-1), 1.0, rtol=0, atol=1e-9)
    assert (w > 0).all() and (w < 1).all()


# --------------------------------------------------------------- attention

def attention_params(d=4, heads=2, seed=0):
    p = {}
    L.init_attention(np.random.default_rng(seed), p, "a", d, heads)
    p["a.bo"] = np.random.default_rng(seed + 1).normal(size=d)
    return p


def test_single_position_returns_value_projection():
    p = attention_params()
    H = np.random.default_rng(3).normal(size=(1, 4))
    out, A, _ = L.attention_forward(p, "a", H, np.ones(1, bool))
    assert A.tolist() == [[1.0]]
    assert np.allclose(out, H @ p["a.Wv"] @ p["a.Wo"] + p["a.bo"], rtol=0, atol=1e-14)


def test_equal_scores_average_the_causal_prefix():
    p = attention_params()
    p["a.Wq"][:] = 0.0
    p["a.Wk"][:] = 0.0
    H = np.random.default_rng(3).normal(size=(2, 5, 4))
    mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], bool)
    _, A, _ = L.attention_forward(p, "a", H, mask)
    for t in range(5):
        row = np.zeros(5)
        row[:t + 1] = 1.0 / (t + 1)
        assert np.allclose(A[1, t], row, rtol=0, atol=1e-15)
    for t in range(4):
        row = np.zeros(5)
        row[:t + 1] = 1.0 / (t + 1)
        assert np.allclose(A[0, t], row, rtol=0, atol=1e-15)


def test_padding_content_is_invisible():
    p = attention_params()
    rng = np.random.default_rng(7)
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1], [1, 0, 0, 0, 0]], bool)
    H = rng.normal(size=(3, 5, 4))
    base, _, _ = L.attention_forward(p, "a", H, mask)
    for _ in range(20):
        H2 = H.copy()
        H2[~mask] = rng.normal(scale=100.0, size=H2[~mask].shape)
        out, _, _ = L.attention_forward(p, "a", H2, mask)
        assert np.array_equal(out[mask], base[mask])


def test_attention_never_looks_ahead():
    p = attention_params()
    H = np.random.default_rng(3).normal(size=(1, 6, 4))
    mask = np.ones((1, 6), bool)
    base, _, _ = L.attention_forward(p, "a", H, mask)
    H2 = H.copy()
    H2[0, 4:] += 10.0
    out, _, _ = L.attention_forward(p, "a", H2, mask)
    assert np.array_equal(out[0, :4], base[0, :4])


def test_lstm_carries_state_through_padding():
    p = {}
    L.init_lstm(np.random.default_rng(0), p, "l", 2, 3)
    x = np.random.default_rng(1).normal(size=(1, 4, 2))
    mask = np.array([[1, 1, 0, 0]], bool)
    hs, _ = L.lstm_forward(p, "l", x, mask)
    assert np.array_equal(hs[0, 2], hs[0, 1]) and np.array_equal(hs[0, 3], hs[0, 1])
