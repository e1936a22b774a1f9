import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitune import autodiff as ad
from multitune import checkpoint
from multitune.autodiff import Graph, verification_mode
from multitune.errors import ConfigError, LengthError
from multitune.model import BOS_ID, ModelConfig, expected_param_count, forward_logits, init_model
from multitune.params import SHARED

from conftest import random_ids, scaled_store, tiny_config


def closed_form_count(d, n_enc, n_dec, f, V, T):
    # embeddings + positions, attention (4 d^2 each), ffn, layer norms, final norms, output head
    enc_layer = 4 * d * d + (d * f + f * d) + 2 * (2 * d)
    dec_layer = 2 * (4 * d * d) + (d * f + f * d) + 3 * (2 * d)
    return V * d + 2 * T * d + n_enc * enc_layer + n_dec * dec_layer + 2 * (2 * d) + d * V


def test_init_deterministic():
    cfg = tiny_config()
    a, b = init_model(cfg, 3), init_model(cfg, 3)
    assert list(a) == list(b)
    assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a)
    c = init_model(cfg, 4)
    assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a)


def test_default_param_count():
    cfg = ModelConfig()
    store = init_model(cfg, 0)
    oracle = closed_form_count(128, 2, 2, 256, 8192, 256)
    assert store.total_params() == oracle == expected_param_count(cfg) == 2_821_120
    std = np.concatenate([store[n].data.ravel() for n in store if n.endswith((".q", "lm_head"))]).std()
    assert std == pytest.approx(0.02, rel=0.05)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=7, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(n_layers_enc=0)


def test_logits_shape_and_purity(rng):
    cfg = tiny_config()
    store = init_model(cfg, 0)
    src, tgt = random_ids(rng, (2, 5), cfg.vocab_size), random_ids(rng, (2, 4), cfg.vocab_size)
    a = forward_logits(store, src, tgt)
    b = forward_logits(store, src, tgt)
    assert a.shape == (2, 4, cfg.vocab_size)
    assert a.data.tobytes() == b.data.tobytes()
    assert forward_logits(store, src[0], tgt[0]).shape == (4, cfg.vocab_size)


def test_source_permutation_changes_logits():
    cfg = tiny_config()
    store = scaled_store(cfg, 1)
    src = np.array([3, 4, 5, 6])
    swapped = np.array([4, 3, 5, 6])
    tgt = np.array([5, 7, 1])
    with verification_mode():
        a = forward_logits(store, src, tgt).data
        b = forward_logits(store, swapped, tgt).data
    assert np.abs(a - b).max() > 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_causality(seed, pos):
    cfg = tiny_config()
    store = scaled_store(cfg, 2)
    r = np.random.default_rng(seed)
    src, tgt = random_ids(r, (4,), cfg.vocab_size), random_ids(r, (6,), cfg.vocab_size)
    changed = tgt.copy()
    changed[pos:] = random_ids(r, (6 - pos,), cfg.vocab_size)
    with verification_mode():
        a = forward_logits(store, src, tgt).data
        b = forward_logits(store, src, changed).data
    # logits[i] scores tgt[i] from tgt[:i], so positions <= pos see only unchanged tokens
    np.testing.assert_array_equal(a[: pos + 1], b[: pos + 1])


def test_length_error():
    cfg = tiny_config(max_seq_len=6)
    store = init_model(cfg, 0)
    with pytest.raises(LengthError):
        forward_logits(store, np.full(7, 3), np.full(3, 3))


def test_padding_keys_are_ignored(rng):
    cfg = tiny_config()
    store = scaled_store(cfg, 3)
    src = random_ids(rng, (5,), cfg.vocab_size)
    padded = np.concatenate([src, [0, 0]])
    tgt = random_ids(rng, (3,), cfg.vocab_size)
    with verification_mode():
        a = forward_logits(store, src, tgt).data
        b = forward_logits(store, padded, tgt).data
    np.testing.assert_allclose(a, b, atol=1e-12)


# ---------------------------------------------------------------- scalar-loop oracle


def _ln(v, g, b, eps):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(v, g, b)]


def _vm(v, W):
    return [sum(v[i] * W[i][j] for i in range(len(v))) for j in range(len(W[0]))]


def _attend(queries, keys_in, W, prefix, allowed):
    q = [_vm(x, W[f"{prefix}.q"]) for x in queries]
    k = [_vm(x, W[f"{prefix}.k"]) for x in keys_in]
    v = [_vm(x, W[f"{prefix}.v"]) for x in keys_in]
    d = len(q[0])
    out = []
    for i, qi in enumerate(q):
        scores = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(d) if allowed(i, j) else -math.inf
                  for j, kj in enumerate(k)]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        z = sum(w)
        ctx = [sum(w[j] / z * v[j][c] for j in range(len(v))) for c in range(d)]
        out.append(_vm(ctx, W[f"{prefix}.o"]))
    return out


def scalar_forward(W, src, tgt, eps):
    def add(a, b):
        return [x + y for x, y in zip(a, b)]

    def block_ffn(h, p, ln):
        z = _ln(h, W[f"{p}.{ln}.g"], W[f"{p}.{ln}.b"], eps)
        z = [max(0.0, x) for x in _vm(z, W[f"{p}.ff.w1"])]
        return add(h, _vm(z, W[f"{p}.ff.w2"]))

    hs = [add(W["embed.tok"][t], W["embed.pos_enc"][i]) for i, t in enumerate(src)]
    normed = [_ln(h, W["enc.0.ln1.g"], W["enc.0.ln1.b"], eps) for h in hs]
    att = _attend(normed, normed, W, "enc.0.attn", lambda i, j: True)
    hs = [block_ffn(add(h, a), "enc.0", "ln2") for h, a in zip(hs, att)]
    mem = [_ln(h, W["enc.ln_f.g"], W["enc.ln_f.b"], eps) for h in hs]

    dec_in = [BOS_ID] + list(tgt[:-1])
    hs = [add(W["embed.tok"][t], W["embed.pos_dec"][i]) for i, t in enumerate(dec_in)]
    normed = [_ln(h, W["dec.0.ln1.g"], W["dec.0.ln1.b"], eps) for h in hs]
    att = _attend(normed, normed, W, "dec.0.self", lambda i, j: j <= i)
    hs = [add(h, a) for h, a in zip(hs, att)]
    normed = [_ln(h, W["dec.0.ln2.g"], W["dec.0.ln2.b"], eps) for h in hs]
    att = _attend(normed, mem, W, "dec.0.cross", lambda i, j: True)
    hs = [block_ffn(add(h, a), "dec.0", "ln3") for h, a in zip(hs, att)]
    return [_vm(_ln(h, W["dec.ln_f.g"], W["dec.ln_f.b"], eps), W["lm_head"]) for h in hs]


@pytest.mark.parametrize("seed", [0, 1])
def test_matches_scalar_loop_oracle(seed):
    cfg = ModelConfig(d_model=2, n_layers_enc=1, n_layers_dec=1, n_heads=1, d_ff=3, vocab_size=6,
                      max_seq_len=8, dropout=0.0)
    store = scaled_store(cfg, seed, std=0.8)
    W = {n: store[n].data.tolist() for n in store}
    r = np.random.default_rng(seed)
    src, tgt = random_ids(r, (4,), 6), random_ids(r, (3,), 6)
    with verification_mode():
        got = forward_logits(store, src, tgt).data
    want = np.array(scalar_forward(W, src.tolist(), tgt.tolist(), cfg.ln_eps))
    np.testing.assert_allclose(got, want, atol=1e-5)


# ---------------------------------------------------------------- gradients and freezing


def test_gradient_reaches_only_flagged_params(rng):
    cfg = tiny_config()
    store = scaled_store(cfg, 4)
    flagged = {"enc.0.attn.q", "lm_head"}
    for n in store:
        store[n].requires_grad = n in flagged
    src, tgt = random_ids(rng, (2, 5), cfg.vocab_size), random_ids(rng, (2, 4), cfg.vocab_size)
    with verification_mode(), Graph() as g:
        g.backward(ad.cross_entropy(forward_logits(store, src, tgt), tgt))
    for n in store:
        if n in flagged:
            assert store[n].grad is not None and np.abs(store[n].grad).sum() > 0
        else:
            assert store[n].grad is None


def test_checkpoint_roundtrip_bytes(tmp_path):
    cfg = tiny_config()
    store = init_model(cfg, 5)
    store.register("private.xx.adapter.0.up", np.ones((2, 8), dtype=np.float32), "private:xx", False)
    blob = checkpoint.to_bytes(store)
    back = checkpoint.from_bytes(blob)
    assert checkpoint.to_bytes(back) == blob
    assert back.config == cfg
    assert back.param("private.xx.adapter.0.up").group == "private:xx"
    assert back.param("private.xx.adapter.0.up").tunable is False
    p = checkpoint.save(store, tmp_path / "m.ckpt", group=SHARED)
    assert set(checkpoint.load(p)) == set(store.names(SHARED))
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load(bad)
