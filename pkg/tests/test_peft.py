import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitune import autodiff as ad
from multitune.autodiff import Tensor, grad_check, verification_mode
from multitune.errors import LengthError
from multitune.model import forward_logits, hooks_from_store, init_model
from multitune.params import private_group
from multitune.peft import (AdapterBlock, PeftHooks, PrefixParams, adapter_forward, adapter_param_count,
                            init_adapter_arrays, init_prefix_arrays, prefix_param_count, prefix_prepend,
                            prefix_slice, reparam_prefix)
from multitune.strategies import Kind, TuningStrategy, build_strategy

from conftest import random_ids, scaled_store, tiny_config


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_adapter_hand_example():
    with verification_mode():
        blk = AdapterBlock(T([[-1.0], [0.0]]), T([[2.0, 0.5]]), T([1.0, 1.0]), T([0.0, 0.0]), eps=0.0)
        out = adapter_forward(blk, T([[1.0, 3.0]]))
    np.testing.assert_allclose(out.data, [[3.0, 3.5]])


def test_adapter_identity_with_zero_up():
    rng = np.random.default_rng(0)
    arr = init_adapter_arrays(rng, 8, 3)
    blk = AdapterBlock(Tensor(arr["down"]), Tensor(arr["up"]), Tensor(arr["ln.g"]), Tensor(arr["ln.b"]))
    h = Tensor(rng.normal(size=(4, 8)))
    assert adapter_forward(blk, h).data.tobytes() == h.data.tobytes()


def test_adapter_shape_error():
    blk = AdapterBlock(Tensor(np.ones((8, 2))), Tensor(np.ones((2, 8))), Tensor(np.ones(8)), Tensor(np.zeros(8)))
    with pytest.raises(ad.ShapeError):
        adapter_forward(blk, Tensor(np.ones((4, 6))))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_adapter_gradcheck(seed):
    rng = np.random.default_rng(seed)
    with verification_mode():
        W_db, W_bd = T(rng.normal(size=(8, 3)), True), T(rng.normal(size=(3, 8)), True)
        g, b = T(1 + 0.3 * rng.normal(size=8), True), T(0.3 * rng.normal(size=8), True)
        h = T(rng.normal(size=(4, 8)), True)
        proj = T(rng.normal(size=(4, 8)))
        blk = AdapterBlock(W_db, W_bd, g, b)
        loss = lambda: ad.tensor_sum(ad.mul(adapter_forward(blk, h), proj))
        for leaf in (W_db, W_bd, g, b, h):
            assert grad_check(loss, leaf, 1e-4) < 1e-4


def test_reparam_examples():
    with verification_mode():
        p = PrefixParams(T([[1.0, 2.0]]), T([[1.0], [1.0]]), T([[1.0, -1.0]]))
        np.testing.assert_allclose(reparam_prefix(p).data, [[3.0, -3.0]])
        rng = np.random.default_rng(1)
        arr = init_prefix_arrays(rng, 2, 3, 4, 2)
        p = PrefixParams(T(arr["p"]), T(arr["w1"]), T(arr["w2"]))
        P = reparam_prefix(p)
        assert P.shape == (2, 6)
        assert not P.data.any()
        assert prefix_slice(P, 1, 3).shape == (2, 3)
        assert [x.shape for x in PeftHooks(prefix=p).layer_prefixes(2)] == [(2, 3), (2, 3)]


def test_reparam_slices_are_column_blocks():
    rng = np.random.default_rng(2)
    with verification_mode():
        p = PrefixParams(T(rng.normal(size=(2, 3))), T(rng.normal(size=(3, 4))), T(rng.normal(size=(4, 6))))
        P = reparam_prefix(p).data
        want = np.maximum(p.P_prime.data @ p.mlp_W1.data, 0) @ p.mlp_W2.data
        np.testing.assert_allclose(P, want)
        np.testing.assert_array_equal(prefix_slice(Tensor(P), 1, 3).data, P[:, 3:6])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_prefix_gradcheck(seed):
    rng = np.random.default_rng(seed)
    with verification_mode():
        pp, w1, w2 = (T(rng.normal(size=s), True) for s in ((2, 4), (4, 3), (3, 8)))
        H = T(rng.normal(size=(3, 4)), True)
        proj = T(rng.normal(size=(5, 4)))
        p = PrefixParams(pp, w1, w2)
        loss = lambda: ad.tensor_sum(ad.mul(prefix_prepend(H, prefix_slice(reparam_prefix(p), 1, 4)), proj))
        for leaf in (pp, w1, w2, H):
            assert grad_check(loss, leaf, 1e-4) < 1e-4


def test_prepend_contract():
    rng = np.random.default_rng(3)
    H = Tensor(rng.normal(size=(4, 8)))
    assert prefix_prepend(H, None) is H
    assert prefix_prepend(H, Tensor(np.zeros((0, 8)))) is H
    pre = Tensor(rng.normal(size=(2, 8)))
    out = prefix_prepend(H, pre)
    assert out.shape == (6, 8)
    np.testing.assert_array_equal(out.data[:2], pre.data)
    np.testing.assert_array_equal(out.data[2:], H.data)
    with pytest.raises(LengthError):
        prefix_prepend(H, pre, max_len=5)
    with pytest.raises(ad.ShapeError):
        prefix_prepend(H, Tensor(np.zeros((2, 7))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 40), st.integers(1, 6))
def test_closed_form_counts(d, b, l, n):
    rng = np.random.default_rng(0)
    assert sum(a.size for a in init_adapter_arrays(rng, d, b).values()) == adapter_param_count(d, b)
    m = b
    assert sum(a.size for a in init_prefix_arrays(rng, l, d, m, n).values()) == prefix_param_count(l, d, m, n)


def test_store_totals_match_closed_form():
    cfg = tiny_config()
    base = init_model(cfg, 0)
    s = build_strategy(base, TuningStrategy(Kind.MPS_adapter, adapter_dim=5), ["aa", "bb"])
    assert s.total_params(private_group("aa")) == cfg.n_layers * adapter_param_count(8, 5)
    s = build_strategy(base, TuningStrategy(Kind.MPE_prefix, prefix_len=3, prefix_inner=7), ["aa"])
    assert s.total_params(private_group("aa")) == prefix_param_count(3, 8, 7, cfg.n_layers)
    assert s.total_params() == base.total_params() + prefix_param_count(3, 8, 7, cfg.n_layers)


# ---------------------------------------------------------------- injection into the model


def _peft_store(kind, seed=0, **dims):
    cfg = tiny_config(n_layers_enc=2, n_layers_dec=2, d_model=8, n_heads=2)
    base = scaled_store(cfg, seed)
    s = build_strategy(base.astype(np.float32), TuningStrategy(kind, **dims), ["xx"], seed=seed).astype(np.float64)
    for n in base:
        s[n].data[...] = base[n].data
    return base, s


def test_adapter_identity_at_init_bit_exact():
    base, s = _peft_store(Kind.MPE_adapter, adapter_dim=4)
    hooks = hooks_from_store(s, "xx")
    assert len(hooks.adapters) == 4
    rng = np.random.default_rng(9)
    with verification_mode():
        for _ in range(5):
            src, tgt = random_ids(rng, (2, 6), 11), random_ids(rng, (2, 4), 11)
            a = forward_logits(base, src, tgt).data
            b = forward_logits(s, src, tgt, hooks).data
            assert a.tobytes() == b.tobytes()


def test_zero_prefix_still_dilutes_attention():
    # concatenated zero rows still receive softmax weight, so a zero prefix is not an identity
    base, s = _peft_store(Kind.MPE_prefix, prefix_len=2, prefix_inner=3)
    hooks = hooks_from_store(s, "xx")
    assert not hooks.layer_prefixes(4)[0].data.any()
    rng = np.random.default_rng(10)
    src, tgt = random_ids(rng, (1, 5), 11), random_ids(rng, (1, 3), 11)
    with verification_mode():
        a = forward_logits(base, src, tgt).data
        b = forward_logits(s, src, tgt, hooks).data
    assert a.shape == b.shape  # prefix rows are never scored
    assert np.abs(a - b).max() > 0


def test_prefix_values_change_real_outputs():
    _, s = _peft_store(Kind.MPE_prefix, prefix_len=2, prefix_inner=3)
    hooks = hooks_from_store(s, "xx")
    rng = np.random.default_rng(11)
    src, tgt = random_ids(rng, (1, 5), 11), random_ids(rng, (1, 3), 11)
    with verification_mode():
        a = forward_logits(s, src, tgt, hooks).data
        s["private.xx.prefix.w2"].data[...] = rng.normal(size=s["private.xx.prefix.w2"].shape)
        b = forward_logits(s, src, tgt, hooks_from_store(s, "xx")).data
    assert np.linalg.norm(a - b) > 0


def test_prefix_length_counts_against_max_len():
    cfg = tiny_config(max_seq_len=8)
    s = build_strategy(init_model(cfg, 0), TuningStrategy(Kind.MPE_prefix, prefix_len=3, prefix_inner=2), ["xx"])
    hooks = hooks_from_store(s, "xx")
    forward_logits(s, np.full(5, 4), np.full(2, 4), hooks)
    with pytest.raises(LengthError):
        forward_logits(s, np.full(6, 4), np.full(2, 4), hooks)


def test_model_gradcheck_with_peft():
    for kind, dims in ((Kind.MPS_adapter, dict(adapter_dim=3)), (Kind.MPS_prefix, dict(prefix_len=2, prefix_inner=3))):
        _, s = _peft_store(kind, seed=1, **dims)
        rng = np.random.default_rng(12)
        for n in s.names(private_group("xx")):
            s[n].data[...] = 0.4 * rng.normal(size=s[n].shape)
        src, tgt = random_ids(rng, (2, 5), 11), random_ids(rng, (2, 3), 11)
        with verification_mode():
            loss = lambda: ad.cross_entropy(forward_logits(s, src, tgt, hooks_from_store(s, "xx")), tgt)
            for n in s.names(private_group("xx"))[:4]:
                assert grad_check(loss, s[n]) < 1e-4, n
