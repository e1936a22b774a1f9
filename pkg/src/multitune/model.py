"""Pre-LN encoder-decoder transformer over a :class:`ParamStore`."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LengthError
from .params import SHARED, ParamStore
from .peft import AdapterBlock, PeftHooks, PrefixParams, adapter_forward, prefix_prepend

PAD_ID, EOS_ID, BOS_ID = 0, 1, 2
NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 8192
    max_seq_len: int = 256
    dropout: float = 0.1
    ln_eps: float = 1e-5
    init_std: float = 0.02

    def __post_init__(self):
        for k in ("d_model", "n_layers_enc", "n_layers_dec", "n_heads", "d_ff", "vocab_size", "max_seq_len"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1, got {getattr(self, k)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def n_layers(self) -> int:
        return self.n_layers_enc + self.n_layers_dec

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def expected_param_count(cfg: ModelConfig) -> int:
    """Closed-form size of the backbone initialized by :func:`init_model`."""
    d, f, V, T = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_seq_len
    enc = 4 * d * d + 2 * d * f + 4 * d
    dec = 8 * d * d + 2 * d * f + 6 * d
    return 2 * V * d + 2 * T * d + cfg.n_layers_enc * enc + cfg.n_layers_dec * dec + 4 * d


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.d_model, cfg.d_ff
    out = [("embed.tok", (cfg.vocab_size, d)),
           ("embed.pos_enc", (cfg.max_seq_len, d)),
           ("embed.pos_dec", (cfg.max_seq_len, d))]

    def ln(prefix):
        return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]

    def attn(prefix):
        return [(f"{prefix}.{w}", (d, d)) for w in "qkvo"]

    for i in range(cfg.n_layers_enc):
        p = f"enc.{i}"
        out += ln(f"{p}.ln1") + attn(f"{p}.attn") + ln(f"{p}.ln2")
        out += [(f"{p}.ff.w1", (d, f)), (f"{p}.ff.w2", (f, d))]
    out += ln("enc.ln_f")
    for i in range(cfg.n_layers_dec):
        p = f"dec.{i}"
        out += ln(f"{p}.ln1") + attn(f"{p}.self") + ln(f"{p}.ln2") + attn(f"{p}.cross") + ln(f"{p}.ln3")
        out += [(f"{p}.ff.w1", (d, f)), (f"{p}.ff.w2", (f, d))]
    out += ln("dec.ln_f")
    out.append(("lm_head", (d, cfg.vocab_size)))
    return out


def init_model(config: ModelConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore(config)
    for name, shape in _param_shapes(config):
        if name.endswith(".g"):
            arr = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b") and len(shape) == 1:
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, config.init_std, size=shape).astype(np.float32)
        store.register(name, arr, SHARED, True)
    return store


# ---------------------------------------------------------------- forward pieces


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        return ids[None, :], True
    if ids.ndim != 2:
        raise ad.ShapeError("token ids", ids.shape)
    return ids, False


def _ln(store: ParamStore, prefix: str, x: Tensor, eps: float) -> Tensor:
    return ad.layer_norm(x, store[f"{prefix}.g"], store[f"{prefix}.b"], eps)


def _split_heads(x: Tensor, h: int) -> Tensor:
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, h, d // h)), (0, 2, 1, 3))


def attention(store: ParamStore, prefix: str, xq: Tensor, xkv: Tensor, bias: np.ndarray,
              n_heads: int) -> Tensor:
    """Multi-head attention; ``bias`` broadcasts to ``[B, 1, Tq, Tk]``."""
    B, Tq, d = xq.shape
    q = _split_heads(ad.matmul(xq, store[f"{prefix}.q"]), n_heads)
    k = _split_heads(ad.matmul(xkv, store[f"{prefix}.k"]), n_heads)
    v = _split_heads(ad.matmul(xkv, store[f"{prefix}.v"]), n_heads)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d // n_heads))
    probs = ad.softmax(scores, mask=bias.astype(scores.data.dtype, copy=False))
    ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, Tq, d))
    return ad.matmul(ctx, store[f"{prefix}.o"])


def _self_attn_block(store, p, h, prefix_rows, key_bias, cfg, rng, ln_name, attn_name):
    """Pre-LN self-attention, with optional prefix rows visible to every position."""
    l = 0 if prefix_rows is None else prefix_rows.shape[-2]
    full = prefix_prepend(h, prefix_rows, cfg.max_seq_len)
    normed = _ln(store, f"{p}.{ln_name}", full, cfg.ln_eps)
    # prefix outputs are discarded at the layer boundary, so only real rows are queried
    q_in = normed if l == 0 else ad.slice_axis(normed, 1, l, l + h.shape[1])
    out = attention(store, f"{p}.{attn_name}", q_in, normed, key_bias, cfg.n_heads)
    return ad.add(h, ad.dropout(out, cfg.dropout, rng))


def _ffn_block(store, p, h, cfg, rng, ln_name):
    z = _ln(store, f"{p}.{ln_name}", h, cfg.ln_eps)
    z = ad.matmul(ad.relu(ad.matmul(z, store[f"{p}.ff.w1"])), store[f"{p}.ff.w2"])
    return ad.add(h, ad.dropout(z, cfg.dropout, rng))


def _prefix_bias(bias: np.ndarray, l: int) -> np.ndarray:
    if l == 0:
        return bias
    pad = np.zeros(bias.shape[:-1] + (l,), dtype=bias.dtype)
    return np.concatenate([pad, bias], axis=-1)


@dataclass
class Memory:
    states: Tensor  # [B, S, d]
    src_bias: np.ndarray  # [B, 1, 1, S]


def _check_ids(ids: np.ndarray, cfg: ModelConfig) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ad.ShapeError("token ids", ids.shape, detail=f"ids must lie in [0, {cfg.vocab_size})")
    if ids.shape[1] > cfg.max_seq_len:
        raise LengthError(f"sequence length {ids.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")


def encode(store: ParamStore, src_ids, hooks: PeftHooks | None = None, rng=None,
           prefixes: list | None = None) -> Memory:
    cfg: ModelConfig = store.config
    src, _ = _as_batch(src_ids)
    _check_ids(src, cfg)
    B, S = src.shape
    hooks = hooks or PeftHooks()
    if prefixes is None:
        prefixes = hooks.layer_prefixes(cfg.n_layers)
    h = ad.add(ad.embedding(store["embed.tok"], src), ad.slice_axis(store["embed.pos_enc"], 0, 0, S))
    h = ad.dropout(h, cfg.dropout, rng)
    src_bias = np.where(src == PAD_ID, NEG_INF, 0.0)[:, None, None, :]
    for i in range(cfg.n_layers_enc):
        p = f"enc.{i}"
        pre = prefixes[i]
        l = 0 if pre is None else pre.shape[-2]
        h = _self_attn_block(store, p, h, pre, _prefix_bias(src_bias, l), cfg, rng, "ln1", "attn")
        h = _ffn_block(store, p, h, cfg, rng, "ln2")
        if i in hooks.adapters:
            h = adapter_forward(hooks.adapters[i], h)
    h = _ln(store, "enc.ln_f", h, cfg.ln_eps)
    return Memory(h, src_bias)


def decode(store: ParamStore, memory: Memory, dec_in, hooks: PeftHooks | None = None, rng=None,
           prefixes: list | None = None) -> Tensor:
    """Logits ``[B, T, V]`` for a (bos-initial) decoder input batch."""
    cfg: ModelConfig = store.config
    dec, _ = _as_batch(dec_in)
    _check_ids(dec, cfg)
    B, T = dec.shape
    hooks = hooks or PeftHooks()
    if prefixes is None:
        prefixes = hooks.layer_prefixes(cfg.n_layers)
    h = ad.add(ad.embedding(store["embed.tok"], dec), ad.slice_axis(store["embed.pos_dec"], 0, 0, T))
    h = ad.dropout(h, cfg.dropout, rng)
    causal = np.triu(np.full((T, T), NEG_INF), k=1)[None, None]
    mem = memory.states
    if mem.shape[0] != B:
        if mem.shape[0] != 1:
            raise ad.ShapeError("decode", mem.shape, dec.shape, detail="batch mismatch")
        mem_bias = np.broadcast_to(memory.src_bias, (B,) + memory.src_bias.shape[1:])
    else:
        mem_bias = memory.src_bias
    for j in range(cfg.n_layers_dec):
        i = cfg.n_layers_enc + j
        p = f"dec.{j}"
        pre = prefixes[i]
        l = 0 if pre is None else pre.shape[-2]
        h = _self_attn_block(store, p, h, pre, _prefix_bias(causal, l), cfg, rng, "ln1", "self")
        z = _ln(store, f"{p}.ln2", h, cfg.ln_eps)
        mem_b = mem if mem.shape[0] == B else _tile_batch(mem, B)
        h = ad.add(h, ad.dropout(attention(store, f"{p}.cross", z, mem_b, mem_bias, cfg.n_heads),
                                 cfg.dropout, rng))
        h = _ffn_block(store, p, h, cfg, rng, "ln3")
        if i in hooks.adapters:
            h = adapter_forward(hooks.adapters[i], h)
    h = _ln(store, "dec.ln_f", h, cfg.ln_eps)
    return ad.matmul(h, store["lm_head"])


def _tile_batch(x: Tensor, B: int) -> Tensor:
    # inference-only helper (beam search): memory is never differentiated here
    return Tensor(np.broadcast_to(x.data, (B,) + x.shape[1:]), dtype=x.data.dtype)


def shift_right(tgt: np.ndarray) -> np.ndarray:
    out = np.full_like(tgt, PAD_ID)
    out[:, 0] = BOS_ID
    out[:, 1:] = tgt[:, :-1]
    return out


def forward_logits(store: ParamStore, src_ids, tgt_ids, peft_hooks: PeftHooks | None = None,
                   rng=None) -> Tensor:
    """Next-token logits; ``logits[..., i, :]`` scores ``tgt_ids[..., i]`` given ``tgt_ids[..., :i]``."""
    tgt, single = _as_batch(tgt_ids)
    src, _ = _as_batch(src_ids)
    hooks = peft_hooks or PeftHooks()
    prefixes = hooks.layer_prefixes(store.config.n_layers)
    mem = encode(store, src, hooks, rng, prefixes)
    logits = decode(store, mem, shift_right(tgt), hooks, rng, prefixes)
    if single:
        return ad.reshape(logits, logits.shape[1:])
    return logits


def hooks_from_store(store: ParamStore, lang: str | None) -> PeftHooks:
    """Collect the private adapter/prefix tensors registered for ``lang``."""
    hooks = PeftHooks()
    if lang is None:
        return hooks
    base = f"private.{lang}"
    cfg = store.config
    for i in range(cfg.n_layers):
        key = f"{base}.adapter.{i}"
        if f"{key}.down" in store:
            hooks.adapters[i] = AdapterBlock(store[f"{key}.down"], store[f"{key}.up"],
                                             store[f"{key}.ln.g"], store[f"{key}.ln.b"], cfg.ln_eps)
    if f"{base}.prefix.p" in store:
        hooks.prefix = PrefixParams(store[f"{base}.prefix.p"], store[f"{base}.prefix.w1"],
                                    store[f"{base}.prefix.w2"])
    return hooks
