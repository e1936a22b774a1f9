"""Beam search with the ((5 + len) / 6) ** alpha length penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .model import BOS_ID, EOS_ID, PAD_ID, decode, encode
from .params import ParamStore
from .peft import PeftHooks

StepFn = Callable[[list[list[int]]], np.ndarray]


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    length_penalty: float = 0.6
    max_len: int = 64
    min_len: int = 1

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if not self.max_len >= self.min_len >= 1:
            raise ConfigError("need max_len >= min_len >= 1")


@dataclass(frozen=True)
class BeamResult:
    ids: list[int]  # generated tokens, eos included when finished
    score: float
    logprob: float
    truncated: bool

    @property
    def tokens(self) -> list[int]:
        return [t for t in self.ids if t != EOS_ID]


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _rank_key(score: float, ids: Sequence[int]):
    # higher score first, then shorter, then lexicographically smaller ids
    return (-score, len(ids), tuple(ids))


def beam_search_fn(step_logprobs: StepFn, cfg: BeamConfig, vocab_size: int,
                   eos_id: int = EOS_ID, banned: Sequence[int] = (PAD_ID, BOS_ID)) -> BeamResult:
    """Model-agnostic beam search.

    ``step_logprobs(prefixes)`` returns a ``[len(prefixes), V]`` array of
    next-token log-probabilities for each generated prefix (bos excluded).
    Every live hypothesis's eos continuation is kept as a finished candidate.
    ``beam_size == 1`` is plain greedy decoding.
    """
    if cfg.beam_size == 1:
        return greedy_fn(step_logprobs, cfg, vocab_size, eos_id, banned)
    alpha = cfg.length_penalty
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[float, list[int], float]] = []
    banned = [b for b in banned if 0 <= b < vocab_size and b != eos_id]
    best_bound = length_penalty(cfg.max_len, alpha)
    for step in range(cfg.max_len):
        lp = np.array(step_logprobs([h for h, _ in live]), dtype=np.float64)
        if lp.shape != (len(live), vocab_size):
            raise ValueError(f"step function returned shape {lp.shape}, expected {(len(live), vocab_size)}")
        lp[:, banned] = -np.inf
        length = step + 1
        if length >= cfg.min_len:
            pen = length_penalty(length, alpha)
            for (ids, s), row in zip(live, lp):
                if np.isfinite(row[eos_id]):
                    tot = s + row[eos_id]
                    finished.append((tot / pen, ids + [eos_id], tot))
        lp[:, eos_id] = -np.inf
        cands = []
        for i, (ids, s) in enumerate(live):
            row = lp[i]
            k = min(cfg.beam_size, int(np.isfinite(row).sum()))
            if k == 0:
                continue
            top = np.argpartition(-row, k - 1)[:k] if k < vocab_size else np.arange(vocab_size)
            for v in top:
                if np.isfinite(row[v]):
                    cands.append((s + float(row[v]), ids + [int(v)]))
        cands.sort(key=lambda c: _rank_key(c[0], c[1]))
        live = [(ids, s) for s, ids in cands[:cfg.beam_size]]
        if not live:
            break
        if finished:
            best = max(f[0] for f in finished)
            # future log-probs only decrease and the penalty is capped at max_len
            if all(s / best_bound <= best for _, s in live) and all(s <= 0 for _, s in live):
                break
    if finished:
        score, ids, tot = min(finished, key=lambda f: _rank_key(f[0], f[1]))
        return BeamResult(ids, float(score), float(tot), False)
    scored = [(s / length_penalty(len(ids), alpha), ids, s) for ids, s in live]
    score, ids, tot = min(scored, key=lambda f: _rank_key(f[0], f[1]))
    return BeamResult(ids, float(score), float(tot), True)


def greedy_fn(step_logprobs: StepFn, cfg: BeamConfig, vocab_size: int, eos_id: int = EOS_ID,
              banned: Sequence[int] = (PAD_ID, BOS_ID)) -> BeamResult:
    ids: list[int] = []
    total = 0.0
    for step in range(cfg.max_len):
        row = np.array(step_logprobs([ids])[0], dtype=np.float64)
        row[[b for b in banned if b != eos_id]] = -np.inf
        if step + 1 < cfg.min_len:
            row[eos_id] = -np.inf
        v = int(np.argmax(row))
        total += float(row[v])
        ids.append(v)
        if v == eos_id:
            return BeamResult(ids, total / length_penalty(len(ids), cfg.length_penalty), total, False)
    return BeamResult(ids, total / length_penalty(len(ids), cfg.length_penalty), total, True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def model_step_fn(store: ParamStore, src_ids, hooks: PeftHooks | None = None) -> StepFn:
    hooks = hooks or PeftHooks()
    prefixes = hooks.layer_prefixes(store.config.n_layers)
    mem = encode(store, np.asarray(src_ids)[None, :], hooks, None, prefixes)

    def step(prefix_batch: list[list[int]]) -> np.ndarray:
        dec_in = np.array([[BOS_ID] + list(p) for p in prefix_batch], dtype=np.int64)
        logits = decode(store, mem, dec_in, hooks, None, prefixes)
        return _log_softmax(logits.data[:, -1, :])

    return step


def beam_search(store: ParamStore, src_ids, cfg: BeamConfig = BeamConfig(),
                hooks: PeftHooks | None = None) -> BeamResult:
    V = store.config.vocab_size
    max_len = min(cfg.max_len, store.config.max_seq_len - _prefix_len(hooks))
    cfg = BeamConfig(cfg.beam_size, cfg.length_penalty, max(max_len, cfg.min_len), cfg.min_len)
    return beam_search_fn(model_step_fn(store, src_ids, hooks), cfg, V)


def greedy_decode(store: ParamStore, src_ids, max_len: int = 64, hooks: PeftHooks | None = None) -> BeamResult:
    max_len = min(max_len, store.config.max_seq_len - _prefix_len(hooks))
    return greedy_fn(model_step_fn(store, src_ids, hooks), BeamConfig(1, 0.0, max_len, 1),
                     store.config.vocab_size)


def _prefix_len(hooks: PeftHooks | None) -> int:
    return 0 if hooks is None or hooks.prefix is None else hooks.prefix.length
