"""MLE training loop: Adam, gradient accumulation, per-epoch dev selection, metrics CSV."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, NumericError, Tensor
from .data.corpus import LanguageCorpus, LanguageSampler, Pair
from .errors import ConfigError, TrainingDiverged
from .model import EOS_ID, PAD_ID, forward_logits, hooks_from_store
from .params import ParamStore
from .strategies import Kind, TuningStrategy, route_update

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "epoch", "lang", "split", "loss", "R1", "R2", "RL", "wall_ms")
SELECTION_METRICS = ("dev_loss", "dev_R2")


def nll_loss(logits: Tensor, tgt_ids) -> Tensor:
    """Mean over non-pad positions of ``-log softmax(logits)[gold]``."""
    return ad.cross_entropy(logits, np.asarray(tgt_ids), ignore_index=PAD_ID)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


class Adam:
    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state: dict[str, AdamState] = {}

    def step(self, store: ParamStore, names, grads: dict[str, np.ndarray] | None = None) -> None:
        """Update exactly ``names``; a missing gradient counts as zero."""
        b1, b2 = self.betas
        for n in names:
            p = store.param(n)
            if not p.tunable:
                continue
            data = p.tensor.data
            g = (grads or {}).get(n) if grads is not None else p.tensor.grad
            g = np.zeros(data.shape) if g is None else np.asarray(g, dtype=np.float64)
            st = self.state.get(n)
            if st is None:
                st = self.state[n] = AdamState(np.zeros(data.shape), np.zeros(data.shape))
            if st.m.shape != data.shape or g.shape != data.shape:
                raise RuntimeError(f"optimizer state/param shape mismatch for {n}")
            st.t += 1
            st.m = b1 * st.m + (1 - b1) * g
            st.v = b2 * st.v + (1 - b2) * g * g
            mhat = st.m / (1 - b1 ** st.t)
            vhat = st.v / (1 - b2 ** st.t)
            data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(data.dtype)


def optimizer_step(store: ParamStore, names, grads: dict[str, np.ndarray], lr: float,
                   state: Adam | None = None) -> Adam:
    opt = state or Adam(lr)
    opt.step(store, names, grads)
    return opt


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 15
    batch_size: int = 8
    grad_accum: int = 1
    strategy: TuningStrategy = TuningStrategy(Kind.PLF)
    seed: int = 0
    eval_every: int = 1
    selection_metric: str = "dev_loss"
    alpha: float = 0.5
    max_src_len: int = 128
    max_tgt_len: int = 48
    steps_per_epoch: int | None = None  # joint settings; default covers the train pool once
    max_steps: int | None = None
    adapter_dim: int | None = None
    prefix_len: int | None = None
    prefix_inner: int | None = None
    beam_size: int = 4
    length_penalty: float = 0.6
    stop_loss: float | None = None  # end early once the epoch's mean train loss drops below

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "grad_accum", "eval_every",
                     "max_src_len", "max_tgt_len"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"selection_metric must be one of {SELECTION_METRICS}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")

    def with_strategy(self, strategy: TuningStrategy) -> "TrainConfig":
        return dataclasses.replace(self, strategy=strategy)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["strategy"] = self.strategy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "strategy" in d and not isinstance(d["strategy"], TuningStrategy):
            s = d["strategy"]
            d["strategy"] = TuningStrategy(**s) if isinstance(s, dict) else TuningStrategy(Kind(s))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# method -> setting -> hyperparameters
PRESETS: dict[str, dict[str, dict]] = {
    "prefix": {
        "few-shot": dict(learning_rate=3e-4, epochs=20, batch_size=2, grad_accum=1, prefix_len=20, prefix_inner=800),
        "low-resource": dict(learning_rate=2e-4, epochs=15, batch_size=8, grad_accum=1, prefix_len=200, prefix_inner=800),
        "high-resource": dict(learning_rate=2e-4, epochs=15, batch_size=16, grad_accum=4, prefix_len=200, prefix_inner=800),
    },
    "adapter": {
        "few-shot": dict(learning_rate=1e-3, epochs=20, batch_size=2, grad_accum=1, adapter_dim=1200),
        "low-resource": dict(learning_rate=1e-3, epochs=15, batch_size=8, grad_accum=1, adapter_dim=1200),
        "high-resource": dict(learning_rate=1e-3, epochs=15, batch_size=16, grad_accum=4, adapter_dim=1200),
    },
    "plm": {
        "few-shot": dict(learning_rate=5e-4, epochs=20, batch_size=2, grad_accum=1),
        "low-resource": dict(learning_rate=5e-4, epochs=15, batch_size=8, grad_accum=1),
        "high-resource": dict(learning_rate=5e-4, epochs=15, batch_size=16, grad_accum=4),
    },
}
PRESET_DECODING = dict(beam_size=4, length_penalty=0.6)


def preset(method: str, setting: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[method][setting]
    except KeyError:
        raise ConfigError(f"no preset {method}/{setting}") from None
    return TrainConfig(**{**base, **PRESET_DECODING, **overrides})


def setting_for_size(size: int) -> str:
    if size <= 500:
        return "few-shot"
    return "low-resource" if size <= 30000 else "high-resource"


# ---------------------------------------------------------------- batching


@dataclass
class Encoded:
    src: list[list[int]]
    tgt: list[list[int]]


def encode_pairs(pairs: list[Pair], tokenizer, max_src_len: int, max_tgt_len: int) -> Encoded:
    src = [tokenizer.encode(p.text)[:max_src_len] or [EOS_ID] for p in pairs]
    tgt = [tokenizer.encode(p.summary)[:max_tgt_len - 1] + [EOS_ID] for p in pairs]
    return Encoded(src, tgt)


def pad_batch(seqs: list[list[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def _batch(enc: Encoded, idx) -> tuple[np.ndarray, np.ndarray]:
    return pad_batch([enc.src[i] for i in idx]), pad_batch([enc.tgt[i] for i in idx])


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    stores: dict[str, ParamStore]
    best_epoch: dict[str, int]
    log: list[dict] = field(default_factory=list)
    final_train_loss: dict[str, float] = field(default_factory=dict)
    sampled_steps: dict[str, int] = field(default_factory=dict)

    def store_for(self, lang: str) -> ParamStore:
        return self.stores[lang]


class MetricsLog:
    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = Path(path) if path else None
        self.t0 = time.perf_counter()

    def add(self, step, epoch, lang, split, loss=None, scores=None) -> None:
        scores = scores or {}
        self.rows.append({"step": step, "epoch": epoch, "lang": lang, "split": split,
                          "loss": loss, **{k: scores.get(k) for k in ("R1", "R2", "RL")},
                          "wall_ms": int((time.perf_counter() - self.t0) * 1000)})

    def write(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def select_best(history: list[tuple[int, float]], metric: str) -> int:
    """Epoch with the best dev value; ties go to the earlier epoch."""
    if not history:
        raise ValueError("empty history")
    sign = 1.0 if metric == "dev_loss" else -1.0
    return min(history, key=lambda h: (sign * h[1], h[0]))[0]


Evaluator = Callable[[ParamStore, str, Encoded], dict]


def dev_loss(store: ParamStore, lang: str, enc: Encoded, batch_size: int = 16) -> float:
    """Token-weighted mean NLL; private hooks are resolved for ``lang``."""
    hooks = hooks_from_store(store, lang)
    total, count = 0.0, 0
    for s in range(0, len(enc.src), batch_size):
        idx = range(s, min(s + batch_size, len(enc.src)))
        src, tgt = _batch(enc, idx)
        n = int((tgt != PAD_ID).sum())
        total += float(nll_loss(forward_logits(store, src, tgt, hooks), tgt).data) * n
        count += n
    return total / max(count, 1)


class _Runner:
    """Shared machinery for one training call."""

    def __init__(self, cfg: TrainConfig, store: ParamStore, mlog: MetricsLog):
        self.cfg, self.store, self.mlog = cfg, store, mlog
        self.opt = Adam(cfg.learning_rate)
        self.step = 0
        self.rng = np.random.default_rng([cfg.seed, 11])

    def micro_step(self, lang: str, routed: list[str], src, tgt) -> float:
        store = self.store
        for n in store:
            store[n].requires_grad = False
        for n in routed:
            store[n].requires_grad = True
        hooks = hooks_from_store(store, lang)
        drop_rng = None if store.config.dropout == 0 else self.rng
        try:
            with Graph() as g:
                loss = nll_loss(forward_logits(store, src, tgt, hooks, drop_rng), tgt)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError("loss", -1)
                g.backward(loss)
        except NumericError as exc:
            raise TrainingDiverged(self.step, lang, self.cfg.learning_rate, str(exc)) from exc
        return value

    def apply(self, routed: list[str], n_micro: int) -> None:
        grads = {}
        for n in routed:
            g = self.store[n].grad
            grads[n] = None if g is None else g / n_micro
        self.opt.step(self.store, routed, grads)
        self.store.zero_grad()
        self.step += 1


def train(cfg: TrainConfig, corpora, store: ParamStore, tokenizer, log_path=None,
          evaluator: Evaluator | None = None) -> TrainResult:
    """Train a copy of ``store`` (already built for ``cfg.strategy``) and return the best-epoch weights.

    ``corpora`` maps language to :class:`LanguageCorpus`. PLF trains an
    independent copy per language; MPE trains each language's private group
    in turn on the frozen shared backbone; MPF/MPS draw one language per
    optimizer step with smoothed probabilities.
    """
    if isinstance(corpora, (list, tuple)):
        corpora = {c.lang: c for c in corpora}
    for lang, c in corpora.items():
        if not c.split("train"):
            raise ConfigError(f"{lang}: empty train split")
    encode = lambda pairs: encode_pairs(pairs, tokenizer, cfg.max_src_len, cfg.max_tgt_len)
    train_enc = {l: encode(c.split("train")) for l, c in corpora.items()}
    dev_enc = {l: encode(c.split("dev") or c.split("train")) for l, c in corpora.items()}
    evaluator = evaluator or _default_evaluator(cfg, tokenizer, corpora)
    store = store.copy()
    mlog = MetricsLog(log_path)
    if cfg.strategy.joint:
        result = _train_joint(cfg, corpora, store, train_enc, dev_enc, evaluator, mlog)
    else:
        result = _train_independent(cfg, corpora, store, train_enc, dev_enc, evaluator, mlog)
    mlog.write()
    result.log = mlog.rows
    return result


def _default_evaluator(cfg: TrainConfig, tokenizer, corpora) -> Evaluator:
    if cfg.selection_metric == "dev_loss":
        return lambda store, lang, enc: {"loss": dev_loss(store, lang, enc)}

    from .decoding import BeamConfig, beam_search
    from .rouge import corpus_report

    refs = {l: [p.summary for p in (c.split("dev") or c.split("train"))] for l, c in corpora.items()}

    def ev(store, lang, enc):
        bc = BeamConfig(cfg.beam_size, cfg.length_penalty, cfg.max_tgt_len, 1)
        hooks = hooks_from_store(store, lang)
        hyps = [tokenizer.decode(beam_search(store, s, bc, hooks).tokens, errors="replace") for s in enc.src]
        rep = corpus_report([(h, r, lang) for h, r in zip(hyps, refs[lang])])
        return {"loss": dev_loss(store, lang, enc), **rep.per_lang.get(lang, {"R1": 0.0, "R2": 0.0, "RL": 0.0})}

    return ev


def _score(cfg: TrainConfig, ev: dict) -> float:
    return ev["loss"] if cfg.selection_metric == "dev_loss" else ev["R2"]


def _train_independent(cfg, corpora, base: ParamStore, train_enc, dev_enc, evaluator, mlog) -> TrainResult:
    stores, best_epochs, final = {}, {}, {}
    for lang in sorted(corpora):
        store = base.copy() if cfg.strategy.kind == Kind.PLF else base  # MPE languages share the frozen backbone
        runner = _Runner(cfg, store, mlog)
        runner.rng = np.random.default_rng([cfg.seed, 11] + [ord(c) for c in lang])
        routed = route_update(store, cfg.strategy, lang, list(corpora))
        enc = train_enc[lang]
        n = len(enc.src)
        history, best_snap = [], None
        for epoch in range(1, cfg.epochs + 1):
            order = runner.rng.permutation(n)
            batches = [order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]
            losses, pending = [], 0
            for bi, idx in enumerate(batches):
                losses.append(runner.micro_step(lang, routed, *_batch(enc, idx)))
                pending += 1
                if pending == cfg.grad_accum or bi == len(batches) - 1:
                    runner.apply(routed, pending)
                    pending = 0
                if cfg.max_steps is not None and runner.step >= cfg.max_steps:
                    break
            train_loss = float(np.mean(losses))
            mlog.add(runner.step, epoch, lang, "train", train_loss)
            done = (cfg.max_steps is not None and runner.step >= cfg.max_steps) or \
                (cfg.stop_loss is not None and train_loss < cfg.stop_loss)
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs or done:
                ev = evaluator(store, lang, dev_enc[lang])
                mlog.add(runner.step, epoch, lang, "dev", ev.get("loss"), ev)
                history.append((epoch, _score(cfg, ev)))
                if select_best(history, cfg.selection_metric) == epoch:
                    best_snap = store.snapshot(routed)
            final[lang] = train_loss
            if done:
                break
        best_epochs[lang] = select_best(history, cfg.selection_metric)
        store.restore(best_snap)
        stores[lang] = store
    return TrainResult(stores, best_epochs, final_train_loss=final)


def _train_joint(cfg, corpora, store: ParamStore, train_enc, dev_enc, evaluator, mlog) -> TrainResult:
    langs = sorted(corpora)
    counts = {l: len(train_enc[l].src) for l in langs}
    sampler = LanguageSampler(counts, cfg.alpha, seed=cfg.seed)
    runner = _Runner(cfg, store, mlog)
    steps = cfg.steps_per_epoch or max(1, math.ceil(sum(counts.values()) / (cfg.batch_size * cfg.grad_accum)))
    routes = {l: route_update(store, cfg.strategy, l, langs) for l in langs}
    tunable = store.tunable_names()
    history, best_snap, final = [], None, {}
    sampled: dict[str, int] = {l: 0 for l in langs}
    for epoch in range(1, cfg.epochs + 1):
        losses: dict[str, list[float]] = {}
        for _ in range(steps):
            lang = sampler.draw_language()
            sampled[lang] += 1
            for _ in range(cfg.grad_accum):
                idx = sampler.rng.choice(counts[lang], size=min(cfg.batch_size, counts[lang]), replace=False)
                losses.setdefault(lang, []).append(runner.micro_step(lang, routes[lang], *_batch(train_enc[lang], idx)))
            runner.apply(routes[lang], cfg.grad_accum)
            if cfg.max_steps is not None and runner.step >= cfg.max_steps:
                break
        for lang in langs:
            if lang in losses:
                final[lang] = float(np.mean(losses[lang]))
                mlog.add(runner.step, epoch, lang, "train", final[lang])
        all_losses = [x for v in losses.values() for x in v]
        done = (cfg.max_steps is not None and runner.step >= cfg.max_steps) or \
            (cfg.stop_loss is not None and float(np.mean(all_losses)) < cfg.stop_loss)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs or done:
            scores = []
            for lang in langs:
                ev = evaluator(store, lang, dev_enc[lang])
                mlog.add(runner.step, epoch, lang, "dev", ev.get("loss"), ev)
                scores.append(_score(cfg, ev))
            history.append((epoch, float(np.mean(scores))))
            if select_best(history, cfg.selection_metric) == epoch:
                best_snap = store.snapshot(tunable)
        if done:
            break
    store.restore(best_snap)
    return TrainResult({l: store for l in langs}, {l: select_best(history, cfg.selection_metric) for l in langs},
                       final_train_loss=final, sampled_steps=sampled)


# ---------------------------------------------------------------- backbone pretraining

_SENTENCE_END = re.compile(r"(?<=[.!?。।])\s+")


def sentence_copy_corpora(corpora, seed: int = 0) -> dict[str, LanguageCorpus]:
    """Documents only: the target is one randomly chosen sentence of the source."""
    if isinstance(corpora, (list, tuple)):
        corpora = {c.lang: c for c in corpora}
    out = {}
    for lang, c in sorted(corpora.items()):
        rng = np.random.default_rng([seed, 3] + [ord(ch) for ch in lang])
        pairs = []
        for p in c.split("train"):
            sents = [s for s in _SENTENCE_END.split(p.text.strip()) if s]
            pairs.append(Pair(p.doc_id, p.text, sents[int(rng.integers(len(sents)))]))
        out[lang] = LanguageCorpus(lang, pairs, {"train": list(range(len(pairs)))})
    return out


def pretrain_backbone(store: ParamStore, corpora, tokenizer, cfg: TrainConfig, log_path=None) -> ParamStore:
    """Jointly train every shared weight on sentence copying; returns a shared-only store."""
    from .strategies import build_strategy

    mpf = TuningStrategy(Kind.MPF)
    res = train(cfg.with_strategy(mpf), sentence_copy_corpora(corpora, cfg.seed),
                build_strategy(store, mpf, []), tokenizer, log_path=log_path)
    return next(iter(res.stores.values()))
