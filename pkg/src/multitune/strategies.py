"""Multilingual tuning settings as parameter partitions plus per-step update routing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import ConfigError, PipelineError, RoutingError
from .model import ModelConfig
from .params import SHARED, ParamStore, private_group
from .peft import adapter_param_count, init_adapter_arrays, init_prefix_arrays, prefix_param_count

PREFIX_LEN_HINT = 20


class Kind(str, Enum):
    PLF = "PLF"
    MPE_adapter = "MPE_adapter"
    MPE_prefix = "MPE_prefix"
    MPF = "MPF"
    MPS_adapter = "MPS_adapter"
    MPS_prefix = "MPS_prefix"


ALL_KINDS = tuple(Kind)
DEFAULT_BUDGET = {Kind.MPE_adapter: 0.08, Kind.MPE_prefix: 0.08, Kind.MPS_adapter: 0.02, Kind.MPS_prefix: 0.02}


@dataclass(frozen=True)
class PeftDims:
    adapter_dim: int | None = None
    prefix_len: int | None = None
    prefix_inner: int | None = None


@dataclass(frozen=True)
class TuningStrategy:
    kind: Kind
    budget_ratio: float | None = None
    adapter_dim: int | None = None  # explicit overrides skip the budget solve
    prefix_len: int | None = None
    prefix_inner: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.budget_ratio is None and self.kind in DEFAULT_BUDGET:
            object.__setattr__(self, "budget_ratio", DEFAULT_BUDGET[self.kind])
        if self.budget_ratio is not None and not self.budget_ratio > 0:
            raise ConfigError("budget_ratio must be positive")

    @property
    def peft_kind(self) -> str | None:
        if self.kind in (Kind.MPE_adapter, Kind.MPS_adapter):
            return "adapter"
        if self.kind in (Kind.MPE_prefix, Kind.MPS_prefix):
            return "prefix"
        return None

    @property
    def joint(self) -> bool:
        """Joint settings train one model on a language-sampled stream."""
        return self.kind in (Kind.MPF, Kind.MPS_adapter, Kind.MPS_prefix)

    @property
    def shared_tunable(self) -> bool:
        return self.kind not in (Kind.MPE_adapter, Kind.MPE_prefix)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "budget_ratio": self.budget_ratio, "adapter_dim": self.adapter_dim,
                "prefix_len": self.prefix_len, "prefix_inner": self.prefix_inner}


def solve_adapter_dim(backbone: int, d: int, n_layers: int, ratio: float) -> int:
    """Largest inner dim ``b`` whose per-language adapter count stays within ``ratio * backbone``."""
    b = math.floor((ratio * backbone / n_layers - 2 * d) / (2 * d))
    if b < 1:
        raise ConfigError(f"adapter budget {ratio:.4f} is unachievable (b={b})")
    return b


def solve_prefix_dims(backbone: int, d: int, n_layers: int, ratio: float,
                      inner: int | None = None, length_hint: int = PREFIX_LEN_HINT) -> tuple[int, int]:
    """Solve ``(l, m)``: ``m`` from the length hint (or fixed), then ``l`` with ``m`` fixed, rounding down."""
    budget = ratio * backbone
    m = inner if inner is not None else math.floor((budget - d * length_hint) / (d * (1 + n_layers)))
    if m < 1:
        raise ConfigError(f"prefix budget {ratio:.4f} is unachievable (m={m})")
    l = math.floor((budget - d * m - m * d * n_layers) / d)
    if l < 1:
        raise ConfigError(f"prefix budget {ratio:.4f} is unachievable (l={l})")
    return l, m


def solve_dims(strategy: TuningStrategy, config: ModelConfig, backbone: int) -> PeftDims:
    d, n = config.d_model, config.n_layers
    if strategy.peft_kind == "adapter":
        b = strategy.adapter_dim or solve_adapter_dim(backbone, d, n, strategy.budget_ratio)
        return PeftDims(adapter_dim=b)
    if strategy.peft_kind == "prefix":
        if strategy.prefix_len is not None and strategy.prefix_inner is not None:
            return PeftDims(prefix_len=strategy.prefix_len, prefix_inner=strategy.prefix_inner)
        l, m = solve_prefix_dims(backbone, d, n, strategy.budget_ratio, strategy.prefix_inner)
        return PeftDims(prefix_len=strategy.prefix_len or l, prefix_inner=m)
    return PeftDims()


def private_param_count(dims: PeftDims, config: ModelConfig) -> int:
    d, n = config.d_model, config.n_layers
    if dims.adapter_dim is not None:
        return n * adapter_param_count(d, dims.adapter_dim)
    if dims.prefix_len is not None:
        return prefix_param_count(dims.prefix_len, d, dims.prefix_inner, n)
    return 0


def _lang_rng(seed: int, lang: str) -> np.random.Generator:
    return np.random.default_rng([seed, 7919] + [ord(c) for c in lang])


def build_strategy(store: ParamStore, strategy: TuningStrategy, languages: list[str],
                   seed: int = 0) -> ParamStore:
    """Copy ``store`` and register private PEFT groups plus tunable flags for ``strategy``.

    Private init depends only on ``(seed, lang)``, so a language's modules do
    not change when other languages are added.
    """
    if store.groups() not in ([SHARED], []):
        raise ConfigError("build_strategy expects a store with shared parameters only")
    if len(set(languages)) != len(languages):
        raise ConfigError("duplicate languages")
    cfg: ModelConfig = store.config
    out = store.copy()
    out.set_tunable(SHARED, strategy.shared_tunable)
    dims = solve_dims(strategy, cfg, store.total_params(SHARED))
    d, n = cfg.d_model, cfg.n_layers
    for lang in languages:
        rng = _lang_rng(seed, lang)
        grp = private_group(lang)
        if dims.adapter_dim is not None:
            for i in range(n):
                for key, arr in init_adapter_arrays(rng, d, dims.adapter_dim).items():
                    out.register(f"private.{lang}.adapter.{i}.{key}", arr, grp, True)
        elif dims.prefix_len is not None:
            for key, arr in init_prefix_arrays(rng, dims.prefix_len, d, dims.prefix_inner, n).items():
                out.register(f"private.{lang}.prefix.{key}", arr, grp, True)
    return out


def budget_ratios(store: ParamStore) -> dict[str, float]:
    shared = store.total_params(SHARED)
    return {lang: store.total_params(private_group(lang)) / shared for lang in store.languages()}


def route_update(store: ParamStore, strategy: TuningStrategy, lang: str,
                 languages: list[str] | None = None) -> list[str]:
    """Names of the parameters updated on a step that sampled ``lang``."""
    known = languages if languages is not None else store.languages()
    if strategy.peft_kind is not None and lang not in store.languages():
        raise RoutingError(f"no private parameters for language {lang!r}")
    if known and lang not in known:
        raise RoutingError(f"unknown language {lang!r}")
    groups = []
    if strategy.shared_tunable:
        groups.append(SHARED)
    if strategy.peft_kind is not None:
        groups.append(private_group(lang))
    return [n for g in groups for n in store.names(g) if store.param(n).tunable]


# ---------------------------------------------------------------- supervised transfer


def default_heldout_languages() -> list[str]:
    text = resources.files("multitune.data").joinpath("heldout_languages.json").read_text()
    return list(json.loads(text)["heldout_languages"])


@dataclass
class TransferPlan:
    train_languages: list[str]
    heldout_languages: list[str] = field(default_factory=default_heldout_languages)
    base_checkpoint: str | None = None

    def __post_init__(self):
        overlap = set(self.train_languages) & set(self.heldout_languages)
        if overlap:
            raise ConfigError(f"train and held-out languages overlap: {sorted(overlap)}")
        if not self.train_languages or not self.heldout_languages:
            raise ConfigError("transfer plan needs train and held-out languages")

    def check_covers(self, corpus_languages) -> None:
        missing = (set(self.train_languages) | set(self.heldout_languages)) - set(corpus_languages)
        if missing:
            raise ConfigError(f"plan languages missing from corpus: {sorted(missing)}")

    @classmethod
    def from_file(cls, path) -> "TransferPlan":
        raw = json.loads(Path(path).read_text())
        return cls(raw["train_languages"], raw.get("heldout_languages") or default_heldout_languages(),
                   raw.get("base_checkpoint"))


@dataclass
class TransferResult:
    base_hash: str
    base_checkpoint: Path | None
    private_checkpoints: dict[str, Path]
    stores: dict[str, ParamStore]
    logs: dict[str, list]


def transfer_pipeline(plan: TransferPlan, peft_kind: str, corpora: dict, tokenizer, stage1_cfg, stage2_cfg,
                      run_dir, init_store: ParamStore | None = None, run_stage1: bool = True) -> TransferResult:
    """Stage 1: MPF on the train languages. Stage 2: MPE(``peft_kind``) per held-out language.

    With ``run_stage1=False`` and no ``plan.base_checkpoint`` the held-out
    languages adapt ``init_store`` directly (the no-transfer baseline).
    """
    from .trainer import train

    if peft_kind not in ("adapter", "prefix"):
        raise ConfigError(f"unknown peft kind {peft_kind!r}")
    plan.check_covers(corpora)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    base_path = Path(plan.base_checkpoint) if plan.base_checkpoint else None
    if run_stage1:
        if init_store is None:
            raise PipelineError("stage 1 needs an initial store")
        base_path = base_path or run_dir / "base.ckpt"
        mpf = build_strategy(init_store, TuningStrategy(Kind.MPF), [])
        res = train(stage1_cfg.with_strategy(TuningStrategy(Kind.MPF)),
                    {l: corpora[l] for l in plan.train_languages}, mpf, tokenizer,
                    log_path=run_dir / "stage1_metrics.csv")
        checkpoint.save(res.store_for(plan.train_languages[0]), base_path)
    if base_path is not None:
        if not base_path.exists():
            raise PipelineError(f"stage-1 checkpoint not found: {base_path}")
        base = checkpoint.load(base_path)
    elif init_store is not None:
        base = init_store
    else:
        raise PipelineError("no stage-1 checkpoint and no initial store")
    base_hash = base.hash_group(SHARED)
    strategy = TuningStrategy(Kind.MPE_adapter if peft_kind == "adapter" else Kind.MPE_prefix,
                              adapter_dim=stage2_cfg.adapter_dim, prefix_len=stage2_cfg.prefix_len,
                              prefix_inner=stage2_cfg.prefix_inner)
    privates, stores, logs = {}, {}, {}
    for lang in plan.heldout_languages:
        store = build_strategy(base, strategy, [lang], seed=stage2_cfg.seed)
        res = train(stage2_cfg.with_strategy(strategy), {lang: corpora[lang]}, store, tokenizer,
                    log_path=run_dir / f"{lang}.metrics.csv")
        out = res.store_for(lang)
        if out.hash_group(SHARED) != base_hash:
            raise PipelineError(f"shared weights changed during stage 2 for {lang}")
        privates[lang] = checkpoint.save(out, run_dir / f"{lang}.private.ckpt", group=private_group(lang))
        stores[lang] = out
        logs[lang] = res.log
    return TransferResult(base_hash, base_path, privates, stores, logs)
