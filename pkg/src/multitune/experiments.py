"""Experiment runners: score-vs-size scaling, supervised transfer, six-setting comparison."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .data.corpus import FEWSHOT_LADDER, LanguageCorpus, fewshot_subsample, is_fewshot, load_corpus, save_corpus
from .data.synthetic import DEFAULT_LANGUAGES, PseudoLanguage, make_synthetic_corpus
from .data.tokenizer import Tokenizer, train_tokenizer
from .decoding import BeamConfig, beam_search
from .errors import ConfigError
from .model import ModelConfig, expected_param_count, hooks_from_store, init_model
from .params import SHARED, ParamStore, private_group
from .rouge import VARIANTS, CorpusReport, corpus_report, settings_table
from .strategies import (ALL_KINDS, Kind, TransferPlan, TuningStrategy, build_strategy, private_param_count,
                         solve_dims, transfer_pipeline)
from .trainer import PRESETS, TrainConfig, pretrain_backbone, setting_for_size, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("exp1_scaling", "exp2_transfer", "exp3_joint")
EXP1_METHODS = {"prefix": Kind.MPE_prefix, "adapter": Kind.MPE_adapter, "plm": Kind.PLF}
METHOD_OF_KIND = {Kind.PLF: "plm", Kind.MPF: "plm", Kind.MPE_adapter: "adapter", Kind.MPS_adapter: "adapter",
                  Kind.MPE_prefix: "prefix", Kind.MPS_prefix: "prefix"}
DIM_KEYS = ("adapter_dim", "prefix_len", "prefix_inner")

DEFAULT_MODEL = dict(d_model=64, n_layers_enc=2, n_layers_dec=2, n_heads=4, d_ff=128, max_seq_len=160, dropout=0.0)
DEFAULT_PRETRAIN = dict(epochs=80, steps_per_epoch=50, batch_size=16, learning_rate=1e-3)


@dataclass
class RunConfig:
    experiment: str = "exp3_joint"
    corpus: str = "synthetic"
    output_dir: str = "runs/default"
    languages: list[str] | None = None
    synthetic_languages: list[dict] | None = None
    strategies: list[str] | None = None
    sizes: list[int] = field(default_factory=lambda: [5, 50])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    model: dict = field(default_factory=dict)
    tokenizer: dict = field(default_factory=lambda: {"vocab_size": 600})
    pretrain: dict | None = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    method_train: dict = field(default_factory=dict)
    use_preset_dims: bool = False
    decode: dict = field(default_factory=lambda: {"beam_size": 4, "length_penalty": 0.6, "max_len": 48})
    train_languages: list[str] | None = None
    heldout_languages: list[str] | None = None
    max_test: int | None = None
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        for s in self.strategies or []:
            if s not in [k.value for k in ALL_KINDS] and s not in EXP1_METHODS:
                raise ConfigError(f"unknown strategy {s!r}")
        for m in self.method_train:
            if m not in PRESETS:
                raise ConfigError(f"unknown preset method {m!r}")
        bad = [s for s in self.sizes if s not in FEWSHOT_LADDER]
        if bad:
            raise ConfigError(f"sizes {bad} not in the supported ladder")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def check_output_dir(self) -> Path:
        out = Path(self.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write-probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise ConfigError(f"output dir {out} is not writable: {exc}") from exc
        return out


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        if d.get(p) is None:
            d[p] = {}
        d = d[p]
    d[parts[-1]] = value


def load_run_config(path=None, overrides: list[str] | None = None, **kw) -> RunConfig:
    """Read a JSON run config, then apply ``key=value`` overrides (dotted keys, JSON values)."""
    raw = json.loads(Path(path).read_text()) if path else {}
    raw.update({k: v for k, v in kw.items() if v is not None})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, val = item.split("=", 1)
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        _set_dotted(raw, key.strip(), parsed)
    unknown = set(raw) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
    return RunConfig(**raw)


def _git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).parent)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(cfg: RunConfig, out_dir: Path, extra: dict | None = None) -> Path:
    git = _git_describe()
    manifest = {"version": __version__ + (f"+{git}" if git else ""), "experiment": cfg.experiment,
                "config_hash": cfg.config_hash(), "seeds": list(cfg.seeds), "seed": cfg.seed,
                "config": cfg.to_dict(), **(extra or {})}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------- shared setup


@dataclass
class Setup:
    corpora: dict[str, LanguageCorpus]
    tokenizer: Tokenizer
    base: ParamStore
    model_config: ModelConfig
    dir: Path


def _synthetic_spec(cfg: RunConfig) -> list[PseudoLanguage]:
    if cfg.synthetic_languages is None:
        return list(DEFAULT_LANGUAGES)
    return [PseudoLanguage(**{**d, "sentences": tuple(d.get("sentences", (2, 4)))}) for d in cfg.synthetic_languages]


def prepare(cfg: RunConfig) -> Setup:
    """Corpus, tokenizer and (optionally pretrained) backbone, cached by their config hash."""
    out = cfg.check_output_dir()
    key = {"corpus": cfg.corpus, "synthetic": cfg.synthetic_languages, "languages": cfg.languages,
           "model": cfg.model, "tokenizer": cfg.tokenizer, "pretrain": cfg.pretrain, "seed": cfg.seed}
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]
    sdir = out / f"setup-{digest}"
    if cfg.corpus == "synthetic":
        corpora = make_synthetic_corpus(_synthetic_spec(cfg), seed=cfg.seed)
        if cfg.languages:
            corpora = [c for c in corpora if c.lang in cfg.languages]
    else:
        corpora, _ = load_corpus(cfg.corpus, cfg.languages, split_seed=cfg.seed)
    corpora = {c.lang: c for c in corpora}
    tok_path, base_path = sdir / "tokenizer.txt", sdir / "base.ckpt"
    if base_path.exists() and tok_path.exists():
        tok = Tokenizer.load(tok_path)
        base = checkpoint.load(base_path)
        return Setup(corpora, tok, base, base.config, sdir)
    sdir.mkdir(parents=True, exist_ok=True)
    if cfg.corpus == "synthetic":
        save_corpus(sdir / "corpus", list(corpora.values()))
    tcfg = dict(cfg.tokenizer)
    if tcfg.get("path"):
        tok = Tokenizer.load(tcfg["path"])
    else:
        texts = [t for c in corpora.values() for p in c.split("train") for t in (p.text, p.summary)]
        tok = train_tokenizer(texts, vocab_size=int(tcfg.get("vocab_size", 600)), seed=cfg.seed)
    mcfg = ModelConfig(**{**DEFAULT_MODEL, **cfg.model, "vocab_size": tok.vocab_size})
    base = init_model(mcfg, cfg.seed)
    if cfg.pretrain is not None:
        pcfg = TrainConfig(**{**DEFAULT_PRETRAIN, **cfg.pretrain, "seed": cfg.seed})
        base = pretrain_backbone(base, corpora, tok, pcfg, log_path=sdir / "pretrain_metrics.csv")
    tok.save(tok_path)
    checkpoint.save(base, base_path)
    # reload so fresh and cached runs see byte-identical float32 weights
    return Setup(corpora, tok, checkpoint.load(base_path), mcfg, sdir)


def train_config_for(cfg: RunConfig, method: str, train_size: int, strategy: Kind) -> TrainConfig:
    base = dict(PRESETS[method][setting_for_size(train_size)])
    if not cfg.use_preset_dims:
        for k in DIM_KEYS:
            base.pop(k, None)
    merged = {**base, "beam_size": cfg.decode.get("beam_size", 4),
              "length_penalty": cfg.decode.get("length_penalty", 0.6),
              **cfg.train, **cfg.method_train.get(method, {})}
    tc = TrainConfig.from_dict({k: v for k, v in merged.items() if k != "strategy"})
    return tc.with_strategy(TuningStrategy(strategy, adapter_dim=tc.adapter_dim, prefix_len=tc.prefix_len,
                                           prefix_inner=tc.prefix_inner))


def generate(store: ParamStore, corpus: LanguageCorpus, tok: Tokenizer, decode_cfg: dict,
             max_src_len: int = 128, split: str = "test", limit: int | None = None) -> list[dict]:
    pairs = corpus.split(split)[:limit] if limit else corpus.split(split)
    bc = BeamConfig(int(decode_cfg.get("beam_size", 4)), float(decode_cfg.get("length_penalty", 0.6)),
                    int(decode_cfg.get("max_len", 48)), int(decode_cfg.get("min_len", 1)))
    hooks = hooks_from_store(store, corpus.lang)
    out = []
    for p in pairs:
        src = tok.encode(p.text)[:max_src_len] or [1]
        res = beam_search(store, src, bc, hooks)
        out.append({"id": p.doc_id, "lang": corpus.lang, "hypothesis": tok.decode(res.tokens, errors="replace"),
                    "score": round(res.score, 6), "truncated": res.truncated, "reference": p.summary})
    return out


def _report(gens: list[dict]) -> CorpusReport:
    return corpus_report([(g["hypothesis"], g["reference"], g["lang"]) for g in gens])


def write_generations(path, gens: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for g in gens:
            fh.write(json.dumps({k: g[k] for k in ("id", "lang", "hypothesis", "score", "truncated")},
                                ensure_ascii=False) + "\n")
    return path


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _map(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _fmt(x: float) -> str:
    return f"{100 * x:.2f}"


# ---------------------------------------------------------------- exp1: scaling


def _exp1_cell(task) -> dict:
    cfg, setup, lang, size, method, seed = task
    corpus = setup.corpora[lang]
    try:
        tr, dv = fewshot_subsample(corpus, size, seed)
        sub = corpus.subset(tr, dv)
        kind = EXP1_METHODS[method]
        tc = train_config_for(cfg, method, size, kind).replace(seed=seed)
        store = build_strategy(setup.base, tc.strategy, [lang] if tc.strategy.peft_kind else [], seed=seed)
        tag = f"{lang}_{size}_{method}_{seed}"
        res = train(tc, {lang: sub}, store, setup.tokenizer,
                    log_path=Path(cfg.output_dir) / "exp1" / "logs" / f"{tag}.csv")
        gens = generate(res.store_for(lang), corpus, setup.tokenizer, cfg.decode, tc.max_src_len, limit=cfg.max_test)
        write_generations(Path(cfg.output_dir) / "exp1" / "generations" / f"{tag}.jsonl", gens)
        scores = _report(gens).per_lang.get(lang, {v: 0.0 for v in VARIANTS})
        return {"lang": lang, "size": size, "strategy": method, "seed": seed, **scores}
    except Exception as exc:  # sub-run failures are recorded, not fatal
        log.warning("exp1 cell %s/%s/%s/%s failed: %s", lang, size, method, seed, exc)
        return {"lang": lang, "size": size, "strategy": method, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def exp1_schedule(languages, sizes, methods, seeds) -> list[tuple[str, int, str, int]]:
    """Cells in run order; few-shot sizes get every seed, larger sizes only the first."""
    cells = []
    for lang in languages:
        for size in sizes:
            for method in methods:
                for seed in (seeds if is_fewshot(size) else seeds[:1]):
                    cells.append((lang, size, method, seed))
    return cells


def run_exp1(cfg: RunConfig) -> dict[str, Path]:
    setup = prepare(cfg)
    out = Path(cfg.output_dir) / "exp1"
    out.mkdir(parents=True, exist_ok=True)
    methods = cfg.strategies or list(EXP1_METHODS)
    langs = cfg.languages or sorted(setup.corpora)
    cells = exp1_schedule(langs, sorted(cfg.sizes), methods, list(cfg.seeds))
    results = _map(_exp1_cell, [(cfg, setup, *c) for c in cells], cfg.workers)
    ok = [r for r in results if "error" not in r]
    rows_path = _write_csv(out / "scores.csv", ["lang", "size", "strategy", "seed", *VARIANTS],
                           [[r["lang"], r["size"], r["strategy"], r["seed"], *(_fmt(r[v]) for v in VARIANTS)]
                            for r in ok])
    _write_csv(out / "failures.csv", ["lang", "size", "strategy", "seed", "error"],
               [[r["lang"], r["size"], r["strategy"], r["seed"], r["error"]] for r in results if "error" in r])
    curves = []
    for lang in langs:
        for method in methods:
            for size in sorted(cfg.sizes):
                cell = [r for r in ok if (r["lang"], r["strategy"], r["size"]) == (lang, method, size)]
                if cell:
                    means = [float(np.mean([r[v] for r in cell])) for v in VARIANTS]
                    curves.append([lang, method, size, f"{math.log10(size):.4f}", len(cell), *(_fmt(m) for m in means)])
    curves_path = _write_csv(out / "curves.csv", ["lang", "strategy", "size", "log10_size", "n_seeds", *VARIANTS], curves)
    write_manifest(cfg, out, {"cells": len(cells), "failed": len(results) - len(ok)})
    paths = {"scores": rows_path, "curves": curves_path}
    plot = plot_curves(curves_path, out / "curves.png")
    if plot:
        paths["plot"] = plot
    return paths


def plot_curves(curves_csv, path) -> Path | None:
    """Rendered R2-vs-size chart (log x axis); skipped when matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    with open(curves_csv) as fh:
        rows = list(csv.DictReader(fh))
    langs = sorted({r["lang"] for r in rows})
    fig, axes = plt.subplots(1, len(langs), figsize=(4 * len(langs), 3.2), squeeze=False)
    for ax, lang in zip(axes[0], langs):
        for method in sorted({r["strategy"] for r in rows}):
            pts = [(int(r["size"]), float(r["R2"])) for r in rows if r["lang"] == lang and r["strategy"] == method]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=method)
        ax.set_xscale("log")
        ax.set_title(lang)
        ax.set_xlabel("training samples")
        ax.set_ylabel("R2")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


# ---------------------------------------------------------------- exp2: transfer


def default_transfer_split(languages: list[str]) -> tuple[list[str], list[str]]:
    """Synthetic default: hold out the lowest-resource Latin language and every non-Latin one."""
    held = [l for l in languages if l in ("lat_lo", "grk", "cyr")]
    return [l for l in languages if l not in held], held


def run_exp2(cfg: RunConfig) -> dict[str, Path]:
    setup = prepare(cfg)
    out = Path(cfg.output_dir) / "exp2"
    out.mkdir(parents=True, exist_ok=True)
    langs = sorted(setup.corpora)
    train_langs, held = cfg.train_languages, cfg.heldout_languages
    if not train_langs or not held:
        d_train, d_held = default_transfer_split(langs)
        train_langs, held = train_langs or d_train, held or d_held
    plan = TransferPlan(list(train_langs), list(held))
    size = max(len(setup.corpora[l].split("train")) for l in train_langs)
    stage1 = train_config_for(cfg, "plm", size, Kind.MPF)
    scores: dict[tuple[str, str], dict[str, dict[str, float]]] = {}
    base_ckpt = None
    for peft in ("prefix", "adapter"):
        held_size = max(len(setup.corpora[l].split("train")) for l in held)
        stage2 = train_config_for(cfg, peft, held_size, EXP1_METHODS[peft])
        for column in ("base", "transferred"):
            run_dir = out / f"{column}_{peft}"
            if column == "base":
                p = TransferPlan(plan.train_languages, plan.heldout_languages)
                res = transfer_pipeline(p, peft, setup.corpora, setup.tokenizer, stage1, stage2, run_dir,
                                        init_store=setup.base, run_stage1=False)
            else:
                first = base_ckpt is None
                p = TransferPlan(plan.train_languages, plan.heldout_languages,
                                 None if first else str(base_ckpt))
                res = transfer_pipeline(p, peft, setup.corpora, setup.tokenizer, stage1, stage2, run_dir,
                                        init_store=setup.base, run_stage1=first)
                base_ckpt = res.base_checkpoint
            for lang in held:
                gens = generate(res.stores[lang], setup.corpora[lang], setup.tokenizer, cfg.decode,
                                stage2.max_src_len, limit=cfg.max_test)
                write_generations(run_dir / f"{lang}.generations.jsonl", gens)
                scores[(column, peft)] = {**scores.get((column, peft), {}),
                                          lang: _report(gens).per_lang.get(lang, {v: 0.0 for v in VARIANTS})}
    blocks = [(c, p) for c in ("base", "transferred") for p in ("prefix", "adapter")]
    header = ["language"] + [f"{c}/{p}/{v}" for c, p in blocks for v in VARIANTS]
    rows = [[lang] + [_fmt(scores[b][lang][v]) for b in blocks for v in VARIANTS] for lang in held]
    table = _write_csv(out / "table1.csv", header, rows)
    write_manifest(cfg, out, {"train_languages": plan.train_languages, "heldout_languages": plan.heldout_languages})
    return {"table": table}


# ---------------------------------------------------------------- exp3: six settings


def budget_check(config: ModelConfig | None = None, n_languages: int = 45) -> dict:
    """Closed-form parameter budgets of the private modules on ``config``."""
    config = config or ModelConfig()
    backbone = expected_param_count(config)
    out = {"backbone": backbone, "n_languages": n_languages}
    for kind in (Kind.MPE_adapter, Kind.MPE_prefix, Kind.MPS_adapter, Kind.MPS_prefix):
        dims = solve_dims(TuningStrategy(kind), config, backbone)
        per = private_param_count(dims, config) / backbone
        out[kind.value] = {"dims": dataclasses.asdict(dims), "per_language": per, "aggregate": per * n_languages}
    return out


def _exp3_setting(task):
    cfg, setup, kind = task
    langs = sorted(setup.corpora)
    method = METHOD_OF_KIND[kind]
    logs = Path(cfg.output_dir) / "exp3" / "logs"
    sizes = {l: len(setup.corpora[l].split("train")) for l in langs}
    stores = {}
    if TuningStrategy(kind).joint:
        tc = train_config_for(cfg, method, max(sizes.values()), kind)
        store = build_strategy(setup.base, tc.strategy, langs if tc.strategy.peft_kind else [], seed=cfg.seed)
        res = train(tc, setup.corpora, store, setup.tokenizer, log_path=logs / f"{kind.value}.csv")
        stores = {l: res.store_for(l) for l in langs}
    else:
        # independent runs take the preset matching each language's own train size
        for lang in langs:
            tc = train_config_for(cfg, method, sizes[lang], kind)
            store = build_strategy(setup.base, tc.strategy, [lang] if tc.strategy.peft_kind else [], seed=cfg.seed)
            res = train(tc, {lang: setup.corpora[lang]}, store, setup.tokenizer,
                        log_path=logs / f"{kind.value}.{lang}.csv")
            stores[lang] = res.store_for(lang)
    gens = []
    for lang in langs:
        gens += generate(stores[lang], setup.corpora[lang], setup.tokenizer, cfg.decode, tc.max_src_len,
                         limit=cfg.max_test)
    write_generations(Path(cfg.output_dir) / "exp3" / "generations" / f"{kind.value}.jsonl", gens)
    ratios = {l: stores[l].total_params(private_group(l)) / stores[l].total_params(SHARED) for l in langs}
    return kind.value, _report(gens), ratios


def run_exp3(cfg: RunConfig) -> dict[str, Path]:
    setup = prepare(cfg)
    out = Path(cfg.output_dir) / "exp3"
    out.mkdir(parents=True, exist_ok=True)
    kinds = [Kind(s) for s in cfg.strategies] if cfg.strategies else list(ALL_KINDS)
    results = _map(_exp3_setting, [(cfg, setup, k) for k in kinds], cfg.workers)
    reports = {name: rep for name, rep, _ in results}
    for name, rep in reports.items():
        rep.to_csv(out / "reports" / f"{name}.csv")
    table = settings_table(reports, out / "table3.csv")
    paths = {"table": table}
    if "PLF" in reports:
        sizes = {l: len(c.split("train")) for l, c in setup.corpora.items()}
        rows = []
        for name, rep in reports.items():
            if name == "PLF":
                continue
            for lang in sorted(rep.per_lang, key=lambda l: (sizes[l], l)):
                if lang in reports["PLF"].per_lang:
                    delta = rep.per_lang[lang]["R2"] - reports["PLF"].per_lang[lang]["R2"]
                    rows.append([name, lang, sizes[lang], _fmt(delta)])
        paths["delta_r2"] = _write_csv(out / "delta_r2.csv", ["setting", "lang", "train_size", "delta_R2"], rows)
    else:
        log.warning("no PLF baseline; relative R2 series skipped")
    budgets = {"default_config": budget_check(), "run": {name: r for name, _, r in results}}
    (out / "budget.json").write_text(json.dumps(budgets, indent=2, sort_keys=True))
    paths["budget"] = out / "budget.json"
    write_manifest(cfg, out, {"settings": [k.value for k in kinds]})
    return paths


RUNNERS = {"exp1_scaling": run_exp1, "exp2_transfer": run_exp2, "exp3_joint": run_exp3}


# ---------------------------------------------------------------- report


def _md_table(path: Path) -> str:
    with path.open() as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return ""
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(lines)


def report(run_dir) -> Path:
    """Collect whatever experiment tables exist under ``run_dir`` into ``report.md``."""
    run_dir = Path(run_dir)
    parts = []
    for title, rel in (("Score vs training-set size", "exp1/curves.csv"),
                       ("Supervised transfer", "exp2/table1.csv"),
                       ("Six settings", "exp3/table3.csv"),
                       ("R2 relative to per-language fine-tuning", "exp3/delta_r2.csv")):
        p = run_dir / rel
        if p.exists():
            parts.append(f"## {title}\n\n{_md_table(p)}\n")
    if (run_dir / "exp1/curves.csv").exists():
        plot_curves(run_dir / "exp1/curves.csv", run_dir / "exp1/curves.png")
    if not parts:
        raise FileNotFoundError(f"no experiment outputs under {run_dir}")
    out = run_dir / "report.md"
    out.write_text("# Results\n\n" + "\n".join(parts))
    return out


def score_files(hyp_path, ref_path, out_csv, policy_table: dict | None = None) -> CorpusReport:
    """Score hypothesis JSONL against reference JSONL joined on ``id``."""
    def read(p):
        with open(p, encoding="utf-8") as fh:
            return [json.loads(l) for l in fh if l.strip()]
    refs = {r["id"]: r for r in read(ref_path)}
    triples = []
    missing = 0
    for h in read(hyp_path):
        r = refs.get(h["id"])
        if r is None:
            missing += 1
            continue
        lang = h.get("lang") or r.get("lang") or Path(ref_path).stem
        triples.append((h["hypothesis"], r.get("summary", r.get("reference", "")), lang))
    if missing:
        log.warning("%d hypotheses have no reference", missing)
    rep = corpus_report(triples, policy_table)
    rep.to_csv(out_csv)
    return rep
