"""Command-line entry point: ``multitune <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .errors import ConfigError

log = logging.getLogger("multitune")


def _add_run_args(p: argparse.ArgumentParser, experiment: str) -> None:
    p.add_argument("--config", type=Path, help="JSON run config (default: built-in %s defaults)" % experiment)
    p.add_argument("--out", dest="output_dir", help="output directory (default: from config, else runs/default)")
    p.add_argument("--corpus", help="corpus path, or 'synthetic' (default: from config)")
    p.add_argument("--workers", type=int, help="parallel sub-runs (default: 1)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, dotted for nesting, value parsed as JSON (repeatable)")


def cmd_tokenizer_train(args) -> int:
    from .data.corpus import load_corpus
    from .data.tokenizer import train_tokenizer

    corpora, report = load_corpus(args.corpus)
    texts = [t for c in corpora for p in c.split("train") for t in (p.text, p.summary)]
    tok = train_tokenizer(texts, vocab_size=args.vocab_size, seed=args.seed)
    tok.save(args.out)
    print(f"tokenizer: {tok.vocab_size} ids, {len(tok.merges)} merges -> {args.out}")
    return 0


def _load_base(args, tok):
    from .model import ModelConfig, init_model

    if args.base:
        return checkpoint.load(args.base)
    from .experiments import DEFAULT_MODEL
    mcfg = ModelConfig(**{**DEFAULT_MODEL, "vocab_size": tok.vocab_size})
    return init_model(mcfg, args.seed)


def cmd_train(args) -> int:
    from .data.corpus import load_corpus
    from .data.tokenizer import Tokenizer
    from .experiments import _set_dotted
    from .params import SHARED, private_group
    from .strategies import Kind, TuningStrategy, build_strategy
    from .trainer import TrainConfig, preset, train

    corpora, _ = load_corpus(args.corpus, args.languages)
    tok = Tokenizer.load(args.tokenizer)
    base = _load_base(args, tok)
    fields = {}
    if args.config:
        fields.update(json.loads(Path(args.config).read_text()))
    for item in args.overrides:
        k, _, v = item.partition("=")
        try:
            _set_dotted(fields, k, json.loads(v))
        except json.JSONDecodeError:
            _set_dotted(fields, k, v)
    for key, val in (("learning_rate", args.lr), ("epochs", args.epochs), ("batch_size", args.batch_size),
                     ("seed", args.seed)):
        if val is not None:
            fields[key] = val
    kind = Kind(args.strategy)
    if args.preset:
        method, _, setting = args.preset.partition("/")
        cfg = preset(method, setting, **fields)
    else:
        cfg = TrainConfig.from_dict(fields)
    cfg = cfg.with_strategy(TuningStrategy(kind, adapter_dim=cfg.adapter_dim, prefix_len=cfg.prefix_len,
                                           prefix_inner=cfg.prefix_inner))
    langs = [c.lang for c in corpora]
    store = build_strategy(base, cfg.strategy, langs if cfg.strategy.peft_kind else [], seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(cfg, corpora, store, tok, log_path=out / "metrics.csv")
    if kind == Kind.PLF:
        for lang in langs:
            checkpoint.save(res.store_for(lang), out / f"{lang}.ckpt")
    else:
        final = res.store_for(langs[0])
        checkpoint.save(final, out / "model.ckpt", group=SHARED)
        for lang in langs:
            if final.names(private_group(lang)):
                checkpoint.save(final, out / f"{lang}.private.ckpt", group=private_group(lang))
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    print(f"trained {kind.value} on {langs}; best epochs {res.best_epoch} -> {out}")
    return 0


def _store_for(run: Path, lang: str):
    full = run / f"{lang}.ckpt"
    if full.exists():
        return checkpoint.load(full)
    store = checkpoint.load(run / "model.ckpt")
    priv = run / f"{lang}.private.ckpt"
    if priv.exists():
        store.merge(checkpoint.load(priv))
    return store


def cmd_generate(args) -> int:
    from .data.corpus import load_corpus
    from .data.tokenizer import Tokenizer
    from .experiments import generate, write_generations

    corpora, _ = load_corpus(args.corpus, args.languages)
    tok = Tokenizer.load(args.tokenizer)
    decode = {"beam_size": args.beam_size, "length_penalty": args.length_penalty, "max_len": args.max_len,
              "min_len": args.min_len}
    gens = []
    for c in corpora:
        store = checkpoint.load(args.checkpoint) if args.checkpoint else _store_for(Path(args.run), c.lang)
        gens += generate(store, c, tok, decode, args.max_src_len, split=args.split, limit=args.limit)
    write_generations(args.out, gens)
    print(f"{len(gens)} generations -> {args.out}")
    return 0


def cmd_score(args) -> int:
    from .experiments import score_files

    table = {}
    for item in args.policy:
        lang, _, pol = item.partition("=")
        table[lang] = pol
    rep = score_files(args.hypotheses, args.references, args.out, table or None)
    for lang, s in rep.rows():
        print(f"{lang:>16}  " + "  ".join(f"{k} {100 * v:6.2f}" for k, v in s.items()))
    return 0


def _cmd_exp(experiment: str):
    def run(args) -> int:
        from .experiments import RUNNERS, load_run_config

        cfg = load_run_config(args.config, args.overrides, experiment=experiment, output_dir=args.output_dir,
                              corpus=args.corpus, workers=args.workers)
        paths = RUNNERS[experiment](cfg)
        for name, p in paths.items():
            print(f"{name}: {p}")
        return 0
    return run


def cmd_report(args) -> int:
    from .experiments import report

    print(report(args.run_dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multitune", description=__doc__,
                                 formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("tokenizer-train", help="learn a byte-level BPE tokenizer", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="JSONL file or directory of per-language files")
    p.add_argument("--vocab-size", type=int, default=8192)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="tokenizer text file to write")
    p.set_defaults(func=cmd_tokenizer_train)

    p = sub.add_parser("train", help="train one tuning setting", formatter_class=fmt)
    p.add_argument("--corpus", required=True)
    p.add_argument("--languages", nargs="*", help="restrict to these languages")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--strategy", default="PLF", choices=["PLF", "MPE_adapter", "MPE_prefix", "MPF",
                                                          "MPS_adapter", "MPS_prefix"])
    p.add_argument("--base", help="backbone checkpoint (default: fresh init)")
    p.add_argument("--preset", help="hyper-parameter preset, e.g. adapter/few-shot")
    p.add_argument("--config", help="JSON file of train config fields")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="beam-search summaries as JSONL", formatter_class=fmt)
    p.add_argument("--corpus", required=True)
    p.add_argument("--languages", nargs="*")
    p.add_argument("--tokenizer", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", help="run directory from `train`")
    src.add_argument("--checkpoint", help="single full checkpoint")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int)
    p.add_argument("--beam-size", type=int, default=4)
    p.add_argument("--length-penalty", type=float, default=0.6)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-src-len", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="ROUGE report for hypotheses vs references", formatter_class=fmt)
    p.add_argument("hypotheses", help="JSONL with id, lang, hypothesis")
    p.add_argument("references", help="JSONL with id and summary")
    p.add_argument("--out", required=True, help="CSV report")
    p.add_argument("--policy", action="append", default=[], metavar="LANG=POLICY",
                   help="tokenization policy per language: whitespace or char")
    p.set_defaults(func=cmd_score)

    for name, exp, text in (("exp1", "exp1_scaling", "score vs training-set size"),
                            ("exp2", "exp2_transfer", "supervised transfer to held-out languages"),
                            ("exp3", "exp3_joint", "six multilingual settings")):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        _add_run_args(p, exp)
        p.set_defaults(func=_cmd_exp(exp))

    p = sub.add_parser("report", help="collect experiment tables into report.md", formatter_class=fmt)
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
