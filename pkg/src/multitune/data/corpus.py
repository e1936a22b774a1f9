"""Language-tagged document/summary corpora in the XL-Sum JSONL layout."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorpusError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
# XL-Sum ships <lang>_train.jsonl / <lang>_val.jsonl / <lang>_test.jsonl
_SPLIT_ALIASES = {"train": "train", "val": "dev", "valid": "dev", "dev": "dev", "test": "test"}

FEWSHOT_LADDER = (5, 10, 20, 50, 100, 200, 500, 3000, 6000, 10000, 20000, 30000, 100000, 300000)
FEWSHOT_MAX = 500


@dataclass(frozen=True)
class Pair:
    doc_id: str
    text: str
    summary: str


@dataclass
class LanguageCorpus:
    lang: str
    pairs: list[Pair]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        seen: dict[str, int] = {}
        for p in self.pairs:
            if p.doc_id in seen:
                raise CorpusError(f"{self.lang}: duplicate doc_id {p.doc_id!r}")
            seen[p.doc_id] = 1
        used: set[int] = set()
        for name, idx in self.splits.items():
            if used.intersection(idx):
                raise CorpusError(f"{self.lang}: split {name!r} overlaps another split")
            used.update(idx)

    def __len__(self) -> int:
        return len(self.pairs)

    def split(self, name: str) -> list[Pair]:
        return [self.pairs[i] for i in self.splits.get(name, [])]

    def subset(self, train_idx, dev_idx, test_idx=None) -> "LanguageCorpus":
        splits = {"train": list(train_idx), "dev": list(dev_idx),
                  "test": list(self.splits.get("test", []) if test_idx is None else test_idx)}
        return LanguageCorpus(self.lang, self.pairs, splits)


@dataclass
class LoadReport:
    records: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    @property
    def total_skipped(self) -> int:
        return sum(self.skipped.values())


def _read_jsonl(path: Path, lang: str, report: LoadReport) -> list[Pair]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read corpus file {path}: {exc}") from exc
    out = []
    for ln in lines:
        if not ln.strip():
            continue
        try:
            rec = json.loads(ln)
            doc_id, text, summary = rec["id"], rec["text"], rec["summary"]
        except (json.JSONDecodeError, KeyError, TypeError):
            report.skipped[lang] = report.skipped.get(lang, 0) + 1
            continue
        if not (isinstance(text, str) and isinstance(summary, str) and text.strip() and summary.strip()):
            report.skipped[lang] = report.skipped.get(lang, 0) + 1
            continue
        out.append(Pair(str(doc_id), text, summary))
    return out


def _stem_split(stem: str) -> tuple[str, str | None]:
    lang, _, tail = stem.rpartition("_")
    if lang and tail in _SPLIT_ALIASES:
        return lang, _SPLIT_ALIASES[tail]
    return stem, None


def default_splits(n: int, seed: int = 0, dev_frac: float = 0.1, test_frac: float = 0.1) -> dict[str, list[int]]:
    """Deterministic train/dev/test partition of ``n`` canonically ordered pairs."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_frac))) if n >= 3 else 0
    n_dev = max(1, int(round(n * dev_frac))) if n >= 3 else 0
    return {"test": sorted(perm[:n_test].tolist()),
            "dev": sorted(perm[n_test:n_test + n_dev].tolist()),
            "train": sorted(perm[n_test + n_dev:].tolist())}


def load_corpus(path, languages: list[str] | None = None, split_seed: int = 0) -> tuple[list[LanguageCorpus], LoadReport]:
    """Load ``<lang>.jsonl`` files, ``<lang>_<split>.jsonl`` files or ``<lang>/<split>.jsonl`` dirs.

    Pairs are sorted by ``doc_id`` so the result is independent of file order.
    Single-file languages get a seeded 80/10/10 split.
    """
    root = Path(path)
    report = LoadReport()
    by_lang: dict[str, dict[str | None, list[Pair]]] = {}
    if root.is_file():
        files = [(root, *_stem_split(root.stem))]
    elif root.is_dir():
        files = []
        for p in sorted(root.iterdir()):
            if p.is_dir():
                for q in sorted(p.glob("*.jsonl")):
                    files.append((q, p.name, _SPLIT_ALIASES.get(q.stem)))
            elif p.suffix == ".jsonl":
                files.append((p, *_stem_split(p.stem)))
    else:
        raise OSError(f"corpus path does not exist: {root}")
    for f, lang, split in files:
        if languages is not None and lang not in languages:
            continue
        by_lang.setdefault(lang, {}).setdefault(split, []).extend(_read_jsonl(f, lang, report))
    if languages is not None:
        missing = [l for l in languages if l not in by_lang]
        if missing:
            raise CorpusError(f"no corpus files for declared languages {missing}")
    out = []
    for lang in sorted(by_lang):
        parts = by_lang[lang]
        if None in parts and len(parts) > 1:
            raise CorpusError(f"{lang}: mixes split files with an unsplit file")
        if None in parts:
            pairs = sorted(parts[None], key=lambda p: p.doc_id)
            splits = default_splits(len(pairs), split_seed)
        else:
            pairs, splits = [], {}
            for name in SPLITS:
                chunk = sorted(parts.get(name, []), key=lambda p: p.doc_id)
                splits[name] = list(range(len(pairs), len(pairs) + len(chunk)))
                pairs.extend(chunk)
        if not pairs:
            raise CorpusError(f"{lang}: zero valid records")
        report.records[lang] = len(pairs)
        out.append(LanguageCorpus(lang, pairs, splits))
    for lang, n in report.skipped.items():
        log.warning("%s: skipped %d malformed records", lang, n)
    return out, report


def write_jsonl(path, pairs: list[Pair]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"id": p.doc_id, "text": p.text, "summary": p.summary}, ensure_ascii=False) + "\n")
    return path


def save_corpus(root, corpora: list[LanguageCorpus]) -> Path:
    root = Path(root)
    for c in corpora:
        for name in SPLITS:
            write_jsonl(root / c.lang / f"{name}.jsonl", c.split(name))
    return root


# ---------------------------------------------------------------- sampling


def sampling_probs(train_counts: dict[str, int], alpha: float) -> dict[str, float]:
    """Smoothed language distribution ``p_i ∝ (n_i / N) ** alpha``."""
    if not train_counts:
        raise ValueError("sampling_probs needs at least one language")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if any(c <= 0 for c in train_counts.values()):
        raise ValueError("train counts must be positive")
    langs = sorted(train_counts)
    q = np.array([train_counts[l] for l in langs], dtype=np.float64)
    q /= q.sum()
    w = q ** alpha
    w /= w.sum()
    return dict(zip(langs, w.tolist()))


class LanguageSampler:
    """Seeded stream of ``(lang, example indices)`` batches: draw a language, then examples."""

    def __init__(self, train_counts: dict[str, int], alpha: float, seed: int = 0):
        self.probs = sampling_probs(train_counts, alpha)
        self.langs = list(self.probs)
        self._p = np.array([self.probs[l] for l in self.langs])
        self.counts = dict(train_counts)
        self.rng = np.random.default_rng(seed)

    def draw_language(self) -> str:
        return self.langs[int(self.rng.choice(len(self.langs), p=self._p))]

    def draw_batch(self, batch_size: int) -> tuple[str, np.ndarray]:
        lang = self.draw_language()
        n = self.counts[lang]
        idx = self.rng.choice(n, size=min(batch_size, n), replace=False)
        return lang, idx


# ---------------------------------------------------------------- few-shot subsets


def dev_size_for(size: int) -> int:
    return int(math.ceil(0.2 * size))


def is_fewshot(size: int) -> bool:
    return size <= FEWSHOT_MAX


def fewshot_subsample(corpus: LanguageCorpus, size: int, seed: int,
                      strict_ladder: bool = True) -> tuple[list[int], list[int]]:
    """Disjoint train/dev index sets (dev = ceil(20% of size)) drawn from the train pool.

    Depends only on ``(corpus, size, seed)`` so every tuning method sees the same split.
    """
    if strict_ladder and size not in FEWSHOT_LADDER:
        raise DataError(f"size {size} not in the supported ladder {FEWSHOT_LADDER}")
    pool = sorted(corpus.splits.get("train", []))
    n_dev = dev_size_for(size)
    if size + n_dev > len(pool):
        raise DataError(f"{corpus.lang}: need {size + n_dev} train-pool pairs for size {size}, have {len(pool)}")
    key = [seed, size] + [ord(c) for c in corpus.lang]
    rng = np.random.default_rng(key)
    pick = rng.choice(len(pool), size=size + n_dev, replace=False)
    train = sorted(pool[i] for i in pick[:size])
    dev = sorted(pool[i] for i in pick[size:])
    return train, dev
