"""ROUGE-1/2/L with per-language tokenization policies and corpus aggregation."""

from __future__ import annotations

import csv
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .kernels import lcs_length

log = logging.getLogger(__name__)

VARIANTS = ("R1", "R2", "RL")

# languages whose scripts do not separate words with spaces
CHAR_POLICY_LANGS = frozenset({
    "chinese", "chinese_simplified", "chinese_traditional", "japanese", "thai", "burmese",
    "zh", "zh-cn", "zh-tw", "ja", "th", "my",
})


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_cand: int, n_ref: int) -> "RougeScore":
        p = overlap / n_cand if n_cand else 0.0
        r = overlap / n_ref if n_ref else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def policy_for(lang: str | None, table: dict[str, str] | None = None) -> str:
    if table and lang in table:
        return table[lang]
    return "char" if lang is not None and lang.lower() in CHAR_POLICY_LANGS else "whitespace"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def eval_tokenize(text: str, lang_policy: str = "whitespace") -> list[str]:
    if lang_policy == "char":
        return [c for c in text if not c.isspace() and not _is_punct(c)]
    if lang_policy != "whitespace":
        raise ValueError(f"unknown tokenization policy {lang_policy!r}")
    cleaned = "".join(" " if _is_punct(c) else c for c in text.lower())
    return cleaned.split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = ngrams(cand, n), ngrams(ref, n)
    overlap = sum(min(v, r[k]) for k, v in c.items() if k in r)
    return RougeScore.from_counts(overlap, sum(c.values()), sum(r.values()))


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> RougeScore:
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    ids: dict[str, int] = {}
    a = [ids.setdefault(t, len(ids)) for t in cand]
    b = [ids.setdefault(t, len(ids)) for t in ref]
    return RougeScore.from_counts(lcs_length(a, b), len(cand), len(ref))


def score_pair(hyp: str, ref: str, policy: str = "whitespace") -> dict[str, RougeScore]:
    c, r = eval_tokenize(hyp, policy), eval_tokenize(ref, policy)
    return {"R1": rouge_n(c, r, 1), "R2": rouge_n(c, r, 2), "RL": rouge_l(c, r)}


@dataclass
class CorpusReport:
    """Per-language mean F1 (0-1 scale) plus the unweighted mean over languages."""

    per_lang: dict[str, dict[str, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def average(self) -> dict[str, float]:
        if not self.per_lang:
            return {v: 0.0 for v in VARIANTS}
        return {v: sum(s[v] for s in self.per_lang.values()) / len(self.per_lang) for v in VARIANTS}

    def rows(self) -> list[tuple[str, dict[str, float]]]:
        return [(l, self.per_lang[l]) for l in sorted(self.per_lang)] + [("average", self.average)]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["language", "n", *VARIANTS])
            for lang, s in self.rows():
                n = self.counts.get(lang, sum(self.counts.values()))
                w.writerow([lang, n, *(f"{100 * s[v]:.2f}" for v in VARIANTS)])
        return path


def corpus_report(pairs: Iterable[tuple[str, str, str]], policy_table: dict[str, str] | None = None,
                  languages: Iterable[str] | None = None) -> CorpusReport:
    """Aggregate ``(hypothesis, reference, lang)`` triples into a :class:`CorpusReport`."""
    sums: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for hyp, ref, lang in pairs:
        s = score_pair(hyp, ref, policy_for(lang, policy_table))
        acc = sums.setdefault(lang, {v: 0.0 for v in VARIANTS})
        for v in VARIANTS:
            acc[v] += s[v].f1
        counts[lang] = counts.get(lang, 0) + 1
    report = CorpusReport()
    for lang in languages or []:
        if lang not in counts:
            log.warning("language %s has no scored pairs; omitted from report", lang)
    for lang in sorted(sums):
        report.per_lang[lang] = {v: sums[lang][v] / counts[lang] for v in VARIANTS}
        report.counts[lang] = counts[lang]
    return report


def settings_table(reports: dict[str, CorpusReport], path) -> Path:
    """Write a languages x settings grid with ``R1/R2/RL`` cells (0-100 scale)."""
    settings = list(reports)
    langs = sorted({l for r in reports.values() for l in r.per_lang})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["language", *settings])
        for lang in langs + ["average"]:
            row = [lang]
            for s in settings:
                rep = reports[s]
                vals = rep.average if lang == "average" else rep.per_lang.get(lang)
                row.append("" if vals is None else "/".join(f"{100 * vals[v]:.2f}" for v in VARIANTS))
            w.writerow(row)
    return path
