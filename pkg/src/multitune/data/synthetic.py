"""Templated multilingual document/summary generator for tests and desk-scale runs.

Every pseudo-language renders the same underlying events (entity, action,
object, place) through its own surface forms:

* ``suffix`` marks content words, so template-sharing languages overlap in
  almost every BPE token;
* ``script`` transliterates letters into Greek or Cyrillic, giving a language
  whose token inventory is disjoint from the Latin ones;
* ``style`` chooses the summary: ``lead`` copies the first sentence verbatim
  (a copy-prefix of the document), ``headline`` keeps only its content words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LanguageCorpus, Pair

_SYLLABLES = ["ka", "to", "mi", "ra", "lu", "ne", "so", "vi", "da", "pe", "zu", "or", "fa", "li", "mo", "te"]
_GREEK = dict(zip("abcdefghijklmnopqrstuvwxyz", "αβψδεφγηιξκλμνοπϙρστθωςχυζ"))
_CYRILLIC = dict(zip("abcdefghijklmnopqrstuvwxyz", "абцдефгхийклмнопярстужвьыз"))
_SCRIPTS = {"latin": None, "greek": _GREEK, "cyrillic": _CYRILLIC}


def _lexicon(n: int, rng: np.random.Generator, syllables: int) -> list[str]:
    words: set[str] = set()
    while len(words) < n:
        words.add("".join(rng.choice(_SYLLABLES, size=syllables)))
    return sorted(words)


_LEX_RNG = np.random.default_rng(20220)
ENTITIES = _lexicon(16, _LEX_RNG, 2)
ACTIONS = _lexicon(10, _LEX_RNG, 2)
OBJECTS = _lexicon(16, _LEX_RNG, 3)
PLACES = _lexicon(10, _LEX_RNG, 2)
PREPOSITIONS = ["at", "in", "near"]


@dataclass(frozen=True)
class PseudoLanguage:
    name: str
    n_train: int = 200
    n_dev: int = 20
    n_test: int = 20
    suffix: str = ""
    script: str = "latin"
    style: str = "lead"
    sentences: tuple[int, int] = (2, 4)

    def render(self, word: str, content: bool = True) -> str:
        w = word + self.suffix if content else word
        table = _SCRIPTS[self.script]
        return w if table is None else "".join(table.get(c, c) for c in w)


def _sentence(lang: PseudoLanguage, rng: np.random.Generator) -> tuple[str, str]:
    e, a, o, p = (rng.choice(ENTITIES), rng.choice(ACTIONS), rng.choice(OBJECTS), rng.choice(PLACES))
    prep = rng.choice(PREPOSITIONS)
    r = lang.render
    full = f"{r(e)} {r(a)} {r(o)} {r(prep, content=False)} {r(p)} ."
    headline = f"{r(e)} {r(a)} {r(o)}"
    return full, headline


def generate_language(lang: PseudoLanguage, seed: int = 0) -> LanguageCorpus:
    if lang.script not in _SCRIPTS:
        raise ValueError(f"unknown script {lang.script!r}")
    if lang.style not in ("lead", "headline"):
        raise ValueError(f"unknown style {lang.style!r}")
    rng = np.random.default_rng([seed] + [ord(c) for c in lang.name])
    total = lang.n_train + lang.n_dev + lang.n_test
    pairs = []
    seen: set[str] = set()
    while len(pairs) < total:
        k = int(rng.integers(lang.sentences[0], lang.sentences[1] + 1))
        sents = [_sentence(lang, rng) for _ in range(k)]
        text = " ".join(s for s, _ in sents)
        if text in seen:
            continue
        seen.add(text)
        summary = sents[0][0] if lang.style == "lead" else sents[0][1]
        pairs.append(Pair(f"{lang.name}-{len(pairs):05d}", text, summary))
    idx = list(range(total))
    splits = {"train": idx[:lang.n_train],
              "dev": idx[lang.n_train:lang.n_train + lang.n_dev],
              "test": idx[lang.n_train + lang.n_dev:]}
    return LanguageCorpus(lang.name, pairs, splits)


def make_synthetic_corpus(languages: list[PseudoLanguage], seed: int = 0) -> list[LanguageCorpus]:
    return [generate_language(l, seed) for l in languages]


DEFAULT_LANGUAGES = [
    PseudoLanguage("lat_hi", n_train=640, suffix=""),
    PseudoLanguage("lat_mid", n_train=150, suffix="n"),
    PseudoLanguage("lat_lo", n_train=20, suffix="s"),
    PseudoLanguage("grk", n_train=150, script="greek"),
]
