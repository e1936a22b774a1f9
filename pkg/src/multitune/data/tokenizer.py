"""Byte-level BPE tokenizer."""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import ConfigError
from ..kernels import merge_pair

PAD_ID, EOS_ID, BOS_ID = 0, 1, 2
N_SPECIAL = 3
BASE_VOCAB = N_SPECIAL + 256
FORMAT_HEADER = "multitune-bpe v1"

_CHUNK = re.compile(r"\s*\S+|\s+")


def _chunks(text: str) -> list[bytes]:
    return [m.encode("utf-8") for m in _CHUNK.findall(text)]


class Tokenizer:
    def __init__(self, merges: list[tuple[int, int]]):
        self.merges = [(int(a), int(b)) for a, b in merges]
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.token_bytes: list[bytes] = [b""] * N_SPECIAL + [bytes([i]) for i in range(256)]
        for a, b in self.merges:
            self.token_bytes.append(self.token_bytes[a] + self.token_bytes[b])
        self._cache: dict[bytes, list[int]] = {}

    @property
    def vocab_size(self) -> int:
        return BASE_VOCAB + len(self.merges)

    def _encode_chunk(self, chunk: bytes) -> list[int]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        ids = [N_SPECIAL + x for x in chunk]
        while len(ids) > 1:
            best, best_rank = -1, len(self.merges)
            for i in range(len(ids) - 1):
                r = self.ranks.get((ids[i], ids[i + 1]), best_rank)
                if r < best_rank:
                    best, best_rank = i, r
            if best < 0:
                break
            a, b = self.merges[best_rank]
            new = BASE_VOCAB + best_rank
            out, i = [], 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == a and ids[i + 1] == b:
                    out.append(new)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        if len(self._cache) < 200_000:
            self._cache[chunk] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        out: list[int] = []
        for ch in _chunks(text):
            out.extend(self._encode_chunk(ch))
        return out

    def decode(self, ids: Iterable[int], errors: str = "strict") -> str:
        raw = b"".join(self.token_bytes[i] for i in ids if i >= N_SPECIAL)
        return raw.decode("utf-8", errors=errors)

    def save(self, path) -> Path:
        path = Path(path)
        lines = [FORMAT_HEADER, f"vocab_size {self.vocab_size}", f"merges {len(self.merges)}"]
        lines += [f"{a} {b}" for a, b in self.merges]
        lines.append("vocab")
        for i, tb in enumerate(self.token_bytes):
            lines.append(f"{i} {tb.hex() if tb else '-'}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != FORMAT_HEADER:
            raise ConfigError(f"{path}: not a tokenizer file")
        n = int(lines[2].split()[1])
        merges = [tuple(int(x) for x in ln.split()) for ln in lines[3:3 + n]]
        tok = cls(merges)
        if tok.vocab_size != int(lines[1].split()[1]):
            raise ConfigError(f"{path}: vocab size mismatch")
        return tok


def count_pairs(words: list[np.ndarray], freqs: np.ndarray) -> Counter:
    counts: Counter = Counter()
    for w, f in zip(words, freqs):
        if len(w) < 2:
            continue
        for pair in zip(w[:-1].tolist(), w[1:].tolist()):
            counts[pair] += int(f)
    return counts


def train_tokenizer(texts: Iterable[str], vocab_size: int = 8192, seed: int = 0,
                    min_frequency: int = 2, max_chunks: int | None = None) -> Tokenizer:
    """Learn BPE merges over byte sequences of whitespace-attached chunks.

    Ties in pair frequency go to the smallest ``(left, right)`` id pair. ``seed``
    only matters when ``max_chunks`` forces subsampling of distinct chunks.
    """
    if vocab_size < BASE_VOCAB:
        raise ConfigError(f"vocab_size must be >= {BASE_VOCAB} (bytes + specials), got {vocab_size}")
    freq: Counter = Counter()
    for t in texts:
        freq.update(_chunks(t))
    if not freq:
        raise ConfigError("cannot train a tokenizer on an empty corpus")
    items = sorted(freq.items())
    if max_chunks is not None and len(items) > max_chunks:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(items), size=max_chunks, replace=False))
        items = [items[i] for i in keep]
    words = [np.frombuffer(c, dtype=np.uint8).astype(np.int32) + N_SPECIAL for c, _ in items]
    freqs = np.array([f for _, f in items], dtype=np.int64)

    counts = count_pairs(words, freqs)
    where: dict[tuple[int, int], set[int]] = {}
    for k, w in enumerate(words):
        for p in zip(w[:-1].tolist(), w[1:].tolist()):
            where.setdefault(p, set()).add(k)
    merges: list[tuple[int, int]] = []
    while BASE_VOCAB + len(merges) < vocab_size and counts:
        best_n = max(counts.values())
        if best_n < min_frequency:
            break
        pair = min(p for p, n in counts.items() if n == best_n)
        new = BASE_VOCAB + len(merges)
        merges.append(pair)
        a, b = pair
        for k in sorted(where.pop(pair, ())):
            w = words[k]
            f = int(freqs[k])
            for p in zip(w[:-1].tolist(), w[1:].tolist()):
                counts[p] -= f
                if counts[p] <= 0:
                    del counts[p]
            w = merge_pair(w, a, b, new)
            words[k] = w
            for p in zip(w[:-1].tolist(), w[1:].tolist()):
                counts[p] += f
                where.setdefault(p, set()).add(k)
    return Tokenizer(merges)
