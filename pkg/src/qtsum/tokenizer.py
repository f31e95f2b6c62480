"""Byte-pair-encoding subword tokenizer.

Words are whitespace-delimited and marked with a leading ``▁`` so that
decoding restores spacing. Merges are learned greedily by pair frequency
(ties broken by the lexicographically smallest pair), which makes training
deterministic. Once the corpus runs out of pairs to merge, the remaining
vocabulary slots are filled with byte-fallback tokens ``<0x00>``..``<0xFF>``
so that characters unseen at training time still encode losslessly when the
full byte inventory fits in the vocabulary.

Anything with ``encode``, ``decode``, ``vocab_size`` and ``pad_id`` can stand
in for :class:`Tokenizer` elsewhere in the package.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple

from .corpus import normalize_whitespace

SNT, BOS, EOS, PAD, UNK = "[SNT]", "[BOS]", "[EOS]", "[PAD]", "[UNK]"
SPECIALS = (SNT, BOS, EOS, PAD, UNK)
SNT_ID, BOS_ID, EOS_ID, PAD_ID, UNK_ID = range(5)
WORD_MARK = "▁"
MIN_VOCAB_SIZE = 64
DEFAULT_MAX_LEN = 64


class ConfigError(ValueError):
    pass


class TokenizedText(NamedTuple):
    ids: list[int]
    truncated: bool
    empty: bool


def _byte_token(b: int) -> str:
    return f"<0x{b:02X}>"


def _word_symbols(word: str) -> list[str]:
    return [WORD_MARK] + list(word)


class Tokenizer:
    def __init__(self, vocab: dict[str, int], merges: list[tuple[str, str]],
                 max_sentence_len: int = DEFAULT_MAX_LEN):
        for i, s in enumerate(SPECIALS):
            if vocab.get(s) != i:
                raise ConfigError(f"special token {s} must have id {i}")
        self.vocab = dict(vocab)
        self.merges = [tuple(m) for m in merges]
        self.max_sentence_len = max_sentence_len
        self.id_to_token = {i: t for t, i in self.vocab.items()}
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        self._byte_ids = [self.vocab.get(_byte_token(b)) for b in range(256)]
        self._has_bytes = all(i is not None for i in self._byte_ids)
        self._cache: dict[str, list[int]] = {}

    pad_id = PAD_ID
    snt_id = SNT_ID
    bos_id = BOS_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _encode_word(self, word: str) -> list[int]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        while len(symbols) > 1:
            best = None
            for i in range(len(symbols) - 1):
                r = self._ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best is None or r < best[0]):
                    best = (r, i)
            if best is None:
                break
            i = best[1]
            symbols[i:i + 2] = [symbols[i] + symbols[i + 1]]
        ids = []
        for s in symbols:
            tid = self.vocab.get(s)
            if tid is not None:
                ids.append(tid)
                continue
            # unseen symbol: a word-initial char is split off its marker first
            for ch in ([WORD_MARK, s[1:]] if s.startswith(WORD_MARK) and len(s) > 1 else [s]):
                tid = self.vocab.get(ch)
                if tid is not None:
                    ids.append(tid)
                elif self._has_bytes:
                    ids.extend(self._byte_ids[b] for b in ch.encode("utf-8"))
                else:
                    ids.append(UNK_ID)
        if len(self._cache) < 100_000:
            self._cache[word] = ids
        return ids

    def encode_full(self, text: str) -> list[int]:
        """Encode without truncation."""
        ids: list[int] = []
        for word in normalize_whitespace(text).split(" "):
            if word:
                ids.extend(self._encode_word(word))
        return ids

    def encode(self, text: str) -> list[int]:
        return self.encode_full(text)[: self.max_sentence_len]

    def decode(self, ids: Iterable[int]) -> str:
        out: list[str] = []
        pending = bytearray()
        for i in ids:
            tok = self.id_to_token.get(int(i), UNK)
            if tok.startswith("<0x") and len(tok) == 6:
                pending.append(int(tok[3:5], 16))
                continue
            if pending:
                out.append(pending.decode("utf-8", errors="replace"))
                pending.clear()
            if tok in SPECIALS:
                if tok == UNK:
                    out.append(UNK)
                continue
            out.append(tok)
        if pending:
            out.append(pending.decode("utf-8", errors="replace"))
        return normalize_whitespace("".join(out).replace(WORD_MARK, " "))

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "merges": [list(m) for m in self.merges],
            "specials": {s: i for i, s in enumerate(SPECIALS)},
            "max_sentence_len": self.max_sentence_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tokenizer":
        return cls(d["vocab"], [tuple(m) for m in d["merges"]],
                   d.get("max_sentence_len", DEFAULT_MAX_LEN))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def tokenize(tok: Tokenizer, text: str) -> TokenizedText:
    ids = tok.encode_full(text)
    truncated = len(ids) > tok.max_sentence_len
    return TokenizedText(ids[: tok.max_sentence_len], truncated, not ids)


def train_bpe(texts: Iterable[str], vocab_size: int,
              max_sentence_len: int = DEFAULT_MAX_LEN) -> Tokenizer:
    """Learn a BPE vocabulary of exactly ``vocab_size`` entries."""
    if vocab_size < MIN_VOCAB_SIZE:
        raise ConfigError(f"vocab_size must be >= {MIN_VOCAB_SIZE}, got {vocab_size}")
    word_freq: Counter[str] = Counter()
    for t in texts:
        word_freq.update(w for w in normalize_whitespace(t).split(" ") if w)
    if not word_freq:
        raise ConfigError("cannot build a tokenizer from an empty corpus")

    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    seqs = [_word_symbols(w) for w in words]

    chars = sorted({s for seq in seqs for s in seq})
    vocab: dict[str, int] = {s: i for i, s in enumerate(SPECIALS)}
    if len(vocab) + len(chars) > vocab_size:
        raise ConfigError(
            f"vocab_size {vocab_size} cannot hold {len(chars)} base characters plus specials"
        )
    for c in chars:
        vocab[c] = len(vocab)

    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, seq in enumerate(seqs):
        for p in zip(seq, seq[1:]):
            pair_counts[p] += freqs[idx]
            where[p].add(idx)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size and heap:
        negc, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -negc or -negc <= 0:
            continue
        merged = pair[0] + pair[1]
        merges.append(pair)
        if merged not in vocab:
            vocab[merged] = len(vocab)
        touched: set[tuple[str, str]] = set()
        for idx in sorted(where.pop(pair, ())):
            seq, f = seqs[idx], freqs[idx]
            for p in zip(seq, seq[1:]):
                pair_counts[p] -= f
                touched.add(p)
            new, i = [], 0
            while i < len(seq):
                if i < len(seq) - 1 and seq[i] == pair[0] and seq[i + 1] == pair[1]:
                    new.append(merged)
                    i += 2
                else:
                    new.append(seq[i])
                    i += 1
            seqs[idx] = new
            for p in zip(new, new[1:]):
                pair_counts[p] += f
                where[p].add(idx)
                touched.add(p)
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_counts.pop(p, None)

    for b in range(256):
        if len(vocab) >= vocab_size:
            break
        vocab.setdefault(_byte_token(b), len(vocab))
    if len(vocab) < vocab_size:
        raise ConfigError(
            f"vocab_size {vocab_size} exceeds the attainable inventory of {len(vocab)} symbols"
        )
    return Tokenizer(vocab, merges, max_sentence_len)


def build_tokenizer(corpus, vocab_size: int, max_sentence_len: int = DEFAULT_MAX_LEN) -> Tokenizer:
    return train_bpe(corpus.texts(), vocab_size, max_sentence_len)
