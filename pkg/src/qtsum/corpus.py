"""Review corpora: loading, saving and entity-level train/dev splits.

Input is JSONL with one review per line::

    {"entity_id": "h1", "review_id": "r1", "sentences": ["Great staff.", ...]}

Sentences are expected pre-split; whitespace runs collapse to one space and
empty sentences are dropped at load time.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


class CorpusError(ValueError):
    """Malformed or inconsistent review data."""


class SplitError(ValueError):
    pass


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


@dataclass(frozen=True)
class SentenceRecord:
    sentence_index: int
    text: str
    token_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReviewRecord:
    review_id: str
    sentences: tuple[SentenceRecord, ...]


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    reviews: tuple[ReviewRecord, ...]

    def sentences(self) -> list[SentenceRecord]:
        """All sentences of the entity in review order."""
        return [s for r in self.reviews for s in r.sentences]

    def texts(self) -> list[str]:
        return [s.text for s in self.sentences()]


@dataclass(frozen=True)
class ReviewCorpus:
    entities: tuple[EntityRecord, ...]
    domain_name: str = "hotels"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for e in self.entities:
            if e.entity_id in index:
                raise CorpusError(f"duplicate entity_id {e.entity_id!r}")
            index[e.entity_id] = e
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.entities)

    def __getitem__(self, entity_id: str) -> EntityRecord:
        return self._index[entity_id]

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._index

    @property
    def entity_ids(self) -> list[str]:
        return [e.entity_id for e in self.entities]

    def iter_sentences(self) -> Iterator[SentenceRecord]:
        for e in self.entities:
            for r in e.reviews:
                yield from r.sentences

    def texts(self) -> list[str]:
        return [s.text for s in self.iter_sentences()]

    def num_sentences(self) -> int:
        return sum(1 for _ in self.iter_sentences())

    def with_tokens(self, tokenizer) -> "ReviewCorpus":
        """Return a copy whose sentences carry token ids from ``tokenizer``.

        Sentences that tokenize to nothing are dropped.
        """
        entities = []
        for e in self.entities:
            reviews = []
            for r in e.reviews:
                sents = []
                for s in r.sentences:
                    ids = tokenizer.encode(s.text)
                    if ids:
                        sents.append(SentenceRecord(len(sents), s.text, tuple(ids)))
                reviews.append(ReviewRecord(r.review_id, tuple(sents)))
            entities.append(EntityRecord(e.entity_id, tuple(reviews)))
        return ReviewCorpus(tuple(entities), self.domain_name)


def _build(rows: Iterable[dict], domain_name: str) -> ReviewCorpus:
    entities: dict[str, list[ReviewRecord]] = {}
    seen: set[tuple[str, str]] = set()
    for lineno, row in rows:
        try:
            entity_id = str(row["entity_id"])
            review_id = str(row["review_id"])
            raw = row["sentences"]
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"line {lineno}: missing field {exc}") from None
        if not isinstance(raw, list):
            raise CorpusError(f"line {lineno}: 'sentences' must be a list")
        key = (entity_id, review_id)
        if key in seen:
            raise CorpusError(
                f"line {lineno}: duplicate review_id {review_id!r} for entity {entity_id!r}"
            )
        seen.add(key)
        texts = [normalize_whitespace(str(t)) for t in raw]
        texts = [t for t in texts if t]
        if not texts:
            logger.warning("line %d: review %s/%s has no sentences", lineno, entity_id, review_id)
        sents = tuple(SentenceRecord(i, t) for i, t in enumerate(texts))
        entities.setdefault(entity_id, []).append(ReviewRecord(review_id, sents))
    return ReviewCorpus(
        tuple(EntityRecord(eid, tuple(revs)) for eid, revs in entities.items()),
        domain_name,
    )


def load_reviews(path: str | Path, format: str = "jsonl", domain_name: str = "hotels") -> ReviewCorpus:
    """Load a JSONL review file, preserving input order."""
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)

    def rows():
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None

    return _build(rows(), domain_name)


def corpus_from_records(records: Iterable[dict], domain_name: str = "hotels") -> ReviewCorpus:
    return _build(enumerate(records, 1), domain_name)


def save_reviews(corpus: ReviewCorpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for e in corpus.entities:
            for r in e.reviews:
                row = {
                    "entity_id": e.entity_id,
                    "review_id": r.review_id,
                    "sentences": [s.text for s in r.sentences],
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def split_corpus(corpus: ReviewCorpus, dev_fraction: float, seed: int) -> tuple[ReviewCorpus, ReviewCorpus]:
    """Split by entity into (train, dev).

    The dev side gets ``round(dev_fraction * n)`` entities, clamped so both
    sides are non-empty. Entity order within each side follows the input.
    """
    if not 0 < dev_fraction < 1:
        raise SplitError("dev_fraction must be in (0, 1)")
    n = len(corpus)
    if n < 2:
        raise SplitError(f"need at least 2 entities to split, got {n}")
    n_dev = min(max(int(round(dev_fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    dev_idx = set(perm[:n_dev].tolist())
    train = tuple(e for i, e in enumerate(corpus.entities) if i not in dev_idx)
    dev = tuple(e for i, e in enumerate(corpus.entities) if i in dev_idx)
    return ReviewCorpus(train, corpus.domain_name), ReviewCorpus(dev, corpus.domain_name)
