"""Popularity-driven sentence ranking and budgeted summary assembly."""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quantizer import (
    AssignmentTable,
    Codebook,
    exact_squared_distances,
    hard_assign,
    inverse_cdf_sample,
    make_rng,
    softmax_neg,
)

METHODS = ("nearest", "two_step")


@dataclass
class ExtractionConfig:
    method: str = "two_step"
    cluster_samples: int = 300
    sentences_per_cluster: int = 30
    word_budget: int = 100
    redundancy_threshold: float = 0.6
    seed: int = 0

    def validate(self) -> "ExtractionConfig":
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.cluster_samples < 1 or self.sentences_per_cluster < 1:
            raise ValueError("cluster_samples and sentences_per_cluster must be >= 1")
        if not 0 <= self.redundancy_threshold <= 1:
            raise ValueError("redundancy_threshold must lie in [0, 1]")
        return self


@dataclass
class SentenceRanking:
    """Per-sentence scores and the resulting order (best first).

    For two-step sampling ``scores`` are vote counts; for the nearest
    method they are the size of the largest cluster a sentence is coupled to.
    """

    scores: np.ndarray
    order: np.ndarray
    method: str
    total_votes: int = 0

    @property
    def ranked(self) -> list[int]:
        return self.order.tolist()


@dataclass
class Summary:
    entity_id: str
    sentence_ids: list[int]
    sentences: list[str]
    word_count: int
    scope: str = "general"
    method: str = "two_step"
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "scope": self.scope,
            "sentences": self.sentences,
            "word_count": self.word_count,
            "method": self.method,
            "seed": self.seed,
        }

    @property
    def text(self) -> str:
        return " ".join(self.sentences)


def entity_rng(seed: int, entity_id: str) -> np.random.Generator:
    """Independent stream per (seed, entity)."""
    return make_rng(seed, zlib.crc32(entity_id.encode("utf-8")))


def sentence_code_distances(encodings: np.ndarray, cb: Codebook,
                            codes: Sequence[int] | None = None) -> np.ndarray:
    """(N, K') matrix of min_h ||x_ih - e_k||^2 over the requested codes."""
    enc = np.asarray(encodings)
    n, h, d = enc.shape
    e = cb.embeddings if codes is None else cb.embeddings[np.asarray(codes, dtype=np.int64)]
    d2 = exact_squared_distances(enc.reshape(n * h, d), e).reshape(n, h, -1)
    return d2.min(axis=1)


def rank_nearest(table: AssignmentTable, encodings: np.ndarray, cb: Codebook) -> SentenceRanking:
    """Couple each populated code with its nearest sentence and rank by cluster size.

    A sentence coupled to several codes is scored by its largest cluster.
    Sentences coupled to no populated code follow, ordered by index.
    """
    n = table.num_sentences
    if n == 0:
        raise ValueError("entity has no sentences")
    pop = table.popularity
    live = np.flatnonzero(pop > 0)
    dist = sentence_code_distances(encodings, cb, live)
    nearest = dist.argmin(axis=0)
    scores = np.zeros(n, dtype=np.int64)
    np.maximum.at(scores, nearest, pop[live])
    order = np.lexsort((np.arange(n), -scores))
    return SentenceRanking(scores, order, "nearest")


def two_step_distribution(table: AssignmentTable, encodings: np.ndarray, cb: Codebook,
                          codes: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cluster and sentence probabilities of one two-step draw.

    Returns ``(codes, p_code, p_sent)`` where ``p_code[j]`` is the chance of
    sampling ``codes[j]`` and ``p_sent[j]`` the sentence distribution given
    that code. Restricting to ``codes`` renormalises popularity over them;
    if none of them is populated they are sampled uniformly.
    """
    if codes is None:
        codes = np.flatnonzero(table.popularity > 0)
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        raise ValueError("no codes to sample from")
    counts = table.popularity[codes].astype(np.float64)
    p_code = counts / counts.sum() if counts.sum() > 0 else np.full(codes.size, 1.0 / codes.size)
    dist = sentence_code_distances(encodings, cb, codes)
    p_sent = softmax_neg(dist.T, axis=-1)
    return codes, p_code, p_sent


def expected_votes(table: AssignmentTable, encodings: np.ndarray, cb: Codebook,
                   codes: Sequence[int] | None = None) -> np.ndarray:
    """Probability that a single sentence vote lands on each sentence."""
    _, p_code, p_sent = two_step_distribution(table, encodings, cb, codes)
    return p_code @ p_sent


def rank_two_step(table: AssignmentTable, encodings: np.ndarray, cb: Codebook,
                  cfg: ExtractionConfig, rng: np.random.Generator | None = None,
                  codes: Sequence[int] | None = None) -> SentenceRanking:
    """Rank sentences by votes from repeated cluster-then-sentence sampling.

    Codes are drawn with replacement in proportion to their popularity,
    then ``sentences_per_cluster`` sentences per code with probability
    softmax(-min_h ||x_ih - e_z||^2). Ties in votes go to the smaller mean
    distance to the drawn codes, then to the lower sentence index.
    """
    if table.num_sentences == 0:
        raise ValueError("entity has no sentences")
    rng = rng if rng is not None else make_rng(cfg.seed)
    codes, p_code, p_sent = two_step_distribution(table, encodings, cb, codes)
    n = table.num_sentences
    drawn = inverse_cdf_sample(p_code, rng.random(cfg.cluster_samples))
    u = rng.random((cfg.cluster_samples, cfg.sentences_per_cluster))
    votes = np.zeros(n, dtype=np.int64)
    for j in np.unique(drawn):
        rows = drawn == j
        picks = inverse_cdf_sample(p_sent[j], u[rows].ravel())
        votes += np.bincount(picks, minlength=n)
    code_hits = np.bincount(drawn, minlength=codes.size)
    dist = sentence_code_distances(encodings, cb, codes)
    mean_dist = dist @ code_hits / cfg.cluster_samples
    order = np.lexsort((np.arange(n), mean_dist, -votes))
    return SentenceRanking(votes, order, "two_step", int(votes.sum()))


_WORD = re.compile(r"[\w']+")


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def build_summary(ranking: SentenceRanking, sentences: Sequence[str], cfg: ExtractionConfig,
                  entity_id: str = "", scope: str = "general") -> Summary:
    """Greedy whole-sentence selection in rank order.

    A candidate is skipped when the share of its unigram types already in
    the summary exceeds ``redundancy_threshold``. Selection stops at the
    first candidate that would push the word count past the budget, once at
    least one sentence has been taken.
    """
    chosen: list[int] = []
    seen_types: set[str] = set()
    total = 0
    for i in ranking.order:
        toks = words(sentences[i])
        types = set(toks)
        if chosen and types:
            overlap = len(types & seen_types) / len(types)
            if overlap > cfg.redundancy_threshold:
                continue
        if chosen and total + len(toks) > cfg.word_budget:
            break
        chosen.append(int(i))
        seen_types |= types
        total += len(toks)
    return Summary(entity_id, chosen, [sentences[i] for i in chosen], total, scope,
                   ranking.method, cfg.seed)


def summarize_entity(entity_id: str, sentences: Sequence[str], encodings: np.ndarray,
                     cb: Codebook, cfg: ExtractionConfig) -> Summary:
    """General summary of one entity from precomputed (N, H, D) encodings."""
    cfg.validate()
    if len(sentences) == 0:
        raise ValueError(f"entity {entity_id!r} has no sentences")
    table = hard_assign(cb, encodings)
    if cfg.method == "nearest":
        ranking = rank_nearest(table, encodings, cb)
    else:
        ranking = rank_two_step(table, encodings, cb, cfg, entity_rng(cfg.seed, entity_id))
    return build_summary(ranking, sentences, cfg, entity_id, "general")
