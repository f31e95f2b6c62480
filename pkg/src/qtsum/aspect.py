"""Aspect-specific summaries from a trained model and a few query terms.

Codes are labelled with aspects using term frequencies over a held-out set
of sentences; the head whose codes are most aspect-certain (lowest mean
entropy) defines the aspect sub-space, and extraction for an aspect is
restricted to that sub-space's codes labelled with it.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .extraction import (
    ExtractionConfig,
    Summary,
    build_summary,
    entity_rng,
    rank_nearest,
    rank_two_step,
)
from .quantizer import AssignmentTable, Codebook, hard_assign

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+")
ASPECT_BUDGET = 75


class AspectError(ValueError):
    pass


class NoAspectSignal(AspectError):
    pass


@dataclass(frozen=True)
class AspectSpec:
    name: str
    query_terms: tuple[str, ...]

    def __post_init__(self):
        terms = tuple(self.query_terms)
        if len(terms) != 5:
            raise AspectError(f"aspect {self.name!r} needs exactly 5 query terms, got {len(terms)}")
        for t in terms:
            if t != t.lower() or not re.fullmatch(r"\w+", t):
                raise AspectError(f"query term {t!r} must be a lowercase single token")
        if len(set(terms)) != 5:
            raise AspectError(f"aspect {self.name!r} has repeated query terms")
        object.__setattr__(self, "query_terms", terms)


def validate_aspects(aspects: Sequence[AspectSpec]) -> list[AspectSpec]:
    aspects = list(aspects)
    seen: dict[str, str] = {}
    names = set()
    for a in aspects:
        if a.name in names:
            raise AspectError(f"duplicate aspect {a.name!r}")
        names.add(a.name)
        for t in a.query_terms:
            if t in seen:
                raise AspectError(f"term {t!r} used by both {seen[t]!r} and {a.name!r}")
            seen[t] = a.name
    return aspects


def load_aspect_config(path: str | Path) -> list[AspectSpec]:
    """Read ``{"aspects": [{"name": ..., "terms": [...]}, ...]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return validate_aspects(AspectSpec(a["name"], tuple(a["terms"])) for a in data["aspects"])


def default_aspects() -> list[AspectSpec]:
    """Hotel aspects shipped with the package (placeholder terms; review before use)."""
    return load_aspect_config(Path(__file__).with_name("data") / "hotel_aspects.json")


def query_term_counts(text: str, aspects: Sequence[AspectSpec], mode: str = "token") -> np.ndarray:
    """Hits of each aspect's query terms in one sentence.

    ``mode="token"`` counts every occurrence; ``mode="sentence"`` counts
    each aspect at most once per sentence.
    """
    toks = _TOKEN.findall(text.lower())
    counts = np.array([sum(t in a.query_terms for t in toks) for a in aspects], dtype=np.float64)
    if mode == "sentence":
        counts = (counts > 0).astype(np.float64)
    elif mode != "token":
        raise ValueError("mode must be 'token' or 'sentence'")
    return counts


def code_term_frequencies(table: AssignmentTable, texts: Sequence[str],
                          aspects: Sequence[AspectSpec], mode: str = "token") -> np.ndarray:
    """(K, A) matrix of query-term hits in sentences assigned to each code.

    A sentence contributes once to every distinct code any of its heads maps to.
    """
    if len(texts) != table.num_sentences:
        raise ValueError("texts and assignment table disagree on sentence count")
    k = table.popularity.shape[0]
    tf = np.zeros((k, len(aspects)))
    for i, text in enumerate(texts):
        hits = query_term_counts(text, aspects, mode)
        if hits.any():
            for code in np.unique(table.codes[i]):
                tf[code] += hits
    return tf


def compute_code_aspect_probs(table: AssignmentTable, texts: Sequence[str],
                              aspects: Sequence[AspectSpec], mode: str = "token") -> np.ndarray:
    """Per-code aspect distribution tf(Q_a, k) / sum_a' tf(Q_a', k).

    Rows of codes without any query hit are NaN.
    """
    tf = code_term_frequencies(table, texts, aspects, mode)
    if tf.sum() == 0:
        raise NoAspectSignal("no query term occurs in the held-out sentences")
    for j in np.flatnonzero(tf.sum(0) == 0):
        logger.warning("aspect %r has no query hits in the held-out set", aspects[j].name)
    totals = tf.sum(1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = tf / totals
    probs[totals[:, 0] == 0] = np.nan
    return probs


def aspect_entropy(p) -> float:
    """Natural-log entropy with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class AspectCodeMap:
    aspect_names: list[str]
    code_probs: np.ndarray
    code_head: np.ndarray
    code_entropy: np.ndarray
    per_head_mean_entropy: np.ndarray
    aspect_head: int
    code_aspect: dict[int, str] = field(default_factory=dict)
    purity: float = 1.0

    def codes_for(self, aspect: str) -> list[int]:
        if aspect not in self.aspect_names:
            raise AspectError(f"unknown aspect {aspect!r}; valid: {', '.join(self.aspect_names)}")
        return sorted(k for k, a in self.code_aspect.items() if a == aspect)

    def to_json(self) -> dict:
        rows = []
        for k in range(self.code_probs.shape[0]):
            defined = not np.isnan(self.code_probs[k]).any()
            rows.append({
                "code": k,
                "head": int(self.code_head[k]),
                "probs": dict(zip(self.aspect_names, self.code_probs[k].tolist())) if defined else None,
                "entropy": float(self.code_entropy[k]) if defined else None,
                "aspect": self.code_aspect.get(k),
            })
        return {
            "aspects": self.aspect_names,
            "aspect_head": self.aspect_head,
            "per_head_mean_entropy": [None if np.isnan(v) else float(v) for v in self.per_head_mean_entropy],
            "head_purity": self.purity,
            "codes": rows,
        }


def select_aspect_head(per_head_mean_entropy: Sequence[float] | AspectCodeMap) -> int:
    """Head with the lowest mean aspect entropy; ties go to the lower index.

    Heads without any defined code (NaN) are skipped with a warning.
    """
    if isinstance(per_head_mean_entropy, AspectCodeMap):
        per_head_mean_entropy = per_head_mean_entropy.per_head_mean_entropy
    vals = np.asarray(per_head_mean_entropy, dtype=np.float64)
    missing = np.flatnonzero(np.isnan(vals))
    for h in missing:
        logger.warning("head %d has no codes with query hits; excluded", h)
    if missing.size == vals.size:
        raise NoAspectSignal("no head has codes with query hits")
    return int(np.nanargmin(vals))


def mean_entropy_per_head(code_probs: np.ndarray, code_head: np.ndarray, num_heads: int) -> tuple[np.ndarray, np.ndarray]:
    ent = np.full(code_probs.shape[0], np.nan)
    for k in range(code_probs.shape[0]):
        if not np.isnan(code_probs[k]).any():
            ent[k] = aspect_entropy(code_probs[k])
    means = np.full(num_heads, np.nan)
    for h in range(num_heads):
        vals = ent[(code_head == h) & ~np.isnan(ent)]
        if vals.size:
            means[h] = vals.mean()
    return ent, means


def build_aspect_code_map(table: AssignmentTable, texts: Sequence[str],
                          aspects: Sequence[AspectSpec], mode: str = "token") -> AspectCodeMap:
    """Label the aspect head's codes from a held-out assignment table.

    Each code belongs to the head that sends it most assignments; the
    ``purity`` field reports how exclusive that ownership is.
    """
    aspects = validate_aspects(aspects)
    probs = compute_code_aspect_probs(table, texts, aspects, mode)
    usage = table.head_usage()
    total = usage.sum()
    code_head = np.where(usage.sum(1) > 0, usage.argmax(1), -1)
    purity = float(usage.max(1).sum() / total) if total else 1.0
    ent, means = mean_entropy_per_head(probs, code_head, table.num_heads)
    h_asp = select_aspect_head(means)
    code_aspect = {}
    for k in np.flatnonzero(code_head == h_asp):
        if not np.isnan(probs[k]).any():
            code_aspect[int(k)] = aspects[int(np.argmax(probs[k]))].name
    return AspectCodeMap([a.name for a in aspects], probs, code_head, ent, means, h_asp,
                         code_aspect, purity)


def aspect_summarize(encodings: np.ndarray, cb: Codebook, sentences: Sequence[str],
                     amap: AspectCodeMap, aspect: str, cfg: ExtractionConfig,
                     entity_id: str = "") -> Summary:
    """Summary of one entity restricted to the codes labelled ``aspect``.

    ``cfg.word_budget`` is used as given; pass 75 for the usual aspect budget.
    """
    cfg.validate()
    codes = amap.codes_for(aspect)
    if not codes:
        raise NoAspectSignal(f"no aspect signal: no codes are labelled {aspect!r}")
    if len(sentences) == 0:
        raise ValueError(f"entity {entity_id!r} has no sentences")
    table = hard_assign(cb, encodings)
    if cfg.method == "nearest":
        restricted = AssignmentTable(table.codes, table.sq_dists, _mask_popularity(table.popularity, codes))
        if restricted.popularity.sum() == 0:
            restricted.popularity[codes] = 1
        ranking = rank_nearest(restricted, encodings, cb)
    else:
        ranking = rank_two_step(table, encodings, cb, cfg, entity_rng(cfg.seed, entity_id), codes=codes)
    return build_summary(ranking, sentences, cfg, entity_id, f"aspect({aspect})")


def _mask_popularity(pop: np.ndarray, codes: Sequence[int]) -> np.ndarray:
    out = np.zeros_like(pop)
    out[codes] = pop[codes]
    return out
