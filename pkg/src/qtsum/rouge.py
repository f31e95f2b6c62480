"""ROUGE-1/2/L F-scores with max-over-references aggregation.

Texts are lowercased, punctuation is replaced by spaces, and tokens are
split on whitespace. There is no stemming or stopword removal, so absolute
numbers are not comparable with toolkits that stem.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)

_PUNCT = re.compile(r"[^\w\s]|_")
METRICS = ("rouge1", "rouge2", "rougeL")


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: int, n_sys: int, n_ref: int) -> "RougeScore":
        p = overlap / n_sys if n_sys else 0.0
        r = overlap / n_ref if n_ref else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(system: str, reference: str, n: int = 1) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = ngrams(tokenize(reference), n)
    if not ref:
        logger.warning("empty reference for ROUGE-%d; scoring 0", n)
        return RougeScore(0.0, 0.0, 0.0)
    sys_ = ngrams(tokenize(system), n)
    overlap = sum((sys_ & ref).values())
    return RougeScore.from_counts(overlap, sum(sys_.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(system: str, reference: str) -> RougeScore:
    ref = tokenize(reference)
    if not ref:
        logger.warning("empty reference for ROUGE-L; scoring 0")
        return RougeScore(0.0, 0.0, 0.0)
    sys_ = tokenize(system)
    return RougeScore.from_counts(lcs_length(sys_, ref), len(sys_), len(ref))


def score_all(system: str, reference: str) -> dict[str, RougeScore]:
    return {
        "rouge1": rouge_n(system, reference, 1),
        "rouge2": rouge_n(system, reference, 2),
        "rougeL": rouge_l(system, reference),
    }


def score_multi(system: str, references: Sequence[str]) -> dict[str, float]:
    """Best F1 per metric over the references."""
    if not references:
        raise ValueError("at least one reference is required")
    best = dict.fromkeys(METRICS, 0.0)
    for ref in references:
        for name, s in score_all(system, ref).items():
            best[name] = max(best[name], s.f1)
    return best


@dataclass
class EvalReport:
    per_entity: dict[str, dict[str, float]]
    corpus: dict[str, float]
    skipped: list[str]

    def to_json(self) -> dict:
        return {"corpus": self.corpus, "per_entity": self.per_entity, "skipped": self.skipped}

    def table(self) -> str:
        lines = [f"{'entity':<24}{'R1':>8}{'R2':>8}{'RL':>8}"]
        for eid, s in self.per_entity.items():
            lines.append(f"{eid:<24}" + "".join(f"{100 * s[m]:>8.2f}" for m in METRICS))
        lines.append(f"{'MEAN':<24}" + "".join(f"{100 * self.corpus[m]:>8.2f}" for m in METRICS))
        return "\n".join(lines)


def evaluate_corpus(summaries: Mapping[str, str], references: Mapping[str, Sequence[str]]) -> EvalReport:
    """Per-entity max-over-references F1, averaged over entities.

    ``summaries`` maps a key (usually entity id, or entity id and scope) to
    system text; keys lacking references are skipped and listed.
    """
    per_entity: dict[str, dict[str, float]] = {}
    skipped = []
    for key in sorted(summaries):
        refs = references.get(key)
        if not refs:
            skipped.append(key)
            continue
        per_entity[key] = score_multi(summaries[key], refs)
    if skipped:
        logger.warning("no references for %d entities: %s", len(skipped), ", ".join(skipped))
    if per_entity:
        corpus = {m: sum(s[m] for s in per_entity.values()) / len(per_entity) for m in METRICS}
    else:
        corpus = dict.fromkeys(METRICS, 0.0)
    return EvalReport(per_entity, corpus, skipped)
