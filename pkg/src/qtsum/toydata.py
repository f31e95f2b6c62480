"""Synthetic templated hotel reviews with known ground truth.

Every generated sentence voices one opinion (aspect, noun, polarity) through
a random template, and carries its aspect label plus an optional ``group``
tag for planted paraphrase sets. Records have the usual JSONL fields and an
extra ``labels`` list that the loader ignores.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# the first five nouns of each aspect double as its query terms
ASPECT_NOUNS = {
    "location": ["location", "area", "neighborhood", "station", "downtown",
                 "beach", "shops", "streets", "subway", "harbor"],
    "rooms": ["room", "bed", "bathroom", "shower", "view",
              "pillows", "balcony", "suite", "mattress", "closet"],
    "service": ["staff", "service", "reception", "concierge", "desk",
                "manager", "doorman", "housekeeping", "waiter", "porter"],
    "food": ["breakfast", "restaurant", "coffee", "dinner", "buffet",
             "pastries", "omelette", "menu", "wine", "juice"],
    "cleanliness": ["carpet", "towels", "sheets", "floor", "linen",
                    "tiles", "curtains", "bathtub", "mirror", "sink"],
    "building": ["lobby", "pool", "elevator", "gym", "terrace",
                 "garden", "facade", "stairs", "hallway", "rooftop"],
}

# (positive, negative) adjectives; aspect-specific words make the aspect the
# dominant factor of variation, as in real reviews
ASPECT_ADJECTIVES = {
    "location": (["central", "convenient", "quiet", "walkable", "ideal", "scenic"],
                 ["remote", "isolated", "sketchy", "inconvenient", "deserted", "seedy"]),
    "rooms": (["spacious", "cozy", "comfortable", "bright", "roomy", "modern"],
              ["cramped", "tiny", "stuffy", "uncomfortable", "dark", "dated"]),
    "service": (["friendly", "helpful", "attentive", "courteous", "welcoming", "professional"],
                ["rude", "unhelpful", "slow", "dismissive", "careless", "arrogant"]),
    "food": (["delicious", "tasty", "fresh", "generous", "flavorful", "varied"],
             ["bland", "stale", "cold", "overpriced", "greasy", "tasteless"]),
    "cleanliness": (["spotless", "immaculate", "pristine", "tidy", "hygienic", "gleaming"],
                    ["dirty", "stained", "dusty", "filthy", "moldy", "grimy"]),
    "building": (["elegant", "grand", "stylish", "renovated", "impressive", "beautiful"],
                 ["shabby", "rundown", "ugly", "crumbling", "tired", "neglected"]),
}
POSITIVE = ["great", "excellent", "wonderful", "lovely", "perfect", "fantastic"]
NEGATIVE = ["terrible", "awful", "poor", "horrible", "disappointing", "dreadful"]
ADVERBS = ["", "", "really", "very", "quite", "truly"]

# aspect-flavoured phrases; none of them contains another aspect's nouns
ASPECT_PHRASES = {
    "location": ["near the old town", "close to the metro", "by the river",
                 "a short walk from everything", "in the heart of the city", "far from the sights"],
    "rooms": ["with a king size bed", "with plenty of space", "with blackout blinds",
              "with a rain shower head", "on the top floor", "facing the courtyard"],
    "service": ["at check in", "during our stay", "at the front counter",
                "when we arrived", "with every request", "throughout the visit"],
    "food": ["in the morning", "at the breakfast hall", "with local specialties",
             "for the price", "served until noon", "with fresh fruit"],
    "cleanliness": ["after the cleaning", "every single day", "when we checked",
                    "in every corner", "despite the housekeeping", "on arrival"],
    "building": ["from the outside", "near the entrance", "on the ground level",
                 "in the old wing", "around the courtyard", "since the renovation"],
}

TEMPLATES = [
    "the {noun} was {adv} {adj} {phrase} .",
    "{noun} {phrase} is {adv} {adj} .",
    "we found the {noun} {adv} {adj} {phrase} .",
    "{adj} {noun} {phrase} !",
    "our {noun} {phrase} was {adv} {adj} .",
    "the {noun} and the {noun2} were {adv} {adj} .",
]

DOMINANT_PARAPHRASES = [
    "the location was great .",
    "great location .",
    "the location is excellent .",
    "location was perfect !",
    "we loved the location .",
    "excellent location overall .",
    "the location here is wonderful .",
    "fantastic location .",
]


@dataclass
class ToySentence:
    text: str
    aspect: str
    group: str


def random_sentence(rng: np.random.Generator, aspects=None, nouns_per_aspect: int = 10,
                    generic_share: float = 0.25) -> ToySentence:
    aspects = list(aspects or ASPECT_NOUNS)
    aspect = aspects[rng.integers(len(aspects))]
    nouns = ASPECT_NOUNS[aspect][:nouns_per_aspect]
    noun = nouns[rng.integers(len(nouns))]
    positive = rng.random() < 0.6
    pos, neg = ASPECT_ADJECTIVES[aspect]
    adjs = pos if positive else neg
    if rng.random() < generic_share:
        adjs = POSITIVE if positive else NEGATIVE
    adj = adjs[rng.integers(len(adjs))]
    adv = ADVERBS[rng.integers(len(ADVERBS))]
    phrases = ASPECT_PHRASES[aspect]
    phrase = phrases[rng.integers(len(phrases))]
    noun2 = nouns[(nouns.index(noun) + 1 + rng.integers(len(nouns) - 1)) % len(nouns)] if len(nouns) > 1 else noun
    tpl = TEMPLATES[rng.integers(len(TEMPLATES))]
    text = " ".join(tpl.format(noun=noun, noun2=noun2, adj=adj, adv=adv, phrase=phrase).split())
    return ToySentence(text, aspect, "other")


def dominant_sentence(rng: np.random.Generator) -> ToySentence:
    return ToySentence(DOMINANT_PARAPHRASES[rng.integers(len(DOMINANT_PARAPHRASES))],
                       "location", "dominant")


def generate_records(n_entities: int, reviews_per_entity: int, sentences_per_review: int,
                     seed: int, aspects=None, dominant_share: float = 0.0,
                     prefix: str = "h", nouns_per_aspect: int = 10) -> list[dict]:
    """Review records; ``dominant_share`` of sentences come from the planted paraphrase set."""
    rng = np.random.default_rng(seed)
    records = []
    for e in range(n_entities):
        for r in range(reviews_per_entity):
            sents = [dominant_sentence(rng) if rng.random() < dominant_share
                     else random_sentence(rng, aspects, nouns_per_aspect)
                     for _ in range(sentences_per_review)]
            records.append({
                "entity_id": f"{prefix}{e:03d}",
                "review_id": f"r{r:03d}",
                "sentences": [s.text for s in sents],
                "labels": [{"aspect": s.aspect, "group": s.group} for s in sents],
            })
    return records


def sentence_labels(records: list[dict], key: str = "aspect") -> dict[str, list[str]]:
    """Per-entity label lists aligned with the entity's sentence order."""
    out: dict[str, list[str]] = {}
    for rec in records:
        out.setdefault(rec["entity_id"], []).extend(lab[key] for lab in rec["labels"])
    return out


def toy_corpus_records(seed: int = 0) -> list[dict]:
    """The standard 500-sentence templated corpus (10 hotels x 10 reviews x 5 sentences)."""
    return generate_records(10, 10, 5, seed)


def bundled_toy_path():
    """Path of the packaged copy of :func:`toy_corpus_records` as JSONL."""
    return Path(__file__).with_name("data") / "toy_reviews.jsonl"
