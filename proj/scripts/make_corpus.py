#!/usr/bin/env python3
"""Generate the synthetic English-like corpus shipped under data/.

The text is produced from a seeded RNG, so the file is fully reproducible
and carries no licensing baggage. It mixes Zipf-weighted vocabulary,
recurring collocations, and a handful of proverb-like sentences that repeat
verbatim, which gives a byte-level model structure at several scales.
"""

import argparse
import random

NOUNS = [
    "river", "mill", "road", "stone", "garden", "house", "window", "door",
    "field", "forest", "mountain", "valley", "bridge", "market", "village",
    "lantern", "letter", "journey", "harvest", "winter", "summer", "morning",
    "evening", "shadow", "candle", "teacher", "sailor", "farmer", "baker",
    "child", "horse", "sparrow", "salmon", "kettle", "cart", "bell", "book",
    "map", "coin", "rope", "boat", "cliff", "meadow", "orchard", "well",
]

ADJECTIVES = [
    "old", "quiet", "bright", "narrow", "heavy", "gentle", "distant", "warm",
    "cold", "green", "grey", "patient", "steady", "crooked", "hollow",
    "silver", "early", "late", "deep", "small", "broad", "weary", "plain",
]

VERBS = [
    "carried", "followed", "crossed", "watched", "opened", "closed", "found",
    "lost", "mended", "counted", "gathered", "remembered", "forgot", "built",
    "burned", "planted", "traded", "promised", "reached", "returned",
    "waited", "wandered", "listened", "answered",
]

ADVERBS = [
    "slowly", "quietly", "often", "rarely", "always", "never", "again",
    "together", "alone", "at last", "by morning", "before dark",
]

PROVERBS = [
    "What the river takes, the river returns.",
    "A patient hand mends the longest rope.",
    "No lantern burns past its last drop of oil.",
    "The mill grinds only while the water runs.",
    "Count the harvest after the frost, not before.",
]

TEMPLATES = [
    "The {adj} {noun} {verb} the {noun2} {adv}.",
    "By the {noun}, a {adj} {noun2} {verb} {adv}.",
    "Every {noun} in the {noun2} {verb} {adv}.",
    "The {noun} {verb} the {adj} {noun2}.",
    "When the {noun} {verb}, the {adj} {noun2} {verb2} {adv}.",
    "Nobody {verb} the {noun} without a {adj} {noun2}.",
    "In the {adj} {noun}, the {noun2} {verb} {adv}.",
]


def zipf_choice(rng: random.Random, items: list[str]) -> str:
    weights = [1.0 / (i + 1) for i in range(len(items))]
    return rng.choices(items, weights=weights, k=1)[0]


def sentence(rng: random.Random) -> str:
    if rng.random() < 0.06:
        return rng.choice(PROVERBS)
    t = rng.choice(TEMPLATES)
    return t.format(
        adj=zipf_choice(rng, ADJECTIVES),
        noun=zipf_choice(rng, NOUNS),
        noun2=zipf_choice(rng, NOUNS),
        verb=zipf_choice(rng, VERBS),
        verb2=zipf_choice(rng, VERBS),
        adv=zipf_choice(rng, ADVERBS),
    )


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240715)
    ap.add_argument("--bytes", type=int, default=1_000_000)
    ap.add_argument("--out", default="data/tiny_corpus.txt")
    args = ap.parse_args()

    rng = random.Random(args.seed)
    chunks: list[str] = []
    size = 0
    while size < args.bytes:
        para = " ".join(sentence(rng) for _ in range(rng.randint(3, 8)))
        para += "\n\n"
        chunks.append(para)
        size += len(para)

    text = "".join(chunks)[: args.bytes]
    # end on a clean line boundary
    cut = text.rfind("\n")
    if cut > 0:
        text = text[: cut + 1]
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    print(f"wrote {len(text)} bytes to {args.out}")


if __name__ == "__main__":
    main()
