"""Seeded two-language synthetic corpora for desk-scale experiments.

Both languages share a set of phones. Each language additionally owns a
two-phone contrast (A: "r"/"l", B: "c"/"ch") and has a single merged phone
where the other language contrasts ("R" in B, "C" in A). A merged phone
sits between the two contrasting prototypes and varies from token to
token along the contrast direction, so a model trained on that language
has every reason to treat the direction as noise.

Training lexicons are Zipf-distributed, with the contrast words spread
through the frequency ranks, so that taking the most frequent tokens of
a language at any share still exposes the model to its contrast.

Language A also carries edit-distance families: a base word plus
nested variants differing from it in exactly 1..4 substituted phones,
each its own lemma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abx import phone_edit_distance
from .corpus import SynthSpec

DIM = 13


@dataclass
class SynthPreset:
    """Knobs of the two-language design; defaults are the acceptance preset."""

    seed: int = 0
    n_shared: int = 8
    phone_scale: float = 1.0
    contrast_half_gap: float = 1.5
    jitter: float = 2.0
    speaker_scale: float = 0.2
    noise: float = 0.25
    frames_per_phone: tuple = (3, 5)
    n_minimal_pairs: int = 8
    n_families: int = 4
    family_length: int = 6
    n_filler: int = 4
    train_speakers: int = 4
    test_speakers: int = 2
    max_tokens_per_type: int = 6
    zipf_exponent: float = 0.4
    test_tokens_per_type: int = 4


def _unit(rng):
    v = rng.standard_normal(DIM)
    return v / np.linalg.norm(v)


def _random_word(rng, inventory, length):
    return tuple(inventory[i] for i in rng.integers(len(inventory), size=length))


def _families(rng, inventory, n, length, prototypes):
    """Base words with nested variants at edit distance exactly 1..4 from the base.

    Variant d+1 substitutes one more position of variant d, so distance
    from the base grows by construction rather than by luck of the draw.
    Each substitution uses the acoustically nearest other phone, keeping
    single edits subtle.
    """
    nearest = {}
    for p in inventory:
        others = [q for q in inventory if q != p]
        nearest[p] = min(others, key=lambda q: float(np.linalg.norm(prototypes[p] - prototypes[q])))
    words = {}
    for f in range(n):
        for _ in range(1000):
            base = _random_word(rng, inventory, length)
            order = rng.permutation(length)[:4]
            var = list(base)
            family = {f"fam{f}_0": base}
            for d, i in enumerate(order, 1):
                var[i] = nearest[base[i]]
                family[f"fam{f}_{d}"] = tuple(var)
            ok = all(phone_edit_distance(base, family[f"fam{f}_{d}"]) == d for d in range(1, 5))
            taken = set(words.values())
            if ok and not taken.intersection(family.values()):
                break
        words.update(family)
    return words


def two_language_specs(preset: SynthPreset | None = None) -> dict:
    """Specs for ``{"A": {"train": .., "test": ..}, "B": {...}}``.

    Train and test corpora of a language share phones and lexicon but have
    disjoint speakers.
    """
    p = preset or SynthPreset()
    rng = np.random.default_rng(p.seed)
    shared = {f"s{i}": p.phone_scale * rng.standard_normal(DIM) for i in range(p.n_shared)}
    rl_mid, rl_dir = p.phone_scale * rng.standard_normal(DIM), _unit(rng)
    c_mid, c_dir = p.phone_scale * rng.standard_normal(DIM), _unit(rng)
    g = p.contrast_half_gap
    phones_a = dict(shared, r=rl_mid + g * rl_dir, l=rl_mid - g * rl_dir, C=c_mid)
    phones_b = dict(shared, c=c_mid + g * c_dir, ch=c_mid - g * c_dir, R=rl_mid)
    jitter_a = {"C": p.jitter * c_dir}
    jitter_b = {"R": p.jitter * rl_dir}

    shared_inv = sorted(shared)
    specs = {}
    for lang, contrast, merged, phones, jitter in (
            ("A", ("r", "l"), "C", phones_a, jitter_a),
            ("B", ("c", "ch"), "R", phones_b, jitter_b)):
        inventory = shared_inv + list(contrast) + [merged]
        words = {}
        for k in range(p.n_minimal_pairs):
            frame = list(_random_word(rng, shared_inv + [merged], 4))
            pos = int(rng.integers(4))
            for ph in contrast:
                w = list(frame)
                w[pos] = ph
                words[f"mp{k}_{ph}"] = tuple(w)
        n_filler = p.n_filler
        if lang == "A":
            words.update(_families(rng, inventory, p.n_families, p.family_length, phones))
        else:
            # keep the two lexicons the same size
            n_filler += 5 * p.n_families
        for k in range(n_filler):
            words[f"fill{k}"] = _random_word(rng, inventory, int(rng.integers(4, 7)))
        lemmas = {w: w for w in words}
        # rank order: both words of a minimal pair, then two other words
        contrast_words = [w for w in words if w.startswith("mp")]
        other_words = [w for w in words if not w.startswith("mp")]
        other_words = [other_words[i] for i in rng.permutation(len(other_words))]
        ranked = []
        while contrast_words or other_words:
            ranked += contrast_words[:2] + other_words[:2]
            del contrast_words[:2], other_words[:2]
        zipf = {w: max(1, int(round(p.max_tokens_per_type / (rank + 1) ** p.zipf_exponent)))
                for rank, w in enumerate(ranked)}
        for split, n_spk, tpt in (("train", p.train_speakers, zipf),
                                  ("test", p.test_speakers, p.test_tokens_per_type)):
            speakers = {f"{split}{i}": p.speaker_scale * rng.standard_normal(DIM)
                        for i in range(n_spk)}
            genders = {s: ("F" if i % 2 == 0 else "M") for i, s in enumerate(speakers)}
            specs.setdefault(lang, {})[split] = SynthSpec(
                language=lang, phones=phones, words=words, speakers=speakers,
                tokens_per_type=tpt, noise=p.noise, frames_per_phone=tuple(p.frames_per_phone),
                lemmas=lemmas, speaker_genders=genders, token_prefix=f"{split}_",
                phone_jitter=jitter)
    return specs


def minimal_pairs(spec: SynthSpec) -> list:
    """Word pairs ``(w1, w2)`` of the preset's minimal-pair lexicon."""
    stems = {}
    for w in spec.words:
        if w.startswith("mp"):
            stems.setdefault(w.split("_")[0], []).append(w)
    return [tuple(sorted(v)) for _, v in sorted(stems.items()) if len(v) == 2]
