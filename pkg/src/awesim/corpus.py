"""Word-token corpora: manifest loading, matching, bilingual mixing, pairs.

Tokens are aligned acoustic words. A corpus holds tokens of one language;
a TrainingSet holds the pretraining tokens and the same-type pairs drawn
from one or two corpora at a given language ratio.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import frontend

log = logging.getLogger(__name__)

GENDERS = ("F", "M", "other")
FRAME_SHIFT_MS = 10.0
WINDOW_REMAINDER_MS = 15.0


class CorpusError(ValueError):
    pass


def duration_for_frames(n_frames: int) -> float:
    return n_frames * FRAME_SHIFT_MS + WINDOW_REMAINDER_MS


@dataclass(eq=False)
class WordToken:
    """One aligned acoustic word.

    ``phone_frames`` optionally gives per-phone ``(start, end)`` frame slices
    into ``features``; phone-level ABX tasks need it.
    """

    token_id: str
    word_type: str
    phones: tuple
    speaker_id: str
    speaker_gender: str
    language: str
    duration_ms: float
    lemma: str | None = None
    phone_frames: tuple | None = None
    _features: np.ndarray | None = field(default=None, repr=False)
    _loader: Callable[[], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.phones = tuple(self.phones)
        if not self.phones:
            raise CorpusError(f"token {self.token_id}: empty phone sequence")
        if self.duration_ms <= 0:
            raise CorpusError(f"token {self.token_id}: duration must be positive")
        if self.speaker_gender not in GENDERS:
            raise CorpusError(f"token {self.token_id}: unknown gender {self.speaker_gender!r}")
        if self._features is None and self._loader is None:
            raise CorpusError(f"token {self.token_id}: no features and no loader")

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = frontend.validate_features(self._loader(), dim=None)
        return self._features

    @property
    def loaded(self) -> bool:
        return self._features is not None

    def phone_segment(self, i: int) -> np.ndarray:
        if self.phone_frames is None:
            raise CorpusError(f"token {self.token_id} has no phone alignment")
        start, end = self.phone_frames[i]
        return self.features[start:end]


@dataclass(frozen=True)
class Corpus:
    tokens: tuple
    language: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        seen = set()
        for t in self.tokens:
            if t.language != self.language:
                raise CorpusError(
                    f"token {t.token_id} has language {t.language!r}, corpus is {self.language!r}")
            if t.token_id in seen:
                raise CorpusError(f"duplicate token_id {t.token_id!r}")
            seen.add(t.token_id)

    def __len__(self):
        return len(self.tokens)

    @property
    def speakers(self) -> frozenset:
        return frozenset(t.speaker_id for t in self.tokens)

    @property
    def duration_ms(self) -> float:
        return float(sum(t.duration_ms for t in self.tokens))

    @property
    def total_duration(self) -> str:
        minutes = int(round(self.duration_ms / 60000.0))
        return f"{minutes // 60}:{minutes % 60:02d}"

    def speaker_genders(self) -> dict:
        return {t.speaker_id: t.speaker_gender for t in self.tokens}

    def speaker_durations(self) -> dict:
        out = defaultdict(float)
        for t in self.tokens:
            out[t.speaker_id] += t.duration_ms
        return dict(out)

    def by_type(self) -> dict:
        groups = defaultdict(list)
        for t in self.tokens:
            groups[t.word_type].append(t)
        return dict(groups)

    def subset(self, tokens) -> "Corpus":
        return Corpus(tuple(tokens), self.language)


@dataclass(frozen=True)
class TrainingPair:
    input: WordToken
    target: WordToken

    def __post_init__(self):
        if self.input.word_type != self.target.word_type:
            raise CorpusError("pair tokens must share a word type")
        if self.input.token_id == self.target.token_id:
            raise CorpusError("pair tokens must be distinct")


@dataclass(frozen=True)
class TrainingSet:
    pretrain_tokens: tuple
    pairs: tuple
    ratio: tuple = (100, 0)

    def __post_init__(self):
        if sum(self.ratio) != 100:
            raise CorpusError(f"ratio {self.ratio} does not sum to 100")


# -- manifest ---------------------------------------------------------------

_REQUIRED = ("token_id", "word_type", "phones", "speaker_id", "speaker_gender",
             "language", "start_ms", "end_ms")


def _audio_loader(path: Path, start_ms, end_ms):
    def load():
        w = frontend.read_wav(path)
        a = int(round(start_ms * w.sample_rate / 1000.0))
        b = int(round(end_ms * w.sample_rate / 1000.0))
        return frontend.compute_mfcc(frontend.Waveform(w.samples[a:b], w.sample_rate))
    return load


def _feature_loader(path: Path, start_ms, end_ms):
    def load():
        feats = frontend.read_features(path)
        first = int(round(start_ms / FRAME_SHIFT_MS))
        n = max(1, int((end_ms - start_ms - 25.0) // FRAME_SHIFT_MS) + 1)
        out = feats[first:first + n]
        if len(out) == 0:
            raise CorpusError(f"{path}: alignment {start_ms}-{end_ms} ms is past the end")
        return out
    return load


def load_manifest(path, eager: bool = False) -> Corpus:
    """Read a JSON-lines manifest into a Corpus.

    Relative ``audio_path``/``feature_path`` entries resolve against the
    manifest's directory. Features load on first access unless ``eager``.
    """
    path = Path(path)
    base = path.parent
    tokens = []
    seen = set()
    language = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            tid = row.get("token_id", f"<line {lineno}>")
            missing = [k for k in _REQUIRED if k not in row]
            if missing:
                raise CorpusError(f"{path}:{lineno} token {tid}: missing fields {missing}")
            if tid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate token_id {tid!r}")
            seen.add(tid)
            if not row["phones"]:
                raise CorpusError(f"{path}:{lineno} token {tid}: empty phones")
            start, end = float(row["start_ms"]), float(row["end_ms"])
            if end <= start:
                raise CorpusError(f"{path}:{lineno} token {tid}: end_ms {end} <= start_ms {start}")
            if "audio_path" in row:
                src = base / row["audio_path"]
                loader = _audio_loader(src, start, end)
            elif "feature_path" in row:
                src = base / row["feature_path"]
                loader = _feature_loader(src, start, end)
            else:
                raise CorpusError(f"{path}:{lineno} token {tid}: needs audio_path or feature_path")
            if not src.exists():
                raise CorpusError(f"{path}:{lineno} token {tid}: file not found: {src}")
            n_frames = max(1, int((end - start - 25.0) // FRAME_SHIFT_MS) + 1)
            phone_frames = None
            if row.get("phone_bounds_ms"):
                phone_frames = tuple(
                    (int(round((s - start) / FRAME_SHIFT_MS)),
                     max(int(round((s - start) / FRAME_SHIFT_MS)) + 1,
                         int(round((e - start) / FRAME_SHIFT_MS))))
                    for s, e in row["phone_bounds_ms"])
            language = language or row["language"]
            tok = WordToken(
                token_id=tid, word_type=row["word_type"], phones=tuple(row["phones"]),
                speaker_id=row["speaker_id"], speaker_gender=row["speaker_gender"],
                language=row["language"], duration_ms=duration_for_frames(n_frames),
                lemma=row.get("lemma"), phone_frames=phone_frames, _loader=loader)
            if eager:
                tok.features
            tokens.append(tok)
    if not tokens:
        raise CorpusError(f"{path}: manifest has no rows")
    return Corpus(tuple(tokens), language)


def write_manifest(corpus: Corpus, path, feature_dir=None) -> None:
    """Write ``corpus`` as a manifest, one AWEF file per token."""
    path = Path(path)
    feature_dir = Path(feature_dir) if feature_dir else path.parent / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in corpus.tokens:
            fpath = feature_dir / f"{t.token_id}.awef"
            frontend.write_features(fpath, t.features)
            row = {
                "token_id": t.token_id, "word_type": t.word_type, "phones": list(t.phones),
                "speaker_id": t.speaker_id, "speaker_gender": t.speaker_gender,
                "language": t.language,
                "feature_path": os.path.relpath(fpath, path.parent),
                "start_ms": 0.0, "end_ms": t.duration_ms,
            }
            if t.lemma is not None:
                row["lemma"] = t.lemma
            if t.phone_frames is not None:
                row["phone_bounds_ms"] = [[s * FRAME_SHIFT_MS, e * FRAME_SHIFT_MS]
                                          for s, e in t.phone_frames]
            fh.write(json.dumps(row) + "\n")


# -- matching ---------------------------------------------------------------

def _trim_speaker(tokens, target_ms, rng):
    order = [tokens[i] for i in rng.permutation(len(tokens))]
    total = sum(t.duration_ms for t in order)
    while order and total > target_ms:
        total -= order.pop().duration_ms
    return order


def match_subsets(a: Corpus, b: Corpus, seed: int = 0) -> tuple:
    """Match two corpora on speaker count per gender and per-speaker duration.

    Speakers are chosen per gender from a seeded shuffle, paired in order
    of decreasing duration, and each pair is trimmed to the smaller of the
    two durations by dropping whole tokens.
    """
    ga, gb = a.speaker_genders(), b.speaker_genders()
    genders_a, genders_b = set(ga.values()), set(gb.values())
    if genders_a != genders_b:
        raise CorpusError(
            f"cannot match speaker genders: {sorted(genders_a)} vs {sorted(genders_b)}")
    rng = np.random.default_rng(seed)
    dur_a, dur_b = a.speaker_durations(), b.speaker_durations()
    toks_a, toks_b = defaultdict(list), defaultdict(list)
    for t in a.tokens:
        toks_a[t.speaker_id].append(t)
    for t in b.tokens:
        toks_b[t.speaker_id].append(t)
    keep_a, keep_b = [], []
    for g in sorted(genders_a):
        spk_a = sorted(s for s in ga if ga[s] == g)
        spk_b = sorted(s for s in gb if gb[s] == g)
        k = min(len(spk_a), len(spk_b))
        chosen_a = [spk_a[i] for i in rng.permutation(len(spk_a))[:k]]
        chosen_b = [spk_b[i] for i in rng.permutation(len(spk_b))[:k]]
        chosen_a.sort(key=lambda s: (-dur_a[s], s))
        chosen_b.sort(key=lambda s: (-dur_b[s], s))
        for sa, sb in zip(chosen_a, chosen_b):
            target = min(dur_a[sa], dur_b[sb])
            keep_a.extend(_trim_speaker(toks_a[sa], target, rng))
            keep_b.extend(_trim_speaker(toks_b[sb], target, rng))
    # restore corpus order
    ids_a = {t.token_id for t in keep_a}
    ids_b = {t.token_id for t in keep_b}
    return (a.subset(t for t in a.tokens if t.token_id in ids_a),
            b.subset(t for t in b.tokens if t.token_id in ids_b))


# -- training sets ----------------------------------------------------------

def most_frequent_tokens(corpus: Corpus, n: int) -> list:
    """Tokens of the most frequent word types, whole types first, until ``n``."""
    if n > len(corpus):
        raise CorpusError(
            f"language {corpus.language!r} cannot supply {n} tokens: has {len(corpus)} "
            f"(shortfall {n - len(corpus)})")
    groups = corpus.by_type()
    ranked = sorted(groups, key=lambda w: (-len(groups[w]), w))
    out = []
    for w in ranked:
        if len(out) >= n:
            break
        out.extend(groups[w][:n - len(out)])
    return out


def generate_pairs(tokens: Sequence[WordToken], m: int, seed,
                   cross_speaker_only: bool = False) -> list:
    """Sample ``m`` ordered same-type pairs of distinct tokens, with replacement.

    Every ordered pair in the pool is equally likely. With
    ``cross_speaker_only`` the pool excludes same-speaker pairs.
    """
    if m == 0:
        return []
    groups = defaultdict(list)
    for t in tokens:
        groups[t.word_type].append(t)
    types = sorted(groups)
    if cross_speaker_only:
        weights = []
        for w in types:
            k = len(groups[w])
            spk = Counter(t.speaker_id for t in groups[w])
            weights.append(k * (k - 1) - sum(c * (c - 1) for c in spk.values()))
    else:
        weights = [len(groups[w]) * (len(groups[w]) - 1) for w in types]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() == 0:
        raise CorpusError("no word type has two eligible tokens to pair")
    rng = np.random.default_rng(seed)
    type_idx = rng.choice(len(types), size=m, p=weights / weights.sum())
    pairs = []
    for ti in type_idx:
        group = groups[types[ti]]
        k = len(group)
        while True:
            i = int(rng.integers(k))
            j = int(rng.integers(k - 1))
            j += j >= i
            if not cross_speaker_only or group[i].speaker_id != group[j].speaker_id:
                break
        pairs.append(TrainingPair(group[i], group[j]))
    return pairs


def _split(total: int, ratio) -> tuple:
    first = total * ratio[0] // 100
    return first, total - first


def mix_bilingual(a: Corpus, b: Corpus | None, ratio, token_budget: int,
                  pair_budget: int, seed, cross_speaker_only: bool = False) -> TrainingSet:
    """Build a training set with ``ratio`` percent of each budget from each language.

    Totals always equal the monolingual budgets. Each language draws from
    its own seeded stream, so a 100:0 mix equals the monolingual set for ``a``.
    """
    ratio = tuple(int(r) for r in ratio)
    if len(ratio) != 2 or sum(ratio) != 100 or min(ratio) < 0:
        raise CorpusError(f"ratio must be two non-negative percentages summing to 100, got {ratio}")
    n_tok = _split(token_budget, ratio)
    n_pair = _split(pair_budget, ratio)
    tokens, pairs = [], []
    for lang_idx, (corpus, nt, npairs) in enumerate(zip((a, b), n_tok, n_pair)):
        if nt == 0 and npairs == 0:
            continue
        if corpus is None:
            raise CorpusError("second corpus required for a non-zero second share")
        chosen = most_frequent_tokens(corpus, nt)
        tokens.extend(chosen)
        pairs.extend(generate_pairs(chosen, npairs, [int(seed), lang_idx],
                                    cross_speaker_only=cross_speaker_only))
    return TrainingSet(tuple(tokens), tuple(pairs), ratio)


def monolingual_set(a: Corpus, token_budget: int, pair_budget: int, seed,
                    cross_speaker_only: bool = False) -> TrainingSet:
    return mix_bilingual(a, None, (100, 0), token_budget, pair_budget, seed,
                         cross_speaker_only=cross_speaker_only)


# -- synthetic corpora ------------------------------------------------------

@dataclass
class SynthSpec:
    """Recipe for a synthetic single-language corpus.

    ``phones`` maps phone symbols to 13-dim prototype vectors; ``words``
    maps word types to phone strings (lemma optional, as ``lemmas``).
    Each speaker adds a fixed offset vector to every frame. ``phone_jitter``
    optionally maps a phone to a direction along which every occurrence is
    shifted by one standard-normal amount (within-category variation).
    """

    language: str
    phones: dict
    words: dict
    speakers: dict
    tokens_per_type: int | dict = 5
    noise: float = 0.1
    frames_per_phone: tuple = (3, 6)
    lemmas: dict = field(default_factory=dict)
    speaker_genders: dict = field(default_factory=dict)
    token_prefix: str = ""
    phone_jitter: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["phones"] = {k: np.asarray(v, dtype=np.float64) for k, v in d["phones"].items()}
        d["speakers"] = {k: np.asarray(v, dtype=np.float64) for k, v in d["speakers"].items()}
        d["words"] = {k: tuple(v) for k, v in d["words"].items()}
        d["phone_jitter"] = {k: np.asarray(v, dtype=np.float64)
                             for k, v in d.get("phone_jitter", {}).items()}
        d["frames_per_phone"] = tuple(d.get("frames_per_phone", (3, 6)))
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "phones": {k: np.asarray(v).tolist() for k, v in self.phones.items()},
            "words": {k: list(v) for k, v in self.words.items()},
            "speakers": {k: np.asarray(v).tolist() for k, v in self.speakers.items()},
            "tokens_per_type": self.tokens_per_type,
            "noise": self.noise,
            "frames_per_phone": list(self.frames_per_phone),
            "lemmas": dict(self.lemmas),
            "speaker_genders": dict(self.speaker_genders),
            "token_prefix": self.token_prefix,
            "phone_jitter": {k: np.asarray(v).tolist() for k, v in self.phone_jitter.items()},
        }


def synth_corpus(spec: SynthSpec, seed) -> Corpus:
    """Generate a corpus of concatenated noisy phone segments.

    Every token of every word type is produced once per speaker, so the
    corpus holds ``n_types * tokens_per_type * n_speakers`` tokens.
    """
    if not spec.words:
        raise CorpusError("synthetic spec has an empty word inventory")
    for w, phones in spec.words.items():
        unknown = [p for p in phones if p not in spec.phones]
        if unknown:
            raise CorpusError(f"word {w!r} uses unknown phones {unknown}")
    lo, hi = spec.frames_per_phone
    rng = np.random.default_rng(seed)
    tokens = []
    for spk in spec.speakers:
        offset = np.asarray(spec.speakers[spk], dtype=np.float64)
        gender = spec.speaker_genders.get(spk, "other")
        for w in spec.words:
            phones = spec.words[w]
            n_tok = (spec.tokens_per_type[w] if isinstance(spec.tokens_per_type, dict)
                     else spec.tokens_per_type)
            for k in range(n_tok):
                lengths = rng.integers(lo, hi + 1, size=len(phones))
                segs, bounds, pos = [], [], 0
                for p, n in zip(phones, lengths):
                    proto = np.asarray(spec.phones[p], dtype=np.float64)
                    seg = proto + offset + spec.noise * rng.standard_normal((n, proto.size))
                    if p in spec.phone_jitter:
                        seg = seg + rng.standard_normal() * np.asarray(spec.phone_jitter[p])
                    segs.append(seg)
                    bounds.append((pos, pos + int(n)))
                    pos += int(n)
                feats = np.concatenate(segs)
                tokens.append(WordToken(
                    token_id=f"{spec.token_prefix}{spec.language}_{spk}_{w}_{k}",
                    word_type=w, phones=tuple(phones), speaker_id=spk,
                    speaker_gender=gender, language=spec.language,
                    duration_ms=duration_for_frames(len(feats)),
                    lemma=spec.lemmas.get(w), phone_frames=tuple(bounds), _features=feats))
    return Corpus(tuple(tokens), spec.language)
