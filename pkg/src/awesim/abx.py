"""Machine ABX discrimination on single-vector embeddings.

A trial (A, B, X) is correct when X is closer to A (same type) than to B
(different type) under angular cosine distance; exact ties score 0.5.
"""

from __future__ import annotations

import enum
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10 ** 7
ENUMERATION_LIMIT = 2_000_000


class AbxError(ValueError):
    pass


class Outcome(enum.Enum):
    CORRECT = 1.0
    INCORRECT = 0.0
    TIE = 0.5


@dataclass(frozen=True, eq=False)
class Segment:
    """An embeddable stretch of speech: a whole word token or one phone of it."""

    seg_id: str
    label: str
    features: np.ndarray
    duration_ms: float
    speaker_id: str = ""
    phones: tuple = ()
    lemma: str | None = None
    language: str = ""

    @classmethod
    def from_token(cls, tok) -> "Segment":
        return cls(tok.token_id, tok.word_type, tok.features, tok.duration_ms,
                   tok.speaker_id, tuple(tok.phones), tok.lemma, tok.language)

    @classmethod
    def from_phone(cls, tok, i: int) -> "Segment":
        seg = tok.phone_segment(i)
        return cls(f"{tok.token_id}#{i}", tok.phones[i], seg, 10.0 * len(seg) + 15.0,
                   tok.speaker_id, (tok.phones[i],), None, tok.language)


@dataclass(frozen=True)
class AbxTriplet:
    a: Segment
    b: Segment
    x: Segment
    contrast_meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"a": self.a.seg_id, "b": self.b.seg_id, "x": self.x.seg_id,
                "contrast_meta": self.contrast_meta}


@dataclass(frozen=True)
class AbxResult:
    n_trials: int
    n_correct: float
    n_ties: int

    @property
    def error_rate(self) -> float:
        return 100.0 * (1.0 - self.n_correct / self.n_trials)

    def to_json(self, task: str) -> dict:
        return {"task": task, "n_trials": self.n_trials, "n_ties": self.n_ties,
                "error_rate": self.error_rate}


def angular_cosine_distance(u, v) -> float:
    """arccos(cosine similarity) / pi, in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise AbxError(f"embedding shapes differ: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise AbxError("angular distance is undefined for a zero vector")
    # Same angle as arccos of the cosine, but stable near 0 and pi where
    # arccos loses half the significant digits.
    uh, vh = u / nu, v / nv
    angle = 2.0 * np.arctan2(np.linalg.norm(uh - vh), np.linalg.norm(uh + vh))
    return float(angle / np.pi)


def abx_trial(a, b, x) -> Outcome:
    da = angular_cosine_distance(a, x)
    db = angular_cosine_distance(b, x)
    if da < db:
        return Outcome.CORRECT
    if da > db:
        return Outcome.INCORRECT
    return Outcome.TIE


def score_trials(outcomes: Iterable[Outcome]) -> AbxResult:
    n = correct = ties = 0
    for o in outcomes:
        n += 1
        correct += o.value
        ties += o is Outcome.TIE
    if n == 0:
        raise AbxError("no ABX trials to score")
    return AbxResult(n, correct, ties)


def abx_error_rate(triplets: Sequence[AbxTriplet], embedder: Callable) -> AbxResult:
    """Embed every distinct segment once, adjudicate all triplets.

    ``embedder`` maps a list of feature matrices to an array of embeddings
    (one row each).
    """
    if not triplets:
        raise AbxError("empty triplet list")
    segs = {}
    for tr in triplets:
        for s in (tr.a, tr.b, tr.x):
            segs.setdefault(s.seg_id, s)
    ids = list(segs)
    vecs = np.asarray(embedder([segs[i].features for i in ids]), dtype=np.float64)
    emb = dict(zip(ids, vecs))
    return score_trials(abx_trial(emb[t.a.seg_id], emb[t.b.seg_id], emb[t.x.seg_id])
                        for t in triplets)


def save_triplets(triplets, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")


def load_triplets(path, segments: dict) -> list:
    """Rebuild triplets from JSON lines, resolving ids through ``segments``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(AbxTriplet(segments[d["a"]], segments[d["b"]], segments[d["x"]],
                                      d.get("contrast_meta", {})))
    return out


# -- edit distance ----------------------------------------------------------

def phone_edit_distance(p: Sequence, q: Sequence) -> int:
    """Levenshtein distance over phone symbols with unit costs."""
    prev = list(range(len(q) + 1))
    for i, pi in enumerate(p, 1):
        cur = [i] + [0] * len(q)
        for j, qj in enumerate(q, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (pi != qj))
        prev = cur
    return prev[-1]


# -- samplers ---------------------------------------------------------------

def _distinct_speakers(a, b, x):
    return len({a.speaker_id, b.speaker_id, x.speaker_id}) == 3


def _sample_two_category(pools, labels, n, rng, meta, distinct_speakers):
    """Balanced sampling for a two-way contrast: half the trials per A/X category."""
    triplets = []
    for k in range(n):
        ax, bb = (0, 1) if k % 2 == 0 else (1, 0)
        pool_ax, pool_b = pools[ax], pools[bb]
        for _ in range(10_000):
            i = int(rng.integers(len(pool_ax)))
            j = int(rng.integers(len(pool_ax) - 1))
            j += j >= i
            a, x = pool_ax[i], pool_ax[j]
            b = pool_b[int(rng.integers(len(pool_b)))]
            if not distinct_speakers or _distinct_speakers(a, b, x):
                break
        else:
            raise AbxError(f"cannot find speaker-distinct triplets for {labels}")
        triplets.append(AbxTriplet(a, b, x, dict(meta, ax=labels[ax], b=labels[bb])))
    return triplets


def phone_segments(corpus, phone) -> list:
    out = []
    for tok in corpus.tokens:
        if tok.phone_frames is None:
            continue
        for i, ph in enumerate(tok.phones):
            if ph == phone:
                out.append(Segment.from_phone(tok, i))
    return out


def sample_phone_triplets(corpus, contrast, n: int, seed,
                          distinct_speakers: bool = False) -> list:
    """Triplets of phone segments cut out of word tokens via their alignments."""
    p1, p2 = contrast
    if p1 == p2:
        raise AbxError(f"degenerate contrast ({p1}, {p2})")
    if n < 1:
        raise AbxError("n must be at least 1")
    pools = [phone_segments(corpus, p1), phone_segments(corpus, p2)]
    for ph, pool in zip(contrast, pools):
        if len(pool) < 2:
            raise AbxError(f"phone {ph!r} has {len(pool)} aligned instances, need at least 2")
    rng = np.random.default_rng(seed)
    return _sample_two_category(pools, (p1, p2), n, rng,
                                {"kind": "phone", "contrast": [p1, p2]}, distinct_speakers)


def sample_minimal_pair_triplets(corpus, pair, n: int, seed,
                                 distinct_speakers: bool = False) -> list:
    """Triplets of whole word tokens for a two-word contrast such as rock/lock."""
    w1, w2 = pair
    if w1 == w2:
        raise AbxError(f"degenerate word pair ({w1}, {w2})")
    if n < 1:
        raise AbxError("n must be at least 1")
    groups = corpus.by_type()
    pools = []
    for w in pair:
        toks = groups.get(w, [])
        if len(toks) < 2:
            raise AbxError(f"word {w!r} has {len(toks)} tokens, need at least 2")
        pools.append([Segment.from_token(t) for t in toks])
    rng = np.random.default_rng(seed)
    return _sample_two_category(pools, (w1, w2), n, rng,
                                {"kind": "minimal_pair", "pair": [w1, w2]}, distinct_speakers)


def duration_ratio_ok(durations, max_ratio: float = 1.1) -> bool:
    return max(durations) <= max_ratio * min(durations)


def audit_edit_distance_triplet(t: AbxTriplet, d: int, min_phones=4, max_phones=10,
                                max_ratio=1.1) -> list:
    """List of violated constraints (empty when the triplet is valid)."""
    problems = []
    segs = (t.a, t.b, t.x)
    if t.a.label != t.x.label:
        problems.append("A and X differ in type")
    if t.b.label == t.x.label:
        problems.append("B and X share a type")
    if t.a.seg_id == t.x.seg_id:
        problems.append("A and X are the same token")
    if any(not (min_phones <= len(s.phones) <= max_phones) for s in segs):
        problems.append("phone count outside window")
    if not duration_ratio_ok([s.duration_ms for s in segs], max_ratio):
        problems.append("duration ratio above bound")
    if t.b.lemma is not None and t.x.lemma is not None and t.b.lemma == t.x.lemma:
        problems.append("B and X share a lemma")
    if phone_edit_distance(t.b.phones, t.x.phones) != d:
        problems.append("edit distance mismatch")
    return problems


def sample_edit_distance_triplets(corpus, d: int, n_max: int, seed, min_phones: int = 4,
                                  max_phones: int = 10, max_ratio: float = 1.1,
                                  distinct_speakers: bool = False) -> list:
    """Up to ``n_max`` distinct triplets whose B and X words are ``d`` edits apart.

    All three words have ``min_phones``..``max_phones`` phones, durations
    within ``max_ratio`` of each other, and B/X have different lemmas when
    lemmas are annotated. Triplets are drawn uniformly without replacement
    from all valid ones: exhaustively when the candidate pool is small,
    otherwise by rejection sampling with a cap of ``MAX_REJECTIONS``.
    """
    if n_max < 1:
        raise AbxError("n_max must be at least 1")
    rng = np.random.default_rng(seed)
    groups = {}
    for tok in corpus.tokens:
        if min_phones <= len(tok.phones) <= max_phones:
            groups.setdefault(tok.word_type, []).append(tok)
    if not groups:
        raise AbxError(f"no words with {min_phones}-{max_phones} phones")
    have_lemmas = all(t.lemma is not None for g in groups.values() for t in g)
    if not have_lemmas:
        warnings.warn("lemma annotations missing; morphological exclusion skipped", stacklevel=2)
    types = sorted(groups)
    type_phones = {w: groups[w][0].phones for w in types}
    type_lemma = {w: groups[w][0].lemma for w in types}
    # (x_type, b_type) pairs satisfying the type-level constraints
    type_pairs = []
    for wx in types:
        if len(groups[wx]) < 2:
            continue
        for wb in types:
            if wb == wx or phone_edit_distance(type_phones[wb], type_phones[wx]) != d:
                continue
            if have_lemmas and type_lemma[wb] == type_lemma[wx]:
                continue
            type_pairs.append((wx, wb))
    if not type_pairs:
        raise AbxError(f"no word pairs at edit distance {d}")
    segs = {w: [Segment.from_token(t) for t in groups[w]] for w in types}
    dur = {w: np.array([s.duration_ms for s in segs[w]]) for w in types}
    spk = {w: np.array([s.speaker_id for s in segs[w]]) for w in types}
    sizes = np.array([len(segs[wx]) * (len(segs[wx]) - 1) * len(segs[wb]) for wx, wb in type_pairs])
    meta = {"kind": "edit_distance", "edit_distance": d}

    def make(pi, xi, ai, bi):
        wx, wb = type_pairs[pi]
        return AbxTriplet(segs[wx][ai], segs[wb][bi], segs[wx][xi], dict(meta))

    if sizes.sum() <= ENUMERATION_LIMIT:
        found = []
        for pi, (wx, wb) in enumerate(type_pairs):
            dx, db = dur[wx], dur[wb]
            hi = np.maximum(np.maximum(dx[:, None, None], dx[None, :, None]), db[None, None, :])
            lo = np.minimum(np.minimum(dx[:, None, None], dx[None, :, None]), db[None, None, :])
            ok = hi <= max_ratio * lo
            ok &= ~np.eye(len(dx), dtype=bool)[:, :, None]
            if distinct_speakers:
                sx, sb = spk[wx], spk[wb]
                ok &= (sx[:, None, None] != sx[None, :, None])
                ok &= (sx[:, None, None] != sb[None, None, :])
                ok &= (sx[None, :, None] != sb[None, None, :])
            for xi, ai, bi in zip(*np.nonzero(ok)):
                found.append((pi, int(xi), int(ai), int(bi)))
        if not found:
            raise AbxError(f"no triplets at edit distance {d} satisfy the constraints")
        if len(found) > n_max:
            keep = np.sort(rng.choice(len(found), size=n_max, replace=False))
            found = [found[i] for i in keep]
        else:
            log.info("edit distance %d: only %d triplets available (asked %d)", d, len(found), n_max)
    else:
        found, seen, rejections = [], set(), 0
        probs = sizes / sizes.sum()
        batch = 100_000
        while len(found) < n_max and rejections < MAX_REJECTIONS:
            pis = rng.choice(len(type_pairs), size=batch, p=probs)
            u = rng.random((batch, 3))
            for pi, (ux, ua, ub) in zip(pis, u):
                wx, wb = type_pairs[pi]
                nx, nb = len(segs[wx]), len(segs[wb])
                xi = int(ux * nx)
                ai = int(ua * (nx - 1))
                ai += ai >= xi
                bi = int(ub * nb)
                key = (int(pi), xi, ai, bi)
                ds = (dur[wx][xi], dur[wx][ai], dur[wb][bi])
                good = key not in seen and duration_ratio_ok(ds, max_ratio)
                if good and distinct_speakers:
                    good = len({spk[wx][xi], spk[wx][ai], spk[wb][bi]}) == 3
                if good:
                    seen.add(key)
                    found.append(key)
                    if len(found) == n_max:
                        break
                else:
                    rejections += 1
                    if rejections >= MAX_REJECTIONS:
                        break
        if not found:
            raise AbxError(f"no triplets at edit distance {d} satisfy the constraints")
        if len(found) < n_max:
            log.info("edit distance %d: only %d triplets found (asked %d)", d, len(found), n_max)
    return [make(*k) for k in found]
