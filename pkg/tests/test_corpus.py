import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from awesim import corpus as C
from awesim.corpus import CorpusError
from awesim.frontend import Waveform, write_features, write_wav
from conftest import make_token


def write_rows(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


@pytest.fixture
def feature_manifest(tmp_path):
    write_features(tmp_path / "utt.awef", np.random.default_rng(0).standard_normal((200, 13)))
    rows = [dict(token_id=f"t{i}", word_type=w, phones=list(w), speaker_id="s1",
                 speaker_gender="F", language="en", feature_path="utt.awef",
                 start_ms=100.0 * i, end_ms=100.0 * i + 85.0)
            for i, w in enumerate(["ab", "ab", "cd"])]
    write_rows(tmp_path / "m.jsonl", rows)
    return tmp_path / "m.jsonl", rows


def test_manifest_three_rows(feature_manifest):
    path, _ = feature_manifest
    corp = C.load_manifest(path)
    assert len(corp) == 3
    assert not corp.tokens[0].loaded
    assert corp.tokens[1].features.shape == (7, 13)
    assert corp.tokens[1].duration_ms == 85.0


def test_manifest_eager(feature_manifest):
    path, _ = feature_manifest
    assert all(t.loaded for t in C.load_manifest(path, eager=True).tokens)


def test_manifest_empty_phones(tmp_path, feature_manifest):
    path, rows = feature_manifest
    rows[1]["phones"] = []
    write_rows(path, rows)
    with pytest.raises(CorpusError, match="t1"):
        C.load_manifest(path)


def test_manifest_duplicate_id(feature_manifest):
    path, rows = feature_manifest
    rows[2]["token_id"] = "t0"
    write_rows(path, rows)
    with pytest.raises(CorpusError, match="duplicate"):
        C.load_manifest(path)


def test_manifest_bad_alignment(feature_manifest):
    path, rows = feature_manifest
    rows[0]["end_ms"] = rows[0]["start_ms"]
    write_rows(path, rows)
    with pytest.raises(CorpusError, match="t0"):
        C.load_manifest(path)


def test_manifest_missing_file(feature_manifest):
    path, rows = feature_manifest
    rows[2]["feature_path"] = "nope.awef"
    write_rows(path, rows)
    with pytest.raises(CorpusError, match="t2"):
        C.load_manifest(path)


def test_manifest_audio(tmp_path):
    t = np.arange(16000) / 16000
    write_wav(tmp_path / "a.wav", Waveform(0.3 * np.sin(2 * np.pi * 200 * t), 16000))
    write_rows(tmp_path / "m.jsonl", [dict(
        token_id="w", word_type="x", phones=["x"], speaker_id="s", speaker_gender="M",
        language="en", audio_path="a.wav", start_ms=100, end_ms=400)])
    tok = C.load_manifest(tmp_path / "m.jsonl").tokens[0]
    assert tok.features.shape == (28, 13)
    assert tok.duration_ms == C.duration_for_frames(28)


def test_manifest_round_trip(tmp_path, tiny_spec):
    corp = C.synth_corpus(tiny_spec, 0)
    C.write_manifest(corp, tmp_path / "m.jsonl")
    back = C.load_manifest(tmp_path / "m.jsonl")
    assert [t.token_id for t in back.tokens] == [t.token_id for t in corp.tokens]
    for a, b in zip(corp.tokens, back.tokens):
        assert a.duration_ms == b.duration_ms
        assert a.phone_frames == b.phone_frames
        np.testing.assert_allclose(b.features, a.features, rtol=1e-6, atol=1e-6)


# -- matching -----------------------------------------------------------------

def speaker_corpus(lang, spec):
    """spec: {speaker: (gender, n_tokens)}; every token is 10 frames long."""
    toks = [make_token(f"{lang}_{s}_{i}", f"w{i % 3}", speaker=s, gender=g, language=lang, n_frames=10)
            for s, (g, n) in spec.items() for i in range(n)]
    return C.Corpus(tuple(toks), lang)


def test_match_identity():
    a = speaker_corpus("en", {"s1": ("F", 5), "s2": ("M", 7)})
    ma, mb = C.match_subsets(a, a)
    assert ma.duration_ms == mb.duration_ms == a.duration_ms


def test_match_min_speakers():
    a = speaker_corpus("en", {"s1": ("F", 5), "s2": ("F", 5)})
    b = speaker_corpus("ja", {"t1": ("F", 5), "t2": ("F", 5), "t3": ("F", 5)})
    ma, mb = C.match_subsets(a, b)
    assert len(ma.speakers) == len(mb.speakers) == 2


def test_match_durations_within_one_token():
    a = speaker_corpus("en", {f"a{i}": ("F" if i % 2 else "M", 30 + i) for i in range(20)})
    b = speaker_corpus("ja", {f"b{i}": ("F" if i % 2 else "M", 31 + 2 * i) for i in range(20)})
    ma, mb = C.match_subsets(a, b, seed=1)
    assert len(ma.speakers) == len(mb.speakers) == 20
    ga = Counter(ma.speaker_genders().values())
    assert ga == Counter(mb.speaker_genders().values())
    # paired speakers (same gender, same duration rank) end up within one token
    da, db = ma.speaker_durations(), mb.speaker_durations()
    for g in ("F", "M"):
        xa = sorted((v for s, v in da.items() if ma.speaker_genders()[s] == g), reverse=True)
        xb = sorted((v for s, v in db.items() if mb.speaker_genders()[s] == g), reverse=True)
        for u, v in zip(xa, xb):
            assert abs(u - v) <= C.duration_for_frames(10)
    assert ma.speakers <= a.speakers and mb.speakers <= b.speakers


def test_match_gender_mismatch():
    a = speaker_corpus("en", {"s1": ("M", 3)})
    b = speaker_corpus("ja", {"t1": ("F", 3)})
    with pytest.raises(CorpusError, match="gender"):
        C.match_subsets(a, b)


# -- pairs ---------------------------------------------------------------------

def test_pairs_two_tokens():
    toks = [make_token("apple1", "apple"), make_token("apple2", "apple")]
    pairs = C.generate_pairs(toks, 2, 0)
    assert len(pairs) == 2
    for p in pairs:
        assert {p.input.token_id, p.target.token_id} == {"apple1", "apple2"}


def test_pairs_singletons():
    with pytest.raises(CorpusError):
        C.generate_pairs([make_token("a", "x"), make_token("b", "y")], 3, 0)


def test_pairs_reproducible():
    toks = [make_token(f"t{i}", "w") for i in range(3)]
    a = [(p.input.token_id, p.target.token_id) for p in C.generate_pairs(toks, 1000, 5)]
    b = [(p.input.token_id, p.target.token_id) for p in C.generate_pairs(toks, 1000, 5)]
    assert a == b


def test_pairs_uniform_over_ordered_pool():
    toks = [make_token(f"a{i}", "a") for i in range(3)] + [make_token(f"b{i}", "b") for i in range(2)]
    counts = Counter((p.input.token_id, p.target.token_id) for p in C.generate_pairs(toks, 40000, 1))
    assert len(counts) == 3 * 2 + 2 * 1
    freq = np.array(list(counts.values())) / 40000
    np.testing.assert_allclose(freq, 1 / 8, atol=0.01)


def test_pairs_cross_speaker():
    toks = [make_token(f"t{i}", "w", speaker=f"s{i % 2}") for i in range(4)]
    for p in C.generate_pairs(toks, 200, 0, cross_speaker_only=True):
        assert p.input.speaker_id != p.target.speaker_id


# -- mixing --------------------------------------------------------------------

def lang_corpus(lang, n_types=20, per_type=60):
    toks = [make_token(f"{lang}{w}_{k}", f"{lang}{w}", language=lang, speaker=f"s{k % 3}")
            for w in range(n_types) for k in range(per_type - w)]
    return C.Corpus(tuple(toks), lang)


def test_mix_full_scale_budgets():
    a, b = lang_corpus("en", 40, 300), lang_corpus("zh", 40, 300)
    ts = C.mix_bilingual(a, b, (50, 50), 10_000, 100_000, 0)
    langs = Counter(t.language for t in ts.pretrain_tokens)
    assert langs == {"en": 5000, "zh": 5000}
    assert Counter(p.input.language for p in ts.pairs) == {"en": 50_000, "zh": 50_000}


def test_mix_proportional():
    a, b = lang_corpus("en"), lang_corpus("zh")
    ts = C.mix_bilingual(a, b, (90, 10), 1000, 2000, 0)
    assert Counter(t.language for t in ts.pretrain_tokens) == {"en": 900, "zh": 100}
    assert Counter(p.input.language for p in ts.pairs) == {"en": 1800, "zh": 200}


def test_mix_degenerate_equals_monolingual():
    a, b = lang_corpus("en"), lang_corpus("zh")
    mixed = C.mix_bilingual(a, b, (100, 0), 300, 500, 7)
    mono = C.monolingual_set(a, 300, 500, 7)
    assert [t.token_id for t in mixed.pretrain_tokens] == [t.token_id for t in mono.pretrain_tokens]
    assert ([(p.input.token_id, p.target.token_id) for p in mixed.pairs]
            == [(p.input.token_id, p.target.token_id) for p in mono.pairs])


def test_mix_shortfall():
    a, b = lang_corpus("en", 2, 5), lang_corpus("zh")
    with pytest.raises(CorpusError, match="shortfall"):
        C.mix_bilingual(a, b, (50, 50), 100, 10, 0)


def test_most_frequent_takes_whole_types():
    a = lang_corpus("en", 5, 10)  # type sizes 10, 9, 8, 7, 6
    chosen = C.most_frequent_tokens(a, 21)
    assert Counter(t.word_type for t in chosen) == {"en0": 10, "en1": 9, "en2": 2}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100), st.integers(1, 400), st.integers(1, 800), st.integers(0, 10 ** 6))
def test_mix_totals_and_pair_invariants(pa, n_tok, n_pair, seed):
    a, b = lang_corpus("en", 20, 40), lang_corpus("zh", 20, 40)
    n_tok = max(n_tok, 80)
    tok_a, pair_a = n_tok * pa // 100, n_pair * pa // 100
    # a language asked for pairs must get at least one pairable type
    assume(pair_a == 0 or tok_a >= 2)
    assume(n_pair - pair_a == 0 or n_tok - tok_a >= 2)
    ts = C.mix_bilingual(a, b, (pa, 100 - pa), n_tok, n_pair, seed)
    assert len(ts.pretrain_tokens) == n_tok
    assert len(ts.pairs) == n_pair
    for p in ts.pairs:
        assert p.input.word_type == p.target.word_type
        assert p.input.language == p.target.language
        assert p.input.token_id != p.target.token_id


# -- synthetic -------------------------------------------------------------------

def test_synth_counts(tiny_spec):
    corp = C.synth_corpus(tiny_spec, 0)
    assert len(corp) == 2 * 5 * 2
    assert corp.speakers == {"s1", "s2"}
    tok = corp.tokens[0]
    assert tok.features.shape[1] == 13
    assert tok.duration_ms == C.duration_for_frames(len(tok.features))
    assert tok.phone_frames[-1][1] == len(tok.features)


def test_synth_zero_noise_fixed_lengths(tiny_spec):
    tiny_spec.noise = 0.0
    tiny_spec.frames_per_phone = (3, 3)
    by_key = {}
    for t in C.synth_corpus(tiny_spec, 0).tokens:
        by_key.setdefault((t.word_type, t.speaker_id), []).append(t.features)
    for feats in by_key.values():
        for f in feats[1:]:
            assert f.tobytes() == feats[0].tobytes()


def test_synth_empty_inventory(tiny_spec):
    tiny_spec.words = {}
    with pytest.raises(CorpusError):
        C.synth_corpus(tiny_spec, 0)


def test_synth_languages_separable_by_centroid():
    rng = np.random.default_rng(0)
    speakers = {"s1": 0.2 * rng.standard_normal(13), "s2": 0.2 * rng.standard_normal(13)}
    corpora = []
    for lang, shift in (("A", 3.0), ("B", -3.0)):
        phones = {f"{lang}{i}": shift + rng.standard_normal(13) for i in range(4)}
        words = {f"{lang}w{i}": tuple(rng.choice(sorted(phones), 3)) for i in range(5)}
        corpora.append(C.synth_corpus(C.SynthSpec(lang, phones, words, speakers, 4, 0.3), 1))
    means = {c.language: np.array([t.features.mean(0) for t in c.tokens]) for c in corpora}
    centroids = {k: v.mean(0) for k, v in means.items()}
    correct = 0
    total = 0
    for lang, vecs in means.items():
        for v in vecs:
            pred = min(centroids, key=lambda k: np.linalg.norm(v - centroids[k]))
            correct += pred == lang
            total += 1
    assert correct == total


def test_synth_spec_dict_round_trip(tiny_spec):
    again = C.SynthSpec.from_dict(json.loads(json.dumps(tiny_spec.to_dict())))
    a, b = C.synth_corpus(tiny_spec, 3), C.synth_corpus(again, 3)
    for x, y in zip(a.tokens, b.tokens):
        assert x.features.tobytes() == y.features.tobytes()
