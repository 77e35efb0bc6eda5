import numpy as np
import pytest

from awesim.corpus import SynthSpec, WordToken, duration_for_frames


def make_token(tid, word, speaker="s1", language="en", n_frames=4, gender="F",
               phones=None, lemma=None, dim=13, value=0.0):
    feats = np.full((n_frames, dim), value, dtype=float)
    return WordToken(token_id=tid, word_type=word, phones=tuple(phones or (word,)),
                     speaker_id=speaker, speaker_gender=gender, language=language,
                     duration_ms=duration_for_frames(n_frames), lemma=lemma, _features=feats)


@pytest.fixture
def tiny_spec():
    rng = np.random.default_rng(0)
    return SynthSpec(
        language="xx",
        phones={p: rng.standard_normal(13) for p in "abcd"},
        words={"ab": ("a", "b"), "cd": ("c", "d")},
        speakers={"s1": rng.standard_normal(13), "s2": rng.standard_normal(13)},
        tokens_per_type=5, noise=0.1, frames_per_phone=(2, 4),
        speaker_genders={"s1": "F", "s2": "M"})


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(acceptance_log.LINES):
            terminalreporter.write_line(line)
