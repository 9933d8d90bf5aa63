import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from tofner.corpus import CorpusRegistry, CorpusRole, LabelSet, TaggedSentence, spans_to_bio
from tofner.convert import mrc_normalize
from tofner.synthetic import make_suite

TYPES = ("PER", "LOC", "ORG", "MISC")


def random_tags(rng: np.random.Generator, n: int, types=TYPES) -> tuple[str, ...]:
    """BIO-valid tags of length ``n``: non-overlapping typed spans of length 1-3."""
    spans, i = set(), 0
    while i < n:
        if rng.random() < 0.3:
            e = min(n - 1, i + int(rng.integers(0, 3)))
            spans.add((types[rng.integers(len(types))], i, e))
            i = e + 1
        else:
            i += 1
    return spans_to_bio(spans, n)


def random_bio_sentence(rng: np.random.Generator, sid: str, max_len: int = 20, types=TYPES) -> TaggedSentence:
    n = int(rng.integers(1, max_len + 1))
    tokens = tuple(f"w{int(rng.integers(50))}" for _ in range(n))
    return TaggedSentence(tokens, random_tags(rng, n, types), sid)


def random_pairs(rng: np.random.Generator, count: int, agree: float = 0.3):
    """Gold/pred sentence pairs of equal length; a fraction of predictions copy the gold."""
    gold = [random_bio_sentence(rng, f"g{i}") for i in range(count)]
    pred = [g if rng.random() < agree else g.with_tags(random_tags(rng, len(g))) for g in gold]
    return gold, pred


@st.composite
def bio_sentences(draw, max_len: int = 15, types=TYPES):
    n = draw(st.integers(1, max_len))
    spans, i = set(), 0
    while i < n:
        if draw(st.booleans()):
            e = min(n - 1, i + draw(st.integers(0, 2)))
            spans.add((draw(st.sampled_from(types)), i, e))
            i = e + 1
        else:
            i += 1
    tokens = tuple(draw(st.lists(st.sampled_from(["a", "b", "Cd", "7", ",", "Ef"]), min_size=n, max_size=n)))
    return TaggedSentence(tokens, spans_to_bio(spans, n), "s")


def registry_from_suite(suite) -> CorpusRegistry:
    reg = CorpusRegistry(LabelSet.default())
    reg.register(CorpusRole.S_NER, suite.s_ner)
    reg.register(CorpusRole.S_NER_UNLABELED, suite.s_ner_unlabeled)
    reg.register(CorpusRole.T_NER_UNLABELED, suite.t_ner_unlabeled)
    reg.register(CorpusRole.T_MRC, mrc_normalize(suite.t_mrc))
    reg.register(CorpusRole.S_MRC, mrc_normalize(suite.s_mrc))
    return reg


@pytest.fixture(scope="session")
def small_suite():
    return make_suite(seed=7, n_source=30, n_source_unlabeled=20, n_target=20, n_mrc=12)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.REPORT:
        terminalreporter.write_line(line)
