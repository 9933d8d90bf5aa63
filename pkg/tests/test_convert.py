import numpy as np
import pytest
from hypothesis import given, settings

from tofner.convert import (
    AlignmentWarning,
    QueryTemplateSet,
    WordMap,
    char_span_to_tokens,
    mrc_normalize,
    mrc_to_ner,
    ner_to_mrc,
    subsample_negatives,
    substitute_words,
    tokenize_with_offsets,
)
from tofner.corpus import LabelSet, MrcExample, TaggedSentence, extract_entities, strip_labels
from tofner.errors import AlignmentError, ConfigError, ParseError

from conftest import bio_sentences, random_bio_sentence


def squad(context, answers, qid="q1", impossible=False):
    return {"data": [{"paragraphs": [{"context": context, "qas": [
        {"id": qid, "question": "what ?", "answers": answers, "is_impossible": impossible}
    ]}]}]}


def test_ner_to_mrc_cardinality():
    rng = np.random.default_rng(0)
    sents = [random_bio_sentence(rng, f"s{i}") for i in range(10)]
    out = ner_to_mrc(sents, QueryTemplateSet.default(), LabelSet())
    assert len(out) == 40
    assert out[0].id == "s0#PER" and out[0].entity_type == "PER"
    stripped = ner_to_mrc(strip_labels(sents), QueryTemplateSet.default(), LabelSet())
    assert len(stripped) == 40 and all(not ex.answers for ex in stripped)


def test_ner_to_mrc_answers_follow_type():
    s = TaggedSentence(("Mr", "Smith", "in", "Paris"), ("O", "B-PER", "O", "B-LOC"), "x")
    by_type = {ex.entity_type: ex.answers for ex in ner_to_mrc([s], QueryTemplateSet.default())}
    assert by_type == {"PER": ((1, 1),), "LOC": ((3, 3),), "ORG": (), "MISC": ()}


def test_missing_template_is_config_error():
    with pytest.raises(ConfigError):
        ner_to_mrc([], QueryTemplateSet({"PER": "people"}), LabelSet())


def test_templates_must_be_distinct():
    with pytest.raises(ConfigError):
        QueryTemplateSet({"PER": "q", "LOC": "q"})


@settings(max_examples=200, deadline=None)
@given(bio_sentences())
def test_mrc_roundtrip_property(sent):
    back = mrc_to_ner(ner_to_mrc([sent], QueryTemplateSet.default(), LabelSet()))
    assert len(back) == 1
    assert extract_entities(back[0]) == extract_entities(sent)


def test_tokenize_with_offsets():
    assert tokenize_with_offsets("Hi, Bob!") == [("Hi", 0, 2), (",", 2, 3), ("Bob", 4, 7), ("!", 7, 8)]


def test_char_span_smallest_cover():
    offs = tokenize_with_offsets("New York City")
    assert char_span_to_tokens(offs, 4, 8) == (1, 1)
    assert char_span_to_tokens(offs, 0, 8) == (0, 1)
    assert char_span_to_tokens(offs, 3, 4) is None


def test_mrc_normalize_basic():
    out = mrc_normalize(squad("Paris is in France.", [{"text": "France", "answer_start": 12}]))
    assert out == [MrcExample("what ?", ("Paris", "is", "in", "France", "."), ((3, 3),), None, "q1")]


def test_mrc_normalize_unanswerable():
    out = mrc_normalize(squad("Nothing here.", [], impossible=True))
    assert out[0].answers == ()


def test_mrc_normalize_bad_offset_names_example():
    with pytest.raises(ParseError, match="bad-7"):
        mrc_normalize(squad("short", [{"text": "short text", "answer_start": 3}], qid="bad-7"))


def test_mrc_normalize_text_mismatch():
    with pytest.raises(AlignmentError) as err:
        mrc_normalize(squad("Paris is in France.", [{"text": "Spain", "answer_start": 12}], qid="m1"))
    assert err.value.example_id == "m1"


def test_mrc_normalize_straddle_warns():
    with pytest.warns(AlignmentWarning):
        out = mrc_normalize(squad("Newcastle upon Tyne", [{"text": "castle", "answer_start": 3}]))
    assert out[0].answers == ((0, 0),)


def test_mrc_normalize_drops_overlapping_answers():
    ans = [{"text": "New York", "answer_start": 0}, {"text": "York City", "answer_start": 4}]
    out = mrc_normalize(squad("New York City", ans))
    assert out[0].answers == ((0, 1),)


def test_mrc_normalize_missing_data():
    with pytest.raises(ParseError):
        mrc_normalize({"version": "x"})


def test_subsample_negatives():
    exs = [MrcExample("q", ("a", "b"), ((0, 0),) if i % 3 == 0 else (), None, str(i)) for i in range(300)]
    kept = subsample_negatives(exs, 0.5, seed=3)
    assert all(ex in kept for ex in exs if ex.answers)
    n_neg = sum(1 for ex in kept if not ex.answers)
    assert 70 < n_neg < 130
    assert kept == subsample_negatives(exs, 0.5, seed=3)
    assert subsample_negatives(exs, 1.0, seed=3) == exs
    with pytest.raises(ConfigError):
        subsample_negatives(exs, 1.5, seed=3)


def test_word_map_and_substitute(tmp_path):
    p = tmp_path / "map.txt"
    p.write_text("house casa\nred roja\n")
    wm = WordMap.load(p, lowercase_fallback=True)
    s = TaggedSentence(("The", "House", "red"), ("O", "B-LOC", "O"), "x")
    out = substitute_words([s], wm)[0]
    assert out.tokens == ("The", "casa", "roja") and out.tags == s.tags
    strict = WordMap.load(p)
    assert substitute_words([s], strict)[0].tokens == ("The", "House", "roja")


def test_word_map_rejects_bad_lines(tmp_path):
    p = tmp_path / "map.txt"
    p.write_text("house casa\nbroken\n")
    with pytest.raises(ParseError, match="line 2"):
        WordMap.load(p)
