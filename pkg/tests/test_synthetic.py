from tofner.convert import mrc_normalize
from tofner.corpus import extract_entities, validate_bio
from tofner.synthetic import CUES, make_domains, make_suite, write_suite


def test_deterministic_from_seed():
    a, b = make_suite(seed=3, n_source=20, n_target=20), make_suite(seed=3, n_source=20, n_target=20)
    assert a == b
    assert make_suite(seed=4, n_source=20, n_target=20).s_ner != a.s_ner


def test_domains_share_cues_not_vocabulary():
    src, tgt = make_domains(2019)
    assert not set(src.filler) & set(tgt.filler)
    assert not set(src.names) & set(tgt.names)
    cues = {c for pair in CUES.values() for c in pair}
    assert not cues & (set(src.filler) | set(tgt.filler))


def test_every_entity_follows_its_cue():
    suite = make_suite(seed=5, n_source=50, n_target=50)
    for sent in suite.s_ner + suite.t_test_gold:
        assert validate_bio(sent.tags).valid
        for etype, start, _ in extract_entities(sent):
            assert sent.tokens[start - 1] in CUES[etype]


def test_target_unlabeled_is_stripped_test(tmp_path):
    suite = make_suite(seed=6, n_source=10, n_target=10, n_mrc=5)
    assert [s.tokens for s in suite.t_ner_unlabeled] == [s.tokens for s in suite.t_test_gold]
    assert all(set(s.tags) == {"O"} for s in suite.t_ner_unlabeled + suite.s_ner_unlabeled)
    paths = write_suite(suite, tmp_path)
    assert len(mrc_normalize(suite.t_mrc)) == 5 and paths["t_mrc"].exists()
