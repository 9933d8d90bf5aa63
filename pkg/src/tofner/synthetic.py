"""Deterministic synthetic source/target corpora for desk-scale runs.

Entity types are announced by cue words shared between domains (``mister
Xal Bor`` is a PER). Source and target draw filler words and entity names
from disjoint made-up vocabularies, so a tagger can only transfer through
the cues and the token shapes. MRC data is generic "which number" QA over
domain-styled sentences, emitted as SQuAD-style JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import LabelSet, TaggedSentence, serialize_conll, strip_labels, atomic_write_text

CUES = {
    "PER": ("mister", "doctor"),
    "LOC": ("city", "island"),
    "ORG": ("company", "agency"),
    "MISC": ("festival", "language"),
}
_CONS = "bcdfghklmnprstvz"
_VOW = "aeiou"


def _words(rng: np.random.Generator, n: int, syllables: tuple[int, int], taken: set) -> list[str]:
    out = []
    while len(out) < n:
        k = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(_CONS[rng.integers(len(_CONS))] + _VOW[rng.integers(len(_VOW))] for _ in range(k))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class Domain:
    name: str
    filler: list[str]
    names: list[str]


def make_domains(seed: int, n_filler: int = 150, n_names: int = 120) -> tuple[Domain, Domain]:
    rng = np.random.default_rng(seed)
    taken = {c for cues in CUES.values() for c in cues}
    src = Domain("source", _words(rng, n_filler, (1, 2), taken), [w.capitalize() for w in _words(rng, n_names, (2, 3), taken)])
    tgt = Domain("target", _words(rng, n_filler, (1, 2), taken), [w.capitalize() for w in _words(rng, n_names, (2, 3), taken)])
    return src, tgt


def make_sentence(rng: np.random.Generator, dom: Domain, sid: str, types=tuple(CUES)) -> TaggedSentence:
    tokens: list[str] = []
    tags: list[str] = []
    n_ent = int(rng.integers(0, 4))
    chunks = int(rng.integers(n_ent + 1, n_ent + 3))
    ent_slots = set(rng.choice(chunks, size=n_ent, replace=False).tolist()) if n_ent else set()
    for c in range(chunks):
        for _ in range(int(rng.integers(1, 5))):
            r = rng.random()
            if r < 0.08:
                tokens.append(str(int(rng.integers(1, 2000))))
            elif r < 0.14:
                tokens.append(",")
            else:
                tokens.append(dom.filler[rng.integers(len(dom.filler))])
            tags.append("O")
        if c in ent_slots:
            etype = types[rng.integers(len(types))]
            cues = CUES.get(etype, ("entity",))
            tokens.append(cues[rng.integers(len(cues))])
            tags.append("O")
            length = int(rng.choice([1, 2, 3], p=[0.5, 0.35, 0.15]))
            for j in range(length):
                tokens.append(dom.names[rng.integers(len(dom.names))])
                tags.append(("B-" if j == 0 else "I-") + etype)
    tokens.append(".")
    tags.append("O")
    return TaggedSentence(tuple(tokens), tuple(tags), sid)


def make_mrc_squad(rng: np.random.Generator, dom: Domain, n: int, prefix: str) -> dict:
    """SQuAD-style QA: 'which number is mentioned' over domain text (unanswerable when none)."""
    paragraphs = []
    for i in range(n):
        sent = make_sentence(rng, dom, f"{prefix}{i}")
        context = " ".join(sent.tokens)
        answers = []
        offset = 0
        for tok in sent.tokens:
            if tok.isdigit():
                answers.append({"text": tok, "answer_start": offset})
                break
            offset += len(tok) + 1
        qa = {
            "id": f"{prefix}{i}",
            "question": "which number is mentioned in the text ?",
            "answers": answers,
            "is_impossible": not answers,
        }
        paragraphs.append({"context": context, "qas": [qa]})
    return {"version": "synthetic", "data": [{"title": prefix, "paragraphs": paragraphs}]}


@dataclass
class SyntheticSuite:
    s_ner: list[TaggedSentence]
    s_ner_unlabeled: list[TaggedSentence]
    t_test_gold: list[TaggedSentence]
    t_mrc: dict
    s_mrc: dict

    @property
    def t_ner_unlabeled(self) -> list[TaggedSentence]:
        return list(strip_labels(self.t_test_gold))


def make_suite(
    seed: int = 2019,
    n_source: int = 300,
    n_source_unlabeled: int = 200,
    n_target: int = 200,
    n_mrc: int = 100,
    label_set: LabelSet | None = None,
) -> SyntheticSuite:
    label_set = label_set or LabelSet.default()
    src, tgt = make_domains(seed)
    rng = np.random.default_rng([seed, 1])
    types = label_set.types if label_set.collapse_to is None else tuple(CUES)

    def gen(dom, n, prefix):
        sents = [make_sentence(rng, dom, f"{prefix}:{i}", types) for i in range(n)]
        if label_set.collapse_to is not None:
            from .corpus import normalize_tags

            sents = [s.with_tags(normalize_tags(s.tags, label_set)) for s in sents]
        return sents

    s_ner = gen(src, n_source, "s_ner")
    s_unl = list(strip_labels(gen(src, n_source_unlabeled, "s_unl")))
    t_gold = gen(tgt, n_target, "t_test")
    t_mrc = make_mrc_squad(rng, tgt, n_mrc, "t_mrc")
    s_mrc = make_mrc_squad(rng, src, n_mrc, "s_mrc")
    return SyntheticSuite(s_ner, s_unl, t_gold, t_mrc, s_mrc)


def write_suite(suite: SyntheticSuite, out_dir: str | Path) -> dict[str, Path]:
    """Write the suite as CoNLL / SQuAD JSON files and return the role -> path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "s_ner": out / "s_ner.conll",
        "s_ner_unlabeled": out / "s_ner_unlabeled.conll",
        "t_ner_unlabeled": out / "t_ner_unlabeled.conll",
        "t_test_gold": out / "t_test_gold.conll",
        "t_mrc": out / "t_mrc.json",
        "s_mrc": out / "s_mrc.json",
    }
    atomic_write_text(paths["s_ner"], serialize_conll(suite.s_ner))
    atomic_write_text(paths["s_ner_unlabeled"], serialize_conll(suite.s_ner_unlabeled))
    atomic_write_text(paths["t_ner_unlabeled"], serialize_conll(suite.t_ner_unlabeled))
    atomic_write_text(paths["t_test_gold"], serialize_conll(suite.t_test_gold))
    atomic_write_text(paths["t_mrc"], json.dumps(suite.t_mrc, indent=1))
    atomic_write_text(paths["s_mrc"], json.dumps(suite.s_mrc, indent=1))
    return paths
