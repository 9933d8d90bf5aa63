"""NER <-> MRC reformulation, SQuAD-style normalization and the word-substitution hook."""

from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    LabelSet,
    MrcExample,
    TaggedSentence,
    extract_entities,
    spans_to_bio,
)
from .errors import AlignmentError, ConfigError, ParseError

log = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class AlignmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QueryTemplateSet:
    queries: Mapping[str, str]

    def __post_init__(self):
        queries = dict(self.queries)
        for etype, q in queries.items():
            if not isinstance(q, str) or not q.strip():
                raise ConfigError(f"empty query for entity type {etype!r}")
        if len(set(queries.values())) != len(queries):
            raise ConfigError("query templates must be mutually distinct")
        object.__setattr__(self, "queries", queries)

    @classmethod
    def default(cls) -> "QueryTemplateSet":
        text = resources.files("tofner").joinpath("data/default_queries.json").read_text(encoding="utf-8")
        return cls(json.loads(text))

    @classmethod
    def load(cls, path) -> "QueryTemplateSet":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"template file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"template file {path} must hold a JSON object")
        return cls(data)

    def restricted_to(self, label_set: LabelSet) -> "QueryTemplateSet":
        self.check_covers(label_set.types)
        return QueryTemplateSet({t: self.queries[t] for t in label_set.types})

    def check_covers(self, types: Iterable[str]) -> None:
        missing = [t for t in types if t not in self.queries]
        if missing:
            raise ConfigError(f"no query template for entity type(s) {missing}")

    def __getitem__(self, etype: str) -> str:
        return self.queries[etype]


def ner_to_mrc(
    dataset: Iterable[TaggedSentence],
    templates: QueryTemplateSet,
    label_set: LabelSet | None = None,
) -> list[MrcExample]:
    """One MRC example per (sentence, entity type); sentences lacking the type yield empty answers."""
    types = (label_set or LabelSet.default()).types
    templates.check_covers(types)
    out = []
    for sent in dataset:
        spans = extract_entities(sent)
        stray = {t for t, _, _ in spans} - set(types)
        if stray:
            raise ConfigError(f"sentence {sent.id!r} has entity type(s) {sorted(stray)} with no template")
        for etype in types:
            answers = tuple((s, e) for t, s, e in spans if t == etype)
            out.append(MrcExample(templates[etype], sent.tokens, answers, etype, f"{sent.id}#{etype}"))
    return out


def pseudo_ner_to_mrc(
    pseudo: Iterable[TaggedSentence],
    templates: QueryTemplateSet,
    label_set: LabelSet | None = None,
) -> list[MrcExample]:
    return ner_to_mrc(pseudo, templates, label_set)


def mrc_to_ner(examples: Iterable[MrcExample]) -> list[TaggedSentence]:
    """Inverse of :func:`ner_to_mrc`: merge per-type answers back into one tag sequence per sentence."""
    grouped: dict[str, tuple[tuple[str, ...], set]] = {}
    for ex in examples:
        if ex.entity_type is None:
            raise ConfigError(f"example {ex.id!r} has no entity type; cannot map back to NER")
        sid = ex.id.rsplit("#", 1)[0]
        ctx, spans = grouped.setdefault(sid, (ex.context, set()))
        if ctx != ex.context:
            raise ConfigError(f"examples for sentence {sid!r} disagree on context")
        spans.update((ex.entity_type, s, e) for s, e in ex.answers)
    return [TaggedSentence(ctx, spans_to_bio(spans, len(ctx)), sid) for sid, (ctx, spans) in grouped.items()]


def subsample_negatives(examples: Sequence[MrcExample], keep_ratio: float, seed: int) -> list[MrcExample]:
    """Keep every answerable example and a seeded fraction of the no-answer ones."""
    if not 0.0 <= keep_ratio <= 1.0:
        raise ConfigError(f"mrc_negative_keep_ratio must lie in [0, 1], got {keep_ratio}")
    if keep_ratio >= 1.0:
        return list(examples)
    draws = np.random.default_rng(seed).random(len(examples))
    return [ex for ex, u in zip(examples, draws) if ex.answers or u < keep_ratio]


# ---------------------------------------------------------------------------
# SQuAD-style ingestion


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in TOKEN_RE.finditer(text)]


def char_span_to_tokens(offsets: Sequence[tuple[str, int, int]], start: int, end: int) -> tuple[int, int] | None:
    """Smallest token span covering characters ``[start, end)``."""
    covering = [i for i, (_, s, e) in enumerate(offsets) if s < end and e > start]
    if not covering:
        return None
    return covering[0], covering[-1]


def mrc_normalize(raw: Mapping, source: str = "") -> list[MrcExample]:
    """Convert a SQuAD-style document (``data -> paragraphs -> qas``) to token-level examples."""
    if "data" not in raw or not isinstance(raw["data"], list):
        raise ParseError(f"{source or 'MRC document'}: missing top-level 'data' list")
    out = []
    for article in raw["data"]:
        for para in article.get("paragraphs", ()):
            context = para["context"]
            offsets = tokenize_with_offsets(context)
            tokens = tuple(t for t, _, _ in offsets)
            for qa in para.get("qas", ()):
                qid = str(qa.get("id", f"{source}:{len(out)}"))
                answers = []
                if not qa.get("is_impossible", False):
                    for ans in qa.get("answers", ()):
                        span = _align_answer(context, offsets, ans, qid)
                        if span is not None and span not in answers:
                            answers.append(span)
                answers = _drop_overlaps(answers, qid)
                if not tokens:
                    log.warning("skipping %s: context has no tokens", qid)
                    continue
                out.append(MrcExample(qa["question"], tokens, tuple(answers), None, qid))
    return out


def _align_answer(context: str, offsets, ans: Mapping, qid: str) -> tuple[int, int] | None:
    text = ans["text"]
    start = int(ans["answer_start"])
    end = start + len(text)
    if start < 0 or end > len(context):
        raise ParseError(f"answer offset {start}..{end} outside context of length {len(context)} (example {qid})")
    if context[start:end] != text:
        raise AlignmentError(
            f"answer text {text!r} does not match context[{start}:{end}] = {context[start:end]!r}", qid
        )
    span = char_span_to_tokens(offsets, start, end)
    if span is None:
        log.warning("answer %r of %s covers no token; dropped", text, qid)
        return None
    s, e = span
    if offsets[s][1] != start or offsets[e][2] != end:
        warnings.warn(
            f"[{qid}] answer {text!r} does not fall on token boundaries; expanded to tokens {s}..{e}",
            AlignmentWarning,
            stacklevel=3,
        )
    return span


def _drop_overlaps(answers: list[tuple[int, int]], qid: str) -> list[tuple[int, int]]:
    kept: list[tuple[int, int]] = []
    for s, e in answers:
        if any(s <= ke and ks <= e for ks, ke in kept):
            log.info("dropping overlapping answer (%d,%d) of %s", s, e, qid)
            continue
        kept.append((s, e))
    return kept


# ---------------------------------------------------------------------------
# word substitution


@dataclass(frozen=True)
class WordMap:
    mapping: Mapping[str, str] = field(default_factory=dict)
    lowercase_fallback: bool = False

    @classmethod
    def load(cls, path, lowercase_fallback: bool = False) -> "WordMap":
        mapping: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 2:
                raise ParseError(f"{path}: expected 2 columns, got {len(cols)}", lineno)
            if cols[0] in mapping:
                raise ParseError(f"{path}: duplicate key {cols[0]!r}", lineno)
            mapping[cols[0]] = cols[1]
        return cls(mapping, lowercase_fallback)

    def lookup(self, token: str) -> str | None:
        hit = self.mapping.get(token)
        if hit is None and self.lowercase_fallback:
            hit = self.mapping.get(token.lower())
        return hit


def substitute_words(dataset: Iterable[TaggedSentence], word_map: WordMap) -> list[TaggedSentence]:
    out = []
    for sent in dataset:
        toks = []
        for tok in sent.tokens:
            hit = word_map.lookup(tok)
            toks.append(tok if hit is None else hit)
        out.append(TaggedSentence(tuple(toks), sent.tags, sent.id, sent.doc))
    return out
