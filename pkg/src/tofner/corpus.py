"""NER / MRC data model: CoNLL parsing, BIO validation, span extraction and the corpus registry."""

from __future__ import annotations

import enum
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import BioError, ConfigError, LabelingError, ParseError

OUTSIDE = "O"
DOCSTART = "-DOCSTART-"

Span = tuple[str, int, int]


@dataclass(frozen=True)
class LabelSet:
    """Ordered entity types under the BIO scheme.

    ``collapse_to`` maps every incoming entity type onto one pseudo-type,
    which is how span detection (a single ``SPAN`` type) is expressed.
    """

    types: tuple[str, ...] = ("PER", "LOC", "ORG", "MISC")
    collapse_to: str | None = None

    def __post_init__(self):
        if not self.types:
            raise ConfigError("label set needs at least one entity type")
        if len(set(self.types)) != len(self.types):
            raise ConfigError(f"duplicate entity types in {self.types}")
        if self.collapse_to is not None and self.types != (self.collapse_to,):
            raise ConfigError("a collapsing label set must contain exactly the collapse type")

    @classmethod
    def default(cls) -> "LabelSet":
        return cls()

    @classmethod
    def span(cls) -> "LabelSet":
        return cls(types=("SPAN",), collapse_to="SPAN")

    @classmethod
    def named(cls, name: str) -> "LabelSet":
        if name == "default":
            return cls.default()
        if name == "span":
            return cls.span()
        raise ConfigError(f"unknown label set {name!r} (expected 'default' or 'span')")

    @property
    def tags(self) -> tuple[str, ...]:
        out = [OUTSIDE]
        for t in self.types:
            out += [f"B-{t}", f"I-{t}"]
        return tuple(out)

    @property
    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tags)}

    def map_type(self, etype: str) -> str:
        if self.collapse_to is not None:
            return self.collapse_to
        if etype not in self.types:
            raise LabelingError(f"entity type {etype!r} not in label set {list(self.types)}")
        return etype


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    id: str = ""
    doc: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if not self.tokens:
            raise ValueError(f"sentence {self.id!r} has no tokens")
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"sentence {self.id!r}: {len(self.tokens)} tokens but {len(self.tags)} tags"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    def with_tags(self, tags: Sequence[str]) -> "TaggedSentence":
        return TaggedSentence(self.tokens, tuple(tags), self.id, self.doc)

    def to_record(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "tags": list(self.tags)}

    @classmethod
    def from_record(cls, rec: Mapping) -> "TaggedSentence":
        return cls(tuple(rec["tokens"]), tuple(rec["tags"]), str(rec.get("id", "")))


@dataclass(frozen=True)
class MrcExample:
    query: str
    context: tuple[str, ...]
    answers: tuple[tuple[int, int], ...] = ()
    entity_type: str | None = None
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))
        answers = tuple(sorted({(int(s), int(e)) for s, e in self.answers}))
        object.__setattr__(self, "answers", answers)
        n = len(self.context)
        for s, e in answers:
            if not 0 <= s <= e < n:
                raise ValueError(f"example {self.id!r}: answer ({s},{e}) outside context of {n} tokens")
        for (_, e1), (s2, _) in zip(answers, answers[1:]):
            if s2 <= e1:
                raise ValueError(f"example {self.id!r}: overlapping answers {answers}")

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "query": self.query,
            "context": list(self.context),
            "answers": [list(a) for a in self.answers],
        }
        if self.entity_type is not None:
            rec["entity_type"] = self.entity_type
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "MrcExample":
        return cls(
            rec["query"],
            tuple(rec["context"]),
            tuple(tuple(a) for a in rec.get("answers", ())),
            rec.get("entity_type"),
            str(rec.get("id", "")),
        )


# ---------------------------------------------------------------------------
# BIO helpers


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, sep, etype = tag.partition("-")
    if not sep or prefix not in ("B", "I") or not etype:
        raise LabelingError(f"unrecognised tag {tag!r}")
    return prefix, etype


@dataclass(frozen=True)
class BioVerdict:
    valid: bool
    index: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


def validate_bio(tags: Sequence[str], label_set: LabelSet | None = None) -> BioVerdict:
    """Check strict BIO validity; ``index`` is the first offending position."""
    allowed = set(label_set.tags) if label_set is not None else None
    prev_type = None
    for i, tag in enumerate(tags):
        if allowed is not None and tag not in allowed:
            return BioVerdict(False, i, f"tag {tag!r} not in label set")
        try:
            prefix, etype = _split_tag(tag)
        except LabelingError as exc:
            return BioVerdict(False, i, str(exc))
        if prefix == "I" and prev_type != etype:
            if prev_type is None:
                return BioVerdict(False, i, f"{tag} without a preceding B-{etype}")
            return BioVerdict(False, i, f"{tag} continues a {prev_type} span")
        prev_type = etype
    return BioVerdict(True)


def spans_from_tags(tags: Sequence[str]) -> set[Span]:
    verdict = validate_bio(tags)
    if not verdict:
        raise BioError(f"invalid BIO at index {verdict.index}: {verdict.reason}")
    spans: set[Span] = set()
    start = etype = None
    for i, tag in enumerate(tags):
        prefix, t = _split_tag(tag)
        if prefix != "I" and start is not None:
            spans.add((etype, start, i - 1))
            start = None
        if prefix == "B":
            start, etype = i, t
    if start is not None:
        spans.add((etype, start, len(tags) - 1))
    return spans


def extract_entities(sentence: TaggedSentence) -> set[Span]:
    """Maximal B-then-I runs as ``(type, start, end)`` with inclusive ends."""
    try:
        return spans_from_tags(sentence.tags)
    except BioError as exc:
        raise BioError(f"sentence {sentence.id!r}: {exc}") from None


def spans_to_bio(spans: Iterable[Span], length: int) -> tuple[str, ...]:
    tags = [OUTSIDE] * length
    for etype, s, e in sorted(spans, key=lambda x: (x[1], x[2])):
        if not 0 <= s <= e < length:
            raise BioError(f"span ({etype},{s},{e}) outside sequence of length {length}")
        if any(t != OUTSIDE for t in tags[s : e + 1]):
            raise BioError(f"span ({etype},{s},{e}) overlaps another span")
        tags[s] = f"B-{etype}"
        for j in range(s + 1, e + 1):
            tags[j] = f"I-{etype}"
    return tuple(tags)


def normalize_tags(tags: Sequence[str], label_set: LabelSet) -> tuple[str, ...]:
    """Map types through the label set and rewrite IOB1-style openings to BIO2."""
    out = []
    prev_type = None
    for tag in tags:
        prefix, etype = _split_tag(tag)
        if prefix == OUTSIDE:
            out.append(OUTSIDE)
            prev_type = None
            continue
        etype = label_set.map_type(etype)
        if prefix == "I" and prev_type != etype:
            prefix = "B"
        out.append(f"{prefix}-{etype}")
        prev_type = etype
    return tuple(out)


# ---------------------------------------------------------------------------
# CoNLL


def parse_conll(text: str, label_set: LabelSet | None = None, source: str = "") -> list[TaggedSentence]:
    """Parse column-formatted text (token first, tag last, blank-line separated).

    ``-DOCSTART-`` lines are dropped; the document ordinal they delimit is kept
    on each sentence as ``doc``. Missing ids become ``{source}:{ordinal}``.
    """
    label_set = label_set or LabelSet.default()
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    raw_tags: list[str] = []
    ncols = None
    doc = 0
    start_line = 0

    def flush():
        nonlocal tokens, raw_tags
        if tokens:
            try:
                tags = normalize_tags(raw_tags, label_set)
            except LabelingError as exc:
                raise LabelingError(f"{source or '<text>'} sentence at line {start_line}: {exc}") from None
            sid = f"{source}:{len(sentences)}"
            sentences.append(TaggedSentence(tuple(tokens), tags, sid, doc))
        tokens, raw_tags = [], []

    for lineno, line in enumerate(text.splitlines(), start=1):
        cols = line.split()
        if not cols:
            flush()
            continue
        if cols[0] == DOCSTART:
            flush()
            doc += 1
            continue
        if len(cols) < 2:
            raise ParseError(f"expected at least 2 columns, got {len(cols)}: {line!r}", lineno)
        if ncols is None:
            ncols = len(cols)
        elif len(cols) != ncols:
            raise ParseError(f"expected {ncols} columns, got {len(cols)}: {line!r}", lineno)
        if not tokens:
            start_line = lineno
        tokens.append(cols[0])
        raw_tags.append(cols[-1])
    flush()
    return sentences


def read_conll(path: str | os.PathLike, label_set: LabelSet | None = None) -> list[TaggedSentence]:
    path = Path(path)
    return parse_conll(path.read_text(encoding="utf-8"), label_set, source=path.stem)


def serialize_conll(sentences: Iterable[TaggedSentence], extra: Sequence[Sequence[str]] | None = None) -> str:
    """Render sentences as ``token tag`` lines; ``extra`` adds a trailing column per sentence."""
    lines = []
    for k, sent in enumerate(sentences):
        for i, (tok, tag) in enumerate(zip(sent.tokens, sent.tags)):
            row = [tok, tag]
            if extra is not None:
                row.append(extra[k][i])
            lines.append(" ".join(row))
        lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# line-JSON


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(items: Iterable[TaggedSentence | MrcExample]) -> str:
    return "".join(json.dumps(it.to_record(), ensure_ascii=False) + "\n" for it in items)


def write_jsonl(path: str | os.PathLike, items: Iterable[TaggedSentence | MrcExample]) -> None:
    atomic_write_text(path, dumps_jsonl(items))


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})", lineno) from None


def read_jsonl(path: str | os.PathLike) -> list[TaggedSentence] | list[MrcExample]:
    """Load internal line-JSON, dispatching on record shape."""
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            if "query" in rec:
                out.append(MrcExample.from_record(rec))
            else:
                out.append(TaggedSentence.from_record(rec))
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{path}: bad record ({exc})", lineno) from None
    return out


# ---------------------------------------------------------------------------
# labels and statistics


def strip_labels(dataset: Iterable[TaggedSentence]) -> tuple[TaggedSentence, ...]:
    return tuple(s.with_tags((OUTSIDE,) * len(s)) for s in dataset)


def corpus_stats(dataset: Sequence[TaggedSentence]) -> dict:
    per_type: Counter = Counter()
    for s in dataset:
        per_type.update(t for t, _, _ in extract_entities(s))
    return {
        "sentences": len(dataset),
        "tokens": sum(len(s) for s in dataset),
        "entities": sum(per_type.values()),
        "per_type": dict(sorted(per_type.items())),
    }


# ---------------------------------------------------------------------------
# registry


class CorpusRole(str, enum.Enum):
    T_NER_UNLABELED = "t_ner_unlabeled"
    S_NER_UNLABELED = "s_ner_unlabeled"
    T_MRC = "t_mrc"
    S_MRC = "s_mrc"
    S_NER = "s_ner"
    S_NER_AS_MRC = "s_ner_as_mrc"
    T_NER_PSEUDO = "t_ner_pseudo"
    T_MRC_PSEUDO = "t_mrc_pseudo"
    # substitute_words copies of source data (translation slot)
    S_NER_UNLABELED_TRANSLATED = "s_ner_unlabeled_translated"
    S_NER_TRANSLATED = "s_ner_translated"

    @property
    def is_unlabeled(self) -> bool:
        return self in (CorpusRole.T_NER_UNLABELED, CorpusRole.S_NER_UNLABELED, CorpusRole.S_NER_UNLABELED_TRANSLATED)

    @property
    def is_mrc(self) -> bool:
        return self in (CorpusRole.T_MRC, CorpusRole.S_MRC, CorpusRole.S_NER_AS_MRC, CorpusRole.T_MRC_PSEUDO)


INPUT_ROLES = (
    CorpusRole.T_NER_UNLABELED,
    CorpusRole.S_NER_UNLABELED,
    CorpusRole.T_MRC,
    CorpusRole.S_MRC,
    CorpusRole.S_NER,
)


@dataclass
class CorpusRegistry:
    """Datasets keyed by role. Stored datasets are tuples of frozen records."""

    label_set: LabelSet = field(default_factory=LabelSet.default)
    _data: dict[CorpusRole, tuple] = field(default_factory=dict)

    def register(self, role: CorpusRole | str, dataset: Iterable) -> None:
        role = CorpusRole(role)
        if role is CorpusRole.S_NER_AS_MRC:
            raise ConfigError("s_ner_as_mrc is derived from s_ner; call derive_ner_as_mrc()")
        self._put(role, tuple(dataset))

    def _put(self, role: CorpusRole, data: tuple) -> None:
        want = MrcExample if role.is_mrc else TaggedSentence
        for item in data:
            if not isinstance(item, want):
                raise ConfigError(f"role {role.value} expects {want.__name__}, got {type(item).__name__}")
        if role.is_unlabeled:
            for s in data:
                if any(t != OUTSIDE for t in s.tags):
                    raise ConfigError(
                        f"role {role.value} must be unlabeled; sentence {s.id!r} carries tags (use strip_labels)"
                    )
        elif not role.is_mrc:
            for s in data:
                verdict = validate_bio(s.tags, self.label_set)
                if not verdict:
                    raise ConfigError(f"role {role.value}, sentence {s.id!r}: {verdict.reason} at {verdict.index}")
        self._data[role] = data

    def derive_ner_as_mrc(self, templates) -> tuple[MrcExample, ...]:
        from .convert import ner_to_mrc

        derived = tuple(ner_to_mrc(self.get(CorpusRole.S_NER), templates, self.label_set))
        self._data[CorpusRole.S_NER_AS_MRC] = derived
        return derived

    def set_generated(self, role: CorpusRole, dataset: Iterable) -> None:
        if role not in (CorpusRole.T_NER_PSEUDO, CorpusRole.T_MRC_PSEUDO):
            raise ConfigError(f"{role.value} is not a generated role")
        self._put(role, tuple(dataset))

    def get(self, role: CorpusRole | str) -> tuple:
        role = CorpusRole(role)
        if role not in self._data:
            raise ConfigError(f"corpus role {role.value} is not populated")
        return self._data[role]

    def has(self, role: CorpusRole | str) -> bool:
        return CorpusRole(role) in self._data and len(self._data[CorpusRole(role)]) > 0

    def roles(self) -> list[CorpusRole]:
        return [r for r in CorpusRole if r in self._data]

    def sizes(self) -> dict[str, int]:
        return {r.value: len(self._data[r]) for r in self.roles()}
