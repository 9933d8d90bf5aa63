"""Entity-level scoring (exact type + boundary match, micro-averaged) and run aggregation."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Sequence

from .corpus import LabelSet, TaggedSentence, extract_entities, parse_conll
from .errors import ContractError, ParseError


@dataclass(frozen=True)
class PrfScore:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int

    @classmethod
    def from_counts(cls, gold: int, predicted: int, correct: int) -> "PrfScore":
        p = correct / predicted if predicted else 0.0
        r = correct / gold if gold else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, gold, predicted, correct)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "correct": self.correct,
        }

    def table(self) -> str:
        return (
            f"{'entities':>10} {'gold':>6} {'pred':>6} {'correct':>8} {'P':>7} {'R':>7} {'F1':>7}\n"
            f"{'all':>10} {self.gold:>6} {self.predicted:>6} {self.correct:>8} "
            f"{100 * self.precision:>7.2f} {100 * self.recall:>7.2f} {100 * self.f1:>7.2f}"
        )


def entity_f1(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> PrfScore:
    if len(gold) != len(pred):
        raise ContractError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    n_gold = n_pred = n_ok = 0
    for g, p in zip(gold, pred):
        if len(g) != len(p):
            raise ContractError(f"sentence {g.id!r}: {len(g)} gold tokens vs {len(p)} predicted ({p.id!r})")
        gs, ps = extract_entities(g), extract_entities(p)
        n_gold += len(gs)
        n_pred += len(ps)
        n_ok += len(gs & ps)
    return PrfScore.from_counts(n_gold, n_pred, n_ok)


def parse_paired_conll(text: str, label_set: LabelSet | None = None, source: str = "") -> tuple[list, list]:
    """Split a conlleval-style file (``token ... gold pred``) into gold and predicted sentences."""
    gold_lines, pred_lines = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cols = line.split()
        if cols and cols[0] != "-DOCSTART-" and len(cols) < 3:
            raise ParseError(f"expected token, gold and predicted columns, got {len(cols)}", lineno)
        gold_lines.append(" ".join(cols[:-1]))
        pred_lines.append(" ".join(cols[:1] + cols[-1:]))
    gold = parse_conll("\n".join(gold_lines), label_set, source)
    pred = parse_conll("\n".join(pred_lines), label_set, source)
    return gold, pred


@dataclass(frozen=True)
class RunAggregate:
    mean: float
    std: float
    n: int

    @property
    def single_run(self) -> bool:
        return self.n == 1

    def format(self, scale: float = 100.0, digits: int = 2) -> str:
        """``80.35 (± 0.29)``-style rendering."""
        s = f"{self.mean * scale:.{digits}f} (± {self.std * scale:.{digits}f})"
        return s + " [single run]" if self.single_run else s


def aggregate_runs(scores: Sequence[PrfScore | float], digits: int = 4) -> RunAggregate:
    """Mean and sample standard deviation of F1 across runs, rounded to ``digits``."""
    if not scores:
        raise ContractError("aggregate_runs needs at least one score")
    f1s = [s.f1 if isinstance(s, PrfScore) else float(s) for s in scores]
    mean = statistics.fmean(f1s)
    std = statistics.stdev(f1s) if len(f1s) > 1 else 0.0
    if not math.isfinite(mean):
        raise ContractError("non-finite F1 in aggregate")
    return RunAggregate(round(mean, digits), round(std, digits), len(f1s))
