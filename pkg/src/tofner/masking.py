"""Static MLM masking and the mixed target/source MLM corpus."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import TaggedSentence
from .errors import ConfigError, ContractError

MASK = "[MASK]"
SPECIAL_TOKENS = frozenset({"[PAD]", "[UNK]", "[CLS]", "[SEP]", MASK, "-DOCSTART-"})


@dataclass(frozen=True)
class MaskPolicy:
    mask: float = 0.8
    random: float = 0.1
    keep: float = 0.1

    def __post_init__(self):
        parts = (self.mask, self.random, self.keep)
        if min(parts) < 0 or not math.isclose(sum(parts), 1.0, abs_tol=1e-9):
            raise ConfigError(f"mask/random/keep split must be non-negative and sum to 1, got {parts}")


@dataclass(frozen=True)
class MaskedInstance:
    tokens: tuple[str, ...]
    targets: tuple[tuple[int, str], ...]
    sentence_id: str
    variant: int

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(p for p, _ in self.targets)


def n_selected(n_eligible: int, rate: float) -> int:
    # half-up rounding so equal inputs always round the same way
    return max(1, int(math.floor(rate * n_eligible + 0.5)))


def generate_maskings(
    sentence: TaggedSentence,
    k: int = 10,
    rate: float = 0.15,
    policy: MaskPolicy = MaskPolicy(),
    rng_seed: int = 0,
    vocab: Sequence[str] | None = None,
) -> list[MaskedInstance]:
    """Materialise ``k`` masked variants of one sentence.

    Random replacements are drawn from ``vocab`` (the sentence's own tokens
    when not given). Special markers are never selected.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if not 0.0 < rate < 1.0:
        raise ContractError(f"masking rate must lie in (0, 1), got {rate}")
    if len(sentence.tokens) == 0:
        raise ContractError("cannot mask an empty sentence")
    eligible = np.array([i for i, t in enumerate(sentence.tokens) if t not in SPECIAL_TOKENS], dtype=np.int64)
    if eligible.size == 0:
        raise ContractError(f"sentence {sentence.id!r} has no maskable tokens")
    pool = [t for t in (vocab if vocab is not None else sentence.tokens) if t not in SPECIAL_TOKENS]
    count = n_selected(eligible.size, rate)
    rng = np.random.default_rng(rng_seed)
    out = []
    for variant in range(k):
        chosen = np.sort(rng.choice(eligible, size=count, replace=False))
        action = rng.random(count)
        repl = rng.integers(0, len(pool), size=count)
        toks = list(sentence.tokens)
        for j, pos in enumerate(chosen):
            if action[j] < policy.mask:
                toks[pos] = MASK
            elif action[j] < policy.mask + policy.random:
                toks[pos] = pool[repl[j]]
        targets = tuple((int(p), sentence.tokens[p]) for p in chosen)
        out.append(MaskedInstance(tuple(toks), targets, sentence.id, variant))
    return out


def mask_corpus(
    sentences: Sequence[TaggedSentence],
    k: int = 10,
    rate: float = 0.15,
    policy: MaskPolicy = MaskPolicy(),
    seed: int = 0,
    vocab: Sequence[str] | None = None,
) -> list[MaskedInstance]:
    """Mask every sentence with seed ``seed ^ ordinal`` so the result is order-independent."""
    if vocab is None:
        vocab = sorted({t for s in sentences for t in s.tokens})
    out = []
    for ordinal, sent in enumerate(sentences):
        out.extend(generate_maskings(sent, k, rate, policy, seed ^ ordinal, vocab))
    return out


def build_mlm_corpus(
    target_unlabeled: Sequence[TaggedSentence],
    source_unlabeled: Sequence[TaggedSentence],
    rng_seed: int = 0,
) -> list[TaggedSentence]:
    """All target sentences plus an equal-sized (never oversampled) source sample, shuffled."""
    if not target_unlabeled:
        raise ConfigError("MLM corpus needs unlabeled target sentences")
    rng = np.random.default_rng(rng_seed)
    n_src = min(len(source_unlabeled), len(target_unlabeled))
    picked = rng.choice(len(source_unlabeled), size=n_src, replace=False) if n_src else []
    mixed = list(target_unlabeled) + [source_unlabeled[i] for i in sorted(picked)]
    order = rng.permutation(len(mixed))
    return [mixed[i] for i in order]
