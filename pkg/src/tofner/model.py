"""Task heads (MLM / MRC / NER) on top of the encoder, plus training and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import math
import os
import re
import tempfile
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .convert import tokenize_with_offsets
from .corpus import MrcExample, TaggedSentence
from .encoder import (
    CLS,
    SEP,
    Batch,
    EncoderConfig,
    Vocabulary,
    encoder_backward,
    encoder_forward,
    init_encoder,
    featurize,
    make_batch,
    pad_batch,
)
from .errors import ContractError, ResumeError, TrainingError
from .masking import MaskedInstance

log = logging.getLogger(__name__)

HEAD_KINDS = ("mlm", "mrc", "ner")
DEFAULT_BATCH_SIZE = {"mlm": 32, "mrc": 16, "ner": 64}
MAX_MRC_LEN = 384

THETA_0 = "theta_0"
THETA_MLM = "theta_mlm"
THETA_MRC = "theta_mrc"
THETA_NER = "theta_ner"


def theta_ner_i(i: int) -> str:
    return f"theta_ner^({i})"


def theta_mrc_i(i: int) -> str:
    return f"theta_mrc^({i})"


_ITER_TAG = re.compile(r"^theta_(ner|mrc)\^\((\d+)\)$")


def allowed_handoff(src: str, dst: str) -> bool:
    """Initialisation edges of the staged schedule (baseline adds theta_mlm -> theta_ner)."""
    fixed = {
        (THETA_0, THETA_MLM),
        (THETA_MLM, THETA_MRC),
        (THETA_MRC, THETA_NER),
        (THETA_MLM, THETA_NER),
        (THETA_NER, theta_ner_i(0)),
    }
    if (src, dst) in fixed:
        return True
    s, d = _ITER_TAG.match(src), _ITER_TAG.match(dst)
    if s and d:
        si, di = int(s.group(2)), int(d.group(2))
        if s.group(1) == "ner" and d.group(1) == "mrc":
            return di == si + 1
        if s.group(1) == "mrc" and d.group(1) == "ner":
            return di == si
    return False


@dataclass
class ModelState:
    """Encoder parameters plus whichever heads have been attached.

    Head parameters live in the same flat dict under ``ner.*``, ``mrc.*`` and
    ``mlm.*`` so that a handoff copies everything.
    """

    params: dict[str, np.ndarray]
    vocab: Vocabulary
    labels: tuple[str, ...]
    config: EncoderConfig = field(default_factory=EncoderConfig)
    stage: str = THETA_0

    @classmethod
    def fresh(cls, vocab: Vocabulary, labels: Sequence[str], config: EncoderConfig | None = None, seed: int = 0):
        config = config or EncoderConfig()
        params = init_encoder(config, len(vocab), np.random.default_rng(seed))
        return cls(params, vocab, tuple(labels), config, THETA_0)

    @property
    def dim(self) -> int:
        return self.config.dim

    def has_head(self, kind: str) -> bool:
        return any(k.startswith(kind + ".") for k in self.params)

    def attach_head(self, kind: str, rng: np.random.Generator) -> None:
        if kind not in HEAD_KINDS:
            raise ContractError(f"unknown head kind {kind!r}")
        if self.has_head(kind):
            return
        d = self.dim
        if kind == "ner":
            self.params["ner.W"] = rng.normal(0, 0.02, (d, len(self.labels)))
            self.params["ner.b"] = np.zeros(len(self.labels))
        elif kind == "mrc":
            self.params["mrc.W_start"] = rng.normal(0, 0.02, (d, 2))
            self.params["mrc.W_end"] = rng.normal(0, 0.02, (d, 2))
        else:
            # logits tie to the input token embeddings; only the bias is head-owned
            self.params["mlm.bias"] = np.zeros(len(self.vocab))

    def copy(self, stage: str | None = None) -> "ModelState":
        return replace(self, params={k: v.copy() for k, v in self.params.items()}, stage=stage or self.stage)

    def handoff(self, stage: str) -> "ModelState":
        if not allowed_handoff(self.stage, stage):
            raise ContractError(f"illegal parameter handoff {self.stage} -> {stage}")
        return self.copy(stage)


# ---------------------------------------------------------------------------
# input assembly


@dataclass
class _Encoded:
    seq: list[str]
    segs: list[int]
    pos: np.ndarray  # positions in seq that carry targets
    targets: np.ndarray | None  # ner: label ids; mlm: vocab ids
    start: np.ndarray | None = None  # mrc flags
    end: np.ndarray | None = None
    feats: tuple | None = None  # cached (ids, shapes, segs)

    def features(self, vocab: Vocabulary) -> tuple:
        if self.feats is None:
            ids, shapes = featurize(vocab, self.seq)
            self.feats = (ids, shapes, np.asarray(self.segs, dtype=np.int64))
        return self.feats


def _ner_input(state: ModelState, sent: TaggedSentence | Sequence[str], with_targets: bool = True) -> _Encoded:
    tokens = sent.tokens if isinstance(sent, TaggedSentence) else tuple(sent)
    if not tokens:
        raise ContractError("cannot encode an empty token sequence")
    targets = None
    if with_targets and isinstance(sent, TaggedSentence):
        idx = {t: i for i, t in enumerate(state.labels)}
        try:
            targets = np.array([idx[t] for t in sent.tags], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"sentence {sent.id!r}: tag {exc.args[0]!r} not in model labels") from None
    seq = [CLS, *tokens, SEP]
    return _Encoded(seq, [0] * len(seq), np.arange(1, len(tokens) + 1), targets)


def query_tokens(query: str) -> list[str]:
    return [t for t, _, _ in tokenize_with_offsets(query)]


def _mrc_input(ex: MrcExample) -> _Encoded:
    q = query_tokens(ex.query)
    room = MAX_MRC_LEN - len(q) - 3
    ctx = list(ex.context[: max(room, 1)])
    n = len(ctx)
    start = np.zeros(n, dtype=np.int64)
    end = np.zeros(n, dtype=np.int64)
    for s, e in ex.answers:
        if not 0 <= s <= e < len(ex.context):
            raise ContractError(f"example {ex.id!r}: answer ({s},{e}) outside context")
        if e < n:
            start[s] = 1
            end[e] = 1
    seq = [CLS, *q, SEP, *ctx, SEP]
    segs = [0] * (len(q) + 2) + [1] * (n + 1)
    return _Encoded(seq, segs, np.arange(len(q) + 2, len(q) + 2 + n), None, start, end)


def _mlm_input(state: ModelState, inst: MaskedInstance) -> _Encoded:
    seq = [CLS, *inst.tokens, SEP]
    pos = np.array([p + 1 for p, _ in inst.targets], dtype=np.int64)
    targets = np.array(state.vocab.ids([t for _, t in inst.targets]), dtype=np.int64)
    return _Encoded(seq, [0] * len(seq), pos, targets)


def encode_items(state: ModelState, kind: str, items: Sequence) -> list[_Encoded]:
    if kind == "ner":
        return [_ner_input(state, it) for it in items]
    if kind == "mrc":
        return [_mrc_input(it) for it in items]
    if kind == "mlm":
        return [_mlm_input(state, it) for it in items]
    raise ContractError(f"unknown head kind {kind!r}")


def _gather(encs: Sequence[_Encoded]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.concatenate([np.full(len(e.pos), b, dtype=np.int64) for b, e in enumerate(encs)])
    cols = np.concatenate([e.pos for e in encs]).astype(np.int64)
    return rows, cols


# ---------------------------------------------------------------------------
# batched losses with gradients


def batch_loss(state: ModelState, kind: str, encs: Sequence[_Encoded], grads: dict | None = None) -> float:
    """Mean-per-position loss of one batch; fills ``grads`` when given."""
    batch = pad_batch([e.features(state.vocab) for e in encs])
    need = grads is not None
    h, cache = encoder_forward(state.params, state.config, batch, keep_cache=need)
    rows, cols = _gather(encs)
    hs = h[rows, cols]
    P = state.params
    if kind == "ner":
        t = np.concatenate([e.targets for e in encs])
        w = np.full(len(t), 1.0 / len(t))
        _, loss, dlog = K.softmax_xent(hs @ P["ner.W"] + P["ner.b"], t, w)
        if need:
            _acc(grads, "ner.W", hs.T @ dlog)
            _acc(grads, "ner.b", dlog.sum(0))
            dhs = dlog @ P["ner.W"].T
    elif kind == "mrc":
        ts = np.concatenate([e.start for e in encs])
        te = np.concatenate([e.end for e in encs])
        w = np.full(len(ts), 1.0 / len(ts))
        _, ls, ds = K.softmax_xent(hs @ P["mrc.W_start"], ts, w)
        _, le, de = K.softmax_xent(hs @ P["mrc.W_end"], te, w)
        loss = ls + le
        if need:
            _acc(grads, "mrc.W_start", hs.T @ ds)
            _acc(grads, "mrc.W_end", hs.T @ de)
            dhs = ds @ P["mrc.W_start"].T + de @ P["mrc.W_end"].T
    elif kind == "mlm":
        t = np.concatenate([e.targets for e in encs])
        w = np.full(len(t), 1.0 / len(t))
        E = P["enc.tok"]
        _, loss, dlog = K.softmax_xent(hs @ E.T + P["mlm.bias"], t, w)
        if need:
            _acc(grads, "mlm.bias", dlog.sum(0))
            _acc(grads, "enc.tok", dlog.T @ hs)
            dhs = dlog @ E
    else:
        raise ContractError(f"unknown head kind {kind!r}")
    if need:
        dh = np.zeros_like(h)
        dh[rows, cols] = dhs
        encoder_backward(P, state.config, batch, cache, dh, grads)
    return loss


def _acc(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def loss_and_grads(state: ModelState, kind: str, items: Sequence) -> tuple[float, dict[str, np.ndarray]]:
    grads: dict[str, np.ndarray] = {}
    loss = batch_loss(state, kind, encode_items(state, kind, items), grads)
    return loss, grads


# ---------------------------------------------------------------------------
# single-example forward passes and pure losses


def encode(state: ModelState, tokens: Sequence[str]) -> np.ndarray:
    """Contextual embedding per input token, shape ``(len(tokens), d)``."""
    enc = _ner_input(state, tokens, with_targets=False)
    h, _ = encoder_forward(state.params, state.config, make_batch(state.vocab, [enc.seq]))
    return h[0, enc.pos]


def ner_forward(state: ModelState, tokens: Sequence[str]) -> np.ndarray:
    h = encode(state, tokens)
    return K.softmax(h @ state.params["ner.W"] + state.params["ner.b"])


def ner_forward_batch(state: ModelState, sentences: Sequence, batch_size: int = 64) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    W, b = state.params["ner.W"], state.params["ner.b"]
    for i in range(0, len(sentences), batch_size):
        encs = [_ner_input(state, s, with_targets=False) for s in sentences[i : i + batch_size]]
        batch = make_batch(state.vocab, [e.seq for e in encs])
        h, _ = encoder_forward(state.params, state.config, batch)
        for bi, e in enumerate(encs):
            out.append(K.softmax(h[bi, e.pos] @ W + b))
    return out


def ner_loss(probs: np.ndarray, gold: Sequence[str], labels: Sequence[str]) -> float:
    """Mean over tokens of ``-log p(gold tag)``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] != len(gold):
        raise ContractError(f"{probs.shape[0]} probability rows but {len(gold)} gold tags")
    idx = {t: i for i, t in enumerate(labels)}
    t = np.array([idx[g] for g in gold])
    return float(-np.mean(np.log(probs[np.arange(len(t)), t])))


def mrc_forward(state: ModelState, example: MrcExample) -> tuple[np.ndarray, np.ndarray]:
    """Per-context-token 2-way start and end distributions."""
    enc = _mrc_input(example)
    h, _ = encoder_forward(state.params, state.config, make_batch(state.vocab, [enc.seq], [enc.segs]))
    hs = h[0, enc.pos]
    return K.softmax(hs @ state.params["mrc.W_start"]), K.softmax(hs @ state.params["mrc.W_end"])


def mrc_loss(p_start: np.ndarray, p_end: np.ndarray, answers: Sequence[tuple[int, int]]) -> float:
    """Mean token-level cross-entropy of start flags plus that of end flags."""
    n = p_start.shape[0]
    ts = np.zeros(n, dtype=np.int64)
    te = np.zeros(n, dtype=np.int64)
    for s, e in answers:
        if not 0 <= s <= e < n:
            raise ContractError(f"answer ({s},{e}) outside context of {n} tokens")
        ts[s] = 1
        te[e] = 1
    r = np.arange(n)
    return float(-np.mean(np.log(p_start[r, ts])) - np.mean(np.log(p_end[r, te])))


# ---------------------------------------------------------------------------
# decoding


def ner_decode(probs: np.ndarray, labels: Sequence[str]) -> tuple[str, ...]:
    """Per-token argmax followed by the BIO repair pass (stray ``I-T`` becomes ``B-T``).

    ``labels`` must be laid out as ``O, B-T1, I-T1, B-T2, ...``.
    """
    ids = np.argmax(np.asarray(probs), axis=1)
    fixed = K.bio_repair(ids)
    return tuple(labels[i] for i in fixed)


def mrc_decode(
    p_start: np.ndarray, p_end: np.ndarray, threshold: float = 0.5, max_span_len: int = 30
) -> set[tuple[int, int]]:
    """Greedy non-overlapping spans; accepts 2-way tables or positive-class vectors."""
    ps = np.asarray(p_start, dtype=np.float64)
    pe = np.asarray(p_end, dtype=np.float64)
    if ps.ndim == 2:
        ps = ps[:, 1]
    if pe.ndim == 2:
        pe = pe[:, 1]
    spans = K.mrc_greedy(ps, pe, threshold, max_span_len)
    return {(int(s), int(e)) for s, e in spans}


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class StageParams:
    lr: float = 1e-3
    batch_size: int | None = None
    epochs: int = 1
    seed: int = 2019

    def batch_for(self, kind: str) -> int:
        return self.batch_size or DEFAULT_BATCH_SIZE[kind]

    def to_dict(self) -> dict:
        return {"lr": self.lr, "batch_size": self.batch_size, "epochs": self.epochs, "seed": self.seed}


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip(grads: dict, max_norm: float) -> None:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        f = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= f


def train_stage(
    state: ModelState,
    kind: str,
    dataset: Sequence,
    hp: StageParams | None = None,
    *,
    produce: str | None = None,
    clip_norm: float = 1.0,
) -> tuple[ModelState, list[float]]:
    """Fine-tune a copy of ``state`` on one task; returns it with the per-epoch mean loss.

    Shuffling, head initialisation and batching derive only from ``hp.seed``,
    so identical inputs give bit-identical parameters.
    """
    hp = hp or StageParams()
    if not dataset:
        raise ContractError(f"{kind} stage needs a non-empty dataset")
    new = state.handoff(produce) if produce is not None else state.copy()
    rng = np.random.default_rng(hp.seed)
    new.attach_head(kind, rng)
    encs = encode_items(new, kind, dataset)
    if kind == "mrc":
        encs = [e for e in encs if len(e.pos)]
    bs = hp.batch_for(kind)
    opt = Adam(hp.lr)
    curve: list[float] = []
    step = 0
    for epoch in range(hp.epochs):
        order = rng.permutation(len(encs))
        losses = []
        for i in range(0, len(order), bs):
            chunk = [encs[j] for j in order[i : i + bs]]
            grads: dict[str, np.ndarray] = {}
            loss = batch_loss(new, kind, chunk, grads)
            step += 1
            if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingError(f"non-finite {kind} loss in epoch {epoch + 1}", step)
            if clip_norm:
                _clip(grads, clip_norm)
            opt.step(new.params, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
        log.debug("%s epoch %d/%d loss %.4f", kind, epoch + 1, hp.epochs, curve[-1])
    return new, curve


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: ModelState, path: str | os.PathLike, hyperparams: dict | None = None) -> None:
    """Write an ``.npz`` holding every tensor plus a JSON ``__meta__`` entry, atomically."""
    meta = {
        "format": "tofner-checkpoint/1",
        "stage": state.stage,
        "labels": list(state.labels),
        "encoder": state.config.to_dict(),
        "vocab": state.vocab.tokens,
        "vocab_hash": state.vocab.hash,
        "hyperparams": hyperparams or {},
    }
    buf = io.BytesIO()
    arrays = {k: state.params[k] for k in sorted(state.params)}
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.getvalue())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expect_vocab_hash: str | None = None) -> tuple[ModelState, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            params = {k: z[k].copy() for k in z.files if k != "__meta__"}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise ResumeError(f"unreadable checkpoint {path}: {exc}") from None
    vocab = Vocabulary(meta["vocab"])
    if vocab.hash != meta["vocab_hash"]:
        raise ResumeError(f"checkpoint {path}: vocabulary does not match its recorded hash")
    if expect_vocab_hash is not None and vocab.hash != expect_vocab_hash:
        raise ResumeError(f"checkpoint {path}: vocabulary hash {vocab.hash[:12]} != expected {expect_vocab_hash[:12]}")
    state = ModelState(params, vocab, tuple(meta["labels"]), EncoderConfig(**meta["encoder"]), meta["stage"])
    return state, meta
