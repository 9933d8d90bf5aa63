"""Small trainable encoder used for desk-scale runs.

Word-level vocabulary, so each input token maps to exactly one vector (no
subword re-alignment is needed). Each layer applies, pre-norm with residuals:

    local mixing   x += tanh(sum_k shift_k(LN x) W_k + b),  k in {-2, -1, +1, +2}
    self-attention x += softmax(q k^T / sqrt(d)) v Wo      (single head)
    feed-forward   x += relu(LN x W1 + b1) W2 + b2

followed by a final layer norm. Input = token + shape + segment embeddings
plus fixed sinusoidal positions. Forward and backward are plain numpy; the
backward pass is written by hand and checked against finite differences in
the tests.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)

N_SHAPES = 6
_PUNCT = re.compile(r"^\W+$", re.UNICODE)
LN_EPS = 1e-5
# keeps positions from swamping the 0.1-scale token embeddings at init
POS_SCALE = 0.1
NEG_INF = -1e9
CONV_OFFSETS = (-2, -1, 1, 2)


def token_shape(tok: str) -> int:
    """0 special, 1 lower, 2 Capitalised, 3 UPPER, 4 has digit, 5 punctuation/other."""
    if tok in SPECIALS:
        return 0
    if any(c.isdigit() for c in tok):
        return 4
    if _PUNCT.match(tok):
        return 5
    if tok.isupper() and len(tok) > 1:
        return 3
    if tok[:1].isupper():
        return 2
    if tok.islower():
        return 1
    return 5


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, sequences: Iterable[Iterable[str]]) -> "Vocabulary":
        seen = set()
        for seq in sequences:
            seen.update(seq)
        seen.difference_update(SPECIALS)
        return cls(list(SPECIALS) + sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    layers: int = 2
    ffn_dim: int = 128

    def to_dict(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "ffn_dim": self.ffn_dim}


def init_encoder(cfg: EncoderConfig, vocab_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, h = cfg.dim, cfg.ffn_dim
    std = 0.02
    lin = 1.0 / np.sqrt(d)
    p = {
        "enc.tok": rng.normal(0, std * 5, (vocab_size, d)),
        "enc.shape": rng.normal(0, std * 5, (N_SHAPES, d)),
        "enc.seg": rng.normal(0, std * 5, (2, d)),
    }
    for l in range(cfg.layers):
        pre = f"enc.{l}."
        for ln in ("ln1", "ln2", "ln3"):
            p[pre + ln + ".g"] = np.ones(d)
            p[pre + ln + ".b"] = np.zeros(d)
        # residual-branch outputs start small so embeddings dominate at init
        for k in CONV_OFFSETS:
            p[pre + f"conv.{k:+d}"] = rng.normal(0, std, (d, d))
        p[pre + "conv.b"] = np.zeros(d)
        for w in ("q", "k", "v"):
            p[pre + "att." + w] = rng.normal(0, lin, (d, d))
        p[pre + "att.o"] = rng.normal(0, std, (d, d))
        p[pre + "ffn.w1"] = rng.normal(0, lin, (d, h))
        p[pre + "ffn.b1"] = np.zeros(h)
        p[pre + "ffn.w2"] = rng.normal(0, std, (h, d))
        p[pre + "ffn.b2"] = np.zeros(d)
    p["enc.lnf.g"] = np.ones(d)
    p["enc.lnf.b"] = np.zeros(d)
    return p


def sinusoid(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class Batch:
    ids: np.ndarray  # (B, L) int
    shapes: np.ndarray  # (B, L) int
    segs: np.ndarray  # (B, L) int
    mask: np.ndarray  # (B, L) float, 1 for real positions


def featurize(vocab: Vocabulary, seq: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and shape classes for one sequence."""
    return np.array(vocab.ids(seq), dtype=np.int64), np.array([token_shape(t) for t in seq], dtype=np.int64)


def pad_batch(rows: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]]) -> Batch:
    """Stack ``(ids, shapes, segs)`` triples into a right-padded batch."""
    L = max(len(r[0]) for r in rows)
    B = len(rows)
    ids = np.zeros((B, L), dtype=np.int64)
    shapes = np.zeros((B, L), dtype=np.int64)
    seg = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L))
    for b, (i, s, g) in enumerate(rows):
        n = len(i)
        ids[b, :n] = i
        shapes[b, :n] = s
        seg[b, :n] = g
        mask[b, :n] = 1.0
    return Batch(ids, shapes, seg, mask)


def make_batch(vocab: Vocabulary, seqs: Sequence[Sequence[str]], segs: Sequence[Sequence[int]] | None = None) -> Batch:
    rows = []
    for b, seq in enumerate(seqs):
        ids, shapes = featurize(vocab, seq)
        seg = np.asarray(segs[b], dtype=np.int64) if segs is not None else np.zeros(len(seq), dtype=np.int64)
        rows.append((ids, shapes, seg))
    return pad_batch(rows)


# ---------------------------------------------------------------------------
# building blocks


def _ln_fwd(x, g, b):
    shape = x.shape
    y, xhat, rstd = K.layernorm_fwd(x.reshape(-1, shape[-1]), g, b, LN_EPS)
    return y.reshape(shape), (xhat, rstd, g)


def _ln_bwd(dy, cache):
    xhat, rstd, g = cache
    shape = dy.shape
    dx, dg, db = K.layernorm_bwd(dy.reshape(-1, shape[-1]), xhat, rstd, g)
    return dx.reshape(shape), dg, db


def _shift(a, k):
    """``out[:, i] = a[:, i + k]``, zero where ``i + k`` falls outside."""
    out = np.zeros_like(a)
    if k > 0:
        out[:, :-k] = a[:, k:]
    elif k < 0:
        out[:, -k:] = a[:, :k]
    else:
        out[:] = a
    return out


def _mm(x, w):
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def _wgrad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def encoder_forward(params: dict, cfg: EncoderConfig, batch: Batch, keep_cache: bool = False):
    """Return contextual embeddings ``(B, L, d)`` and, optionally, the backward cache."""
    d = cfg.dim
    B, L = batch.ids.shape
    m = batch.mask[..., None]
    x = (
        params["enc.tok"][batch.ids]
        + params["enc.shape"][batch.shapes]
        + params["enc.seg"][batch.segs]
        + POS_SCALE * sinusoid(L, d)[None]
    )
    key_bias = (1.0 - batch.mask)[:, None, :] * NEG_INF
    caches = []
    scale = 1.0 / np.sqrt(d)
    for l in range(cfg.layers):
        pre = f"enc.{l}."
        a, ln1 = _ln_fwd(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        am = a * m
        shifted = [_shift(am, k) for k in CONV_OFFSETS]
        pre_c = params[pre + "conv.b"]
        for k, sh in zip(CONV_OFFSETS, shifted):
            pre_c = pre_c + _mm(sh, params[pre + f"conv.{k:+d}"])
        c = np.tanh(pre_c)
        x = x + c

        bq, ln2 = _ln_fwd(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        q = _mm(bq, params[pre + "att.q"])
        k = _mm(bq, params[pre + "att.k"])
        v = _mm(bq, params[pre + "att.v"])
        scores = q @ k.transpose(0, 2, 1) * scale + key_bias
        att = K.softmax(scores)
        ctx = att @ v
        x = x + _mm(ctx, params[pre + "att.o"])

        f, ln3 = _ln_fwd(x, params[pre + "ln3.g"], params[pre + "ln3.b"])
        hid_pre = _mm(f, params[pre + "ffn.w1"]) + params[pre + "ffn.b1"]
        hid = np.maximum(hid_pre, 0.0)
        x = x + _mm(hid, params[pre + "ffn.w2"]) + params[pre + "ffn.b2"]
        if keep_cache:
            caches.append((ln1, shifted, c, ln2, bq, q, k, v, att, ctx, ln3, f, hid_pre, hid))
    h, lnf = _ln_fwd(x, params["enc.lnf.g"], params["enc.lnf.b"])
    if keep_cache:
        return h, (caches, lnf)
    return h, None


def encoder_backward(params: dict, cfg: EncoderConfig, batch: Batch, cache, dh: np.ndarray, grads: dict) -> None:
    """Accumulate parameter gradients for upstream gradient ``dh`` into ``grads``."""
    caches, lnf = cache
    d = cfg.dim
    m = batch.mask[..., None]
    scale = 1.0 / np.sqrt(d)

    def acc(name, g):
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    dx, dg, db = _ln_bwd(dh, lnf)
    acc("enc.lnf.g", dg)
    acc("enc.lnf.b", db)
    for l in reversed(range(cfg.layers)):
        pre = f"enc.{l}."
        ln1, shifted, c, ln2, bq, q, k, v, att, ctx, ln3, f, hid_pre, hid = caches[l]

        # feed-forward
        acc(pre + "ffn.b2", dx.reshape(-1, d).sum(0))
        acc(pre + "ffn.w2", _wgrad(hid, dx))
        dhid = dx @ params[pre + "ffn.w2"].T
        dhid_pre = dhid * (hid_pre > 0)
        acc(pre + "ffn.b1", dhid_pre.reshape(-1, dhid_pre.shape[-1]).sum(0))
        acc(pre + "ffn.w1", _wgrad(f, dhid_pre))
        df = dhid_pre @ params[pre + "ffn.w1"].T
        dpart, dg, db = _ln_bwd(df, ln3)
        acc(pre + "ln3.g", dg)
        acc(pre + "ln3.b", db)
        dx = dx + dpart

        # attention
        acc(pre + "att.o", _wgrad(ctx, dx))
        dctx = dx @ params[pre + "att.o"].T
        datt = dctx @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ dctx
        dscores = att * (datt - (datt * att).sum(-1, keepdims=True))
        dq = dscores @ k * scale
        dk = dscores.transpose(0, 2, 1) @ q * scale
        acc(pre + "att.q", _wgrad(bq, dq))
        acc(pre + "att.k", _wgrad(bq, dk))
        acc(pre + "att.v", _wgrad(bq, dv))
        dbq = dq @ params[pre + "att.q"].T + dk @ params[pre + "att.k"].T + dv @ params[pre + "att.v"].T
        dpart, dg, db = _ln_bwd(dbq, ln2)
        acc(pre + "ln2.g", dg)
        acc(pre + "ln2.b", db)
        dx = dx + dpart

        # local mixing
        dpre = dx * (1.0 - c * c)
        acc(pre + "conv.b", dpre.reshape(-1, d).sum(0))
        dam = np.zeros_like(dpre)
        for k, sh in zip(CONV_OFFSETS, shifted):
            w = params[pre + f"conv.{k:+d}"]
            acc(pre + f"conv.{k:+d}", _wgrad(sh, dpre))
            dam += _shift(_mm(dpre, w.T), -k)
        dpart, dg, db = _ln_bwd(dam * m, ln1)
        acc(pre + "ln1.g", dg)
        acc(pre + "ln1.b", db)
        dx = dx + dpart

    for name, idx, rows in (
        ("enc.tok", batch.ids, params["enc.tok"].shape[0]),
        ("enc.shape", batch.shapes, N_SHAPES),
        ("enc.seg", batch.segs, 2),
    ):
        g = np.zeros((rows, d))
        K.scatter_add_rows(g, idx.reshape(-1), dx.reshape(-1, d))
        acc(name, g)
