"""Case encoders: structured feature mode and hashed-token text mode.

Both modes emit a :class:`HiddenSequence` — a summary vector at position
0 plus per-token hidden vectors — used as the retrieval key and as the
row material for case fusion. Weights are seed-deterministic and frozen
at inference; only the structured summary projection can be unfrozen for
training.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cases import CaseRecord
from .errors import EmptyText
from .preprocess import FEATURE_LENGTH, PreprocessStats, apply_preprocess


class ZeroNormWarning(UserWarning):
    """Raised when a summary vector has zero norm and the unit-basis
    fallback is substituted."""


@dataclass
class HiddenSequence:
    cls: np.ndarray        # (d,)
    tokens: np.ndarray     # (n, d)
    source_len: int

    @property
    def rows(self) -> np.ndarray:
        """Summary row first, token rows after — fusion row block."""
        return np.vstack([self.cls[None, :], self.tokens])


@dataclass
class EncoderParams:
    mode: str              # "structured" or "text"
    d: int
    seed: int
    feature_len: int = FEATURE_LENGTH
    vocab_size: int = 4096
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    weights: dict = field(default_factory=dict)


def init_encoder(
    mode: str = "structured",
    d: int = 64,
    seed: int = 0,
    feature_len: int = FEATURE_LENGTH,
    vocab_size: int = 4096,
    layers: int = 2,
    heads: int = 4,
    max_len: int = 128,
) -> EncoderParams:
    """Initialize encoder weights, uniform in [-1/sqrt(d), 1/sqrt(d)]."""
    if mode not in ("structured", "text"):
        raise ValueError(f"unknown encoder mode {mode!r}")
    if mode == "text" and d % heads != 0:
        raise ValueError(f"d={d} must be divisible by heads={heads}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d)

    def uniform(*shape):
        return rng.uniform(-scale, scale, size=shape)

    weights: dict = {}
    if mode == "structured":
        weights["projection"] = uniform(d, feature_len)
        weights["directions"] = uniform(feature_len, d)
    else:
        weights["embedding"] = uniform(vocab_size, d)
        weights["cls_embedding"] = uniform(d)
        for layer in range(layers):
            p = f"l{layer}."
            for name in ("wq", "wk", "wv", "wo"):
                weights[p + name] = uniform(d, d)
            weights[p + "ln1_g"] = np.ones(d)
            weights[p + "ln1_b"] = np.zeros(d)
            weights[p + "ln2_g"] = np.ones(d)
            weights[p + "ln2_b"] = np.zeros(d)
            weights[p + "ff1"] = uniform(4 * d, d)
            weights[p + "ff1_b"] = np.zeros(4 * d)
            weights[p + "ff2"] = uniform(d, 4 * d)
            weights[p + "ff2_b"] = np.zeros(d)

    return EncoderParams(
        mode=mode, d=d, seed=seed, feature_len=feature_len,
        vocab_size=vocab_size, layers=layers, heads=heads, max_len=max_len,
        weights=weights,
    )


# --------------------------------------------------------------------------
# Text mode
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FNV_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit — the stated stable token hash."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _FNV_MASK
    return h


def tokenize(text: str, vocab_size: int = 4096, max_len: int = 128) -> list[int]:
    """Lowercase, split on whitespace/punctuation boundaries, hash each
    token into the fixed vocabulary. Truncates to max_len - 1 ids (one
    position is reserved for the summary slot)."""
    if not text or not text.strip():
        raise EmptyText("cannot tokenize empty text")
    tokens = _TOKEN_RE.findall(text.lower())
    ids = [fnv1a64(tok.encode("utf-8")) % vocab_size for tok in tokens]
    return ids[: max_len - 1]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    dim = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / d)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def _layernorm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mean) / np.sqrt(var + 1e-6) + bias


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _text_forward(
    ids: list[int], params: EncoderParams, attn_sink: Optional[list] = None
) -> np.ndarray:
    w = params.weights
    d, h = params.d, params.heads
    dh = d // h
    x = np.vstack([w["cls_embedding"][None, :], w["embedding"][ids]])
    x = x + sinusoidal_positions(x.shape[0], d)
    n = x.shape[0]

    for layer in range(params.layers):
        p = f"l{layer}."
        normed = _layernorm(x, w[p + "ln1_g"], w[p + "ln1_b"])
        q = (normed @ w[p + "wq"].T).reshape(n, h, dh)
        k = (normed @ w[p + "wk"].T).reshape(n, h, dh)
        v = (normed @ w[p + "wv"].T).reshape(n, h, dh)
        # (h, n, n) attention, rows normalized per query position
        scores = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(dh)
        attn = _softmax_rows(scores)
        if attn_sink is not None:
            attn_sink.append(attn)
        mixed = np.einsum("hqk,khd->qhd", attn, v).reshape(n, d)
        x = x + mixed @ w[p + "wo"].T

        normed = _layernorm(x, w[p + "ln2_g"], w[p + "ln2_b"])
        hidden = np.maximum(normed @ w[p + "ff1"].T + w[p + "ff1_b"], 0.0)
        x = x + hidden @ w[p + "ff2"].T + w[p + "ff2_b"]

    return x


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def encode(
    record: CaseRecord,
    params: EncoderParams,
    stats: Optional[PreprocessStats] = None,
    attn_sink: Optional[list] = None,
) -> HiddenSequence:
    """Encode a case record into a hidden sequence. Pure and deterministic
    for fixed params."""
    if params.mode == "structured":
        if stats is None:
            raise ValueError("structured mode requires preprocessing stats")
        x = apply_preprocess(record.case, stats)
        return encode_features(x, params)

    ids = tokenize(record.narrative, params.vocab_size, params.max_len)
    hidden = _text_forward(ids, params, attn_sink)
    return HiddenSequence(cls=hidden[0], tokens=hidden[1:], source_len=len(ids))


def encode_features(x: np.ndarray, params: EncoderParams) -> HiddenSequence:
    """Structured-mode core: per-slot tokens (scalar times a learned
    direction) plus a linear summary projection of the whole vector."""
    tokens = x[:, None] * params.weights["directions"]
    cls = params.weights["projection"] @ x
    return HiddenSequence(cls=cls, tokens=tokens, source_len=x.shape[0])


def embed_cls(
    record: CaseRecord,
    params: EncoderParams,
    stats: Optional[PreprocessStats] = None,
) -> np.ndarray:
    """L2-normalized summary vector — the retrieval key."""
    cls = encode(record, params, stats).cls
    return normalize_cls(cls)


def normalize_cls(cls: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(cls))
    if norm == 0.0:
        warnings.warn("zero-norm summary vector; substituting basis vector",
                      ZeroNormWarning)
        out = np.zeros_like(cls)
        out[0] = 1.0
        return out
    return cls / norm
